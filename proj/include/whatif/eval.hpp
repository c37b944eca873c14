#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "whatif/balance.hpp"
#include "whatif/data.hpp"
#include "whatif/tcn.hpp"

namespace whatif {

/// Anomalous is the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

// nullopt marks a metric whose denominator is zero ("---" in report tables).
struct MetricReport {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f_score;
  std::optional<double> g_score;
};

struct KFoldReport {
  std::vector<double> fold_accuracy;  // percent
  double mean = 0.0;
  double std = 0.0;  // population
};

ConfusionMatrix confusion(std::span<const Label> y_true, std::span<const Label> y_pred);
MetricReport metrics(const ConfusionMatrix& cm);

/// Mean and population std of per-fold accuracies.
KFoldReport summarize_folds(std::vector<double> fold_accuracy);

/// Seeded shuffle of 0..n-1 split into k near-equal folds (sizes differ by at most one).
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed);

struct KFoldOptions {
  std::size_t folds = 5;
  TcnConfig tcn;
  SmoteConfig smote;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// For each fold: SMOTE-balance the remaining folds, train, test on the held-out fold.
KFoldReport kfold(const Dataset& ds, const KFoldOptions& options);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const KFoldReport& report);

}  // namespace whatif
