#include "whatif/eval.hpp"

#include <cmath>
#include <future>
#include <numeric>

#include "whatif/error.hpp"
#include "whatif/rng.hpp"

namespace whatif {

using json = nlohmann::json;

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

double fold_accuracy(const Dataset& train_part, const Dataset& test_part, const KFoldOptions& options,
                     std::size_t fold) {
  bool seen[2] = {false, false};
  for (const auto& w : train_part.windows) seen[static_cast<int>(*w.label)] = true;
  if (!seen[0] || !seen[1]) {
    throw Error(ErrorCode::DegenerateFold, "training portion of fold " + std::to_string(fold + 1) +
                                               " lacks a class");
  }
  SmoteConfig smote = options.smote;
  smote.seed = substream_seed(options.seed, "eval.kfold.smote", fold);
  TcnConfig tcn = options.tcn;
  tcn.seed = substream_seed(options.seed, "eval.kfold.tcn", fold);
  const Dataset balanced = smote_oversample(train_part, smote);
  const auto [model, report] = train(balanced, tcn);
  const auto predicted = predict(model, test_part.windows);
  const auto truth = labels_of(test_part);
  const auto cm = confusion(truth, predicted);
  return 100.0 * static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
}

}  // namespace

ConfusionMatrix confusion(std::span<const Label> y_true, std::span<const Label> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorCode::ShapeError, "confusion: " + std::to_string(y_true.size()) + " truths vs " +
                                           std::to_string(y_pred.size()) + " predictions");
  }
  if (y_true.empty()) throw Error(ErrorCode::EmptyInput, "confusion of empty vectors");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool actual = y_true[i] == Label::Anomalous;
    const bool predicted = y_pred[i] == Label::Anomalous;
    if (actual && predicted) ++cm.tp;
    else if (!actual && predicted) ++cm.fp;
    else if (!actual) ++cm.tn;
    else ++cm.fn;
  }
  return cm;
}

MetricReport metrics(const ConfusionMatrix& cm) {
  MetricReport r;
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  // With no actual anomalies every positive-class metric is non-applicable,
  // including precision when the model raised false alarms.
  if (cm.tp + cm.fn == 0) return r;
  r.precision = ratio(cm.tp, cm.tp + cm.fp);
  r.recall = ratio(cm.tp, cm.tp + cm.fn);
  if (r.precision && r.recall && *r.precision + *r.recall > 0.0) {
    r.f_score = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  } else if (r.precision && r.recall) {
    r.f_score = 0.0;
  }
  const auto specificity = ratio(cm.tn, cm.tn + cm.fp);
  if (r.recall && specificity) r.g_score = std::sqrt(*r.recall * *specificity);
  return r;
}

KFoldReport summarize_folds(std::vector<double> fold_accuracy) {
  if (fold_accuracy.empty()) throw Error(ErrorCode::EmptyInput, "no folds");
  KFoldReport r;
  r.fold_accuracy = std::move(fold_accuracy);
  const double n = static_cast<double>(r.fold_accuracy.size());
  r.mean = std::accumulate(r.fold_accuracy.begin(), r.fold_accuracy.end(), 0.0) / n;
  double acc = 0.0;
  for (double a : r.fold_accuracy) acc += (a - r.mean) * (a - r.mean);
  r.std = std::sqrt(acc / n);
  return r;
}

std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::ConfigError, "k-fold needs k >= 2");
  if (n < k) throw Error(ErrorCode::InsufficientData, "fewer windows than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "eval.kfold.shuffle");
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return folds;
}

KFoldReport kfold(const Dataset& ds, const KFoldOptions& options) {
  labels_of(ds);
  const auto folds = kfold_partition(ds.size(), options.folds, options.seed);

  auto run_fold = [&](std::size_t f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    }
    return fold_accuracy(subset(ds, train_idx), subset(ds, folds[f]), options, f);
  };

  std::vector<double> accuracies(folds.size());
  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  for (std::size_t start = 0; start < folds.size(); start += jobs) {
    const std::size_t stop = std::min(folds.size(), start + jobs);
    if (jobs == 1) {
      accuracies[start] = run_fold(start);
      continue;
    }
    std::vector<std::future<double>> pending;
    for (std::size_t f = start; f < stop; ++f) pending.push_back(std::async(std::launch::async, run_fold, f));
    for (std::size_t f = start; f < stop; ++f) accuracies[f] = pending[f - start].get();
  }
  return summarize_folds(std::move(accuracies));
}

json to_json(const ConfusionMatrix& cm) {
  return {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
}

json to_json(const MetricReport& r) {
  return {{"accuracy", optional_json(r.accuracy)},
          {"precision", optional_json(r.precision)},
          {"recall", optional_json(r.recall)},
          {"f_score", optional_json(r.f_score)},
          {"g_score", optional_json(r.g_score)}};
}

json to_json(const KFoldReport& r) {
  return {{"fold_accuracy", r.fold_accuracy}, {"mean", r.mean}, {"std", r.std}};
}

}  // namespace whatif
