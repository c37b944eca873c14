#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "whatif/data.hpp"
#include "whatif/error.hpp"
#include "whatif/kdtree.hpp"
#include "whatif/tcn.hpp"

namespace whatif {

/// Distractor index: one k-d tree per class over the training windows the
/// model classifies correctly, in normalized flattened space.
class Explainer {
 public:
  Explainer(std::shared_ptr<const TcnModel> model, std::array<std::optional<KdTree>, 2> trees,
            std::map<std::size_t, Window> distractors, std::vector<std::string> channel_names);

  const TcnModel& model() const noexcept { return *model_; }
  std::shared_ptr<const TcnModel> model_ptr() const noexcept { return model_; }
  const KdTree& tree(Label cls) const;
  std::size_t index_size(Label cls) const;
  const Window& distractor(std::size_t id) const;
  const std::vector<std::string>& channel_names() const noexcept { return channel_names_; }

 private:
  std::shared_ptr<const TcnModel> model_;
  std::array<std::optional<KdTree>, 2> trees_;
  std::map<std::size_t, Window> distractors_;
  std::vector<std::string> channel_names_;
};

struct CounterfactualQuery {
  Window instance;
  Label target = Label::Healthy;
  std::size_t num_distractors = 3;
  std::set<std::size_t> locked_channels;
};

struct Counterfactual {
  Window window;  // V'
  std::vector<std::size_t> substituted_channels;  // in substitution order
  std::optional<std::size_t> distractor_id;
  std::vector<double> probabilities_before;
  std::vector<double> probabilities_after;
  double distance = 0.0;  // Euclidean, normalized space
  Label target = Label::Healthy;
};

/// Raised when no distractor flips the class under the requested locks.
class NoCounterfactualError : public Error {
 public:
  NoCounterfactualError(const std::string& message, std::vector<std::size_t> locked,
                        std::size_t distractors_tried)
      : Error(ErrorCode::NoCounterfactualFound, message),
        locked_channels(std::move(locked)),
        distractors_tried(distractors_tried) {}

  std::vector<std::size_t> locked_channels;
  std::size_t distractors_tried;
};

Explainer fit_explainer(std::shared_ptr<const TcnModel> model, const Dataset& train,
                        KdTree::Options options = {});

/// Sequential greedy channel substitution from the nearest target-class
/// distractors. Each step substitutes the unlocked channel that maximizes the
/// target probability (ties to the lower channel index) until the model
/// predicts the target class.
Counterfactual greedy_counterfactual(const Explainer& explainer, const CounterfactualQuery& query);

struct Envelope {
  double min = 0.0;
  double max = 0.0;
  double peak = 0.0;  // max |x|
};

Envelope envelope(std::span<const double> series);

struct ChannelChange {
  std::size_t channel = 0;
  std::string name;
  Envelope original;
  Envelope counterfactual;
};

struct WhatIfReport {
  std::vector<ChannelChange> changes;
  double distance = 0.0;
  double sparsity = 0.0;  // substituted / total channels
  std::vector<std::string> narrative;
};

WhatIfReport counterfactual_report(const Counterfactual& cf, const Window& original,
                                   const std::vector<std::string>& channel_names);

nlohmann::json to_json(const Counterfactual& cf);
nlohmann::json to_json(const WhatIfReport& report);

}  // namespace whatif
