#include "whatif/cf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace whatif {

using json = nlohmann::json;

namespace {

double normalized_distance(const Normalizer& n, const Window& a, const Window& b) {
  const auto fa = n.flatten(a);
  const auto fb = n.flatten(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) acc += (fa[i] - fb[i]) * (fa[i] - fb[i]);
  return std::sqrt(acc);
}

void copy_channel(const Window& from, Window& to, std::size_t channel) {
  const auto src = from.values.row(channel);
  std::copy(src.begin(), src.end(), to.values.row(channel).begin());
}

std::string format_amplitude(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

}  // namespace

Explainer::Explainer(std::shared_ptr<const TcnModel> model, std::array<std::optional<KdTree>, 2> trees,
                     std::map<std::size_t, Window> distractors, std::vector<std::string> channel_names)
    : model_(std::move(model)),
      trees_(std::move(trees)),
      distractors_(std::move(distractors)),
      channel_names_(std::move(channel_names)) {}

const KdTree& Explainer::tree(Label cls) const {
  const auto& t = trees_[static_cast<std::size_t>(cls)];
  if (!t) throw Error(ErrorCode::EmptyClassIndex, "no distractors indexed for class " +
                                                      std::to_string(static_cast<int>(cls)));
  return *t;
}

std::size_t Explainer::index_size(Label cls) const {
  const auto& t = trees_[static_cast<std::size_t>(cls)];
  return t ? t->size() : 0;
}

const Window& Explainer::distractor(std::size_t id) const {
  const auto it = distractors_.find(id);
  if (it == distractors_.end()) throw Error(ErrorCode::NotFound, "no distractor " + std::to_string(id));
  return it->second;
}

Explainer fit_explainer(std::shared_ptr<const TcnModel> model, const Dataset& train, KdTree::Options options) {
  const auto truth = labels_of(train);
  const auto predicted = predict(*model, train.windows);

  std::array<std::vector<std::vector<double>>, 2> points;
  std::array<std::vector<std::size_t>, 2> ids;
  std::map<std::size_t, Window> store;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (predicted[i] != truth[i]) continue;
    const auto cls = static_cast<std::size_t>(truth[i]);
    points[cls].push_back(model->normalizer.flatten(train.windows[i]));
    ids[cls].push_back(train.windows[i].id);
    store.emplace(train.windows[i].id, train.windows[i]);
  }
  std::array<std::optional<KdTree>, 2> trees;
  for (std::size_t cls = 0; cls < 2; ++cls) {
    if (points[cls].empty()) {
      throw Error(ErrorCode::EmptyClassIndex,
                  "model classifies no training window of class " + std::to_string(cls) + " correctly");
    }
    trees[cls].emplace(std::move(points[cls]), std::move(ids[cls]), options);
  }
  return Explainer(std::move(model), std::move(trees), std::move(store), train.channel_names);
}

Counterfactual greedy_counterfactual(const Explainer& explainer, const CounterfactualQuery& query) {
  const TcnModel& model = explainer.model();
  const Window& instance = query.instance;
  const std::size_t channels = instance.channels();
  for (std::size_t c : query.locked_channels) {
    if (c >= channels) throw Error(ErrorCode::RangeError, "locked channel " + std::to_string(c) + " does not exist");
  }

  Counterfactual result;
  result.target = query.target;
  result.window = instance;
  result.probabilities_before = forward(model, instance);
  if (argmax_label(result.probabilities_before) == query.target) {
    result.probabilities_after = result.probabilities_before;
    return result;
  }

  std::vector<std::size_t> unlocked;
  for (std::size_t c = 0; c < channels; ++c) {
    if (!query.locked_channels.contains(c)) unlocked.push_back(c);
  }
  const std::vector<std::size_t> locked(query.locked_channels.begin(), query.locked_channels.end());
  if (unlocked.empty()) {
    throw NoCounterfactualError("every channel is locked; unlock at least one channel", locked, 0);
  }

  const KdTree& tree = explainer.tree(query.target);
  const std::size_t wanted = std::min(std::max<std::size_t>(query.num_distractors, 1), tree.size());
  const auto neighbors = tree.query(model.normalizer.flatten(instance), wanted);
  const auto target_index = static_cast<std::size_t>(query.target);

  for (const auto& neighbor : neighbors) {
    const Window& source = explainer.distractor(neighbor.id);
    Window current = instance;
    std::vector<std::size_t> remaining = unlocked;
    std::vector<std::size_t> substituted;
    while (!remaining.empty()) {
      std::size_t best_pos = 0;
      double best_score = -1.0;
      std::vector<double> best_probs;
      for (std::size_t pos = 0; pos < remaining.size(); ++pos) {
        Window trial = current;
        copy_channel(source, trial, remaining[pos]);
        auto probs = forward(model, trial);
        if (probs[target_index] > best_score) {
          best_score = probs[target_index];
          best_pos = pos;
          best_probs = std::move(probs);
        }
      }
      copy_channel(source, current, remaining[best_pos]);
      substituted.push_back(remaining[best_pos]);
      remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_pos));
      if (argmax_label(best_probs) == query.target) {
        result.window = std::move(current);
        result.substituted_channels = std::move(substituted);
        result.distractor_id = neighbor.id;
        result.probabilities_after = std::move(best_probs);
        result.distance = normalized_distance(model.normalizer, instance, result.window);
        return result;
      }
    }
  }
  throw NoCounterfactualError("no distractor among " + std::to_string(neighbors.size()) +
                                  " flips the prediction; unlock channels or raise num_distractors",
                              locked, neighbors.size());
}

Envelope envelope(std::span<const double> series) {
  Envelope e;
  if (series.empty()) return e;
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  e.min = *lo;
  e.max = *hi;
  e.peak = std::max(std::abs(e.min), std::abs(e.max));
  return e;
}

WhatIfReport counterfactual_report(const Counterfactual& cf, const Window& original,
                                   const std::vector<std::string>& channel_names) {
  WhatIfReport report;
  report.distance = cf.distance;
  report.sparsity = original.channels() == 0
                        ? 0.0
                        : static_cast<double>(cf.substituted_channels.size()) /
                              static_cast<double>(original.channels());
  for (std::size_t c : cf.substituted_channels) {
    ChannelChange change;
    change.channel = c;
    change.name = c < channel_names.size() ? channel_names[c] : "channel_" + std::to_string(c);
    change.original = envelope(original.values.row(c));
    change.counterfactual = envelope(cf.window.values.row(c));
    report.narrative.push_back(change.name + ": amplitude envelope ±" + format_amplitude(change.original.peak) +
                               " -> ±" + format_amplitude(change.counterfactual.peak));
    report.changes.push_back(std::move(change));
  }
  return report;
}

json to_json(const Counterfactual& cf) {
  json values = json::array();
  for (std::size_t c = 0; c < cf.window.channels(); ++c) {
    values.push_back(std::vector<double>(cf.window.values.row(c).begin(), cf.window.values.row(c).end()));
  }
  return {{"window_id", cf.window.id},
          {"target_class", static_cast<int>(cf.target)},
          {"substituted_channels", cf.substituted_channels},
          {"distractor_id", cf.distractor_id ? json(*cf.distractor_id) : json(nullptr)},
          {"probabilities_before", cf.probabilities_before},
          {"probabilities_after", cf.probabilities_after},
          {"distance", cf.distance},
          {"values", std::move(values)}};
}

json to_json(const WhatIfReport& report) {
  json changes = json::array();
  for (const auto& c : report.changes) {
    changes.push_back({{"channel", c.channel},
                       {"name", c.name},
                       {"original", {{"min", c.original.min}, {"max", c.original.max}, {"peak", c.original.peak}}},
                       {"counterfactual",
                        {{"min", c.counterfactual.min}, {"max", c.counterfactual.max}, {"peak", c.counterfactual.peak}}}});
  }
  return {{"changes", std::move(changes)},
          {"distance", report.distance},
          {"sparsity", report.sparsity},
          {"narrative", report.narrative}};
}

}  // namespace whatif
