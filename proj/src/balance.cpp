#include "whatif/balance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "whatif/error.hpp"
#include "whatif/rng.hpp"

namespace whatif {

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::vector<std::size_t> knn_neighbors(std::span<const std::vector<double>> points,
                                       std::size_t query_index, std::size_t k) {
  if (k >= points.size()) {
    throw Error(ErrorCode::InsufficientMinority, "need more than " + std::to_string(k) +
                                                     " points, have " + std::to_string(points.size()));
  }
  if (query_index >= points.size()) throw Error(ErrorCode::RangeError, "query index out of range");

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(points.size() - 1);
  const auto& query = points[query_index];
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i == query_index) continue;
    if (points[i].size() != query.size()) throw Error(ErrorCode::ShapeError, "ragged point set");
    scored.emplace_back(squared_distance(query, points[i]), i);
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = scored[i].second;
  return out;
}

std::vector<double> interpolate(std::span<const double> origin, std::span<const double> neighbor,
                                double gap) {
  std::vector<double> out(origin.size());
  for (std::size_t i = 0; i < origin.size(); ++i) out[i] = std::lerp(origin[i], neighbor[i], gap);
  return out;
}

Dataset smote_oversample(const Dataset& ds, const SmoteConfig& cfg) {
  if (cfg.k_neighbors < 1) throw Error(ErrorCode::ConfigError, "k_neighbors must be >= 1");
  if (!(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "target_ratio must lie in (0, 1]");
  }

  std::vector<std::size_t> minority;
  std::size_t majority_count = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& label = ds.windows[i].label;
    if (!label) throw Error(ErrorCode::DegenerateLabels, "SMOTE needs a labeled dataset");
    if (*label == Label::Anomalous) {
      minority.push_back(i);
    } else {
      ++majority_count;
    }
  }

  const auto target = static_cast<std::size_t>(
      std::ceil(cfg.target_ratio * static_cast<double>(majority_count)));
  Dataset out = ds;
  if (minority.size() >= target) return out;
  if (minority.size() <= cfg.k_neighbors) {
    throw Error(ErrorCode::InsufficientMinority,
                "minority class has " + std::to_string(minority.size()) + " windows, k_neighbors is " +
                    std::to_string(cfg.k_neighbors));
  }

  std::vector<std::vector<double>> flat;
  flat.reserve(minority.size());
  for (std::size_t i : minority) {
    const auto values = ds.windows[i].values.flat();
    flat.emplace_back(values.begin(), values.end());
  }
  std::vector<std::vector<std::size_t>> neighbors(flat.size());
  for (std::size_t m = 0; m < flat.size(); ++m) neighbors[m] = knn_neighbors(flat, m, cfg.k_neighbors);

  std::size_t next_id = 0;
  for (const auto& w : ds.windows) next_id = std::max(next_id, w.id + 1);

  const std::size_t needed = target - minority.size();
  const std::size_t rows = ds.windows[minority.front()].channels();
  const std::size_t cols = ds.windows[minority.front()].timesteps();
  out.windows.reserve(ds.size() + needed);
  for (std::size_t s = 0; s < needed; ++s) {
    // Independent substream per sample keeps results order-free.
    Rng rng = make_rng(cfg.seed, "balance.smote", s);
    const std::size_t origin = s % flat.size();
    const std::size_t neighbor = neighbors[origin][uniform_index(rng, cfg.k_neighbors)];
    const double gap = uniform01(rng);
    const auto point = interpolate(flat[origin], flat[neighbor], gap);

    Window w;
    w.id = next_id + s;
    w.label = Label::Anomalous;
    w.values = Matrix(rows, cols);
    std::copy(point.begin(), point.end(), w.values.flat().begin());
    out.windows.push_back(std::move(w));
  }
  return out;
}

}  // namespace whatif
