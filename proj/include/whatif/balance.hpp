#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "whatif/data.hpp"

namespace whatif {

struct SmoteConfig {
  std::size_t k_neighbors = 5;
  double target_ratio = 1.0;  // minority / majority after oversampling
  std::uint64_t seed = 0;
};

/// The k nearest other points to points[query_index] by Euclidean distance,
/// ties broken by lower index.
std::vector<std::size_t> knn_neighbors(std::span<const std::vector<double>> points,
                                       std::size_t query_index, std::size_t k);

/// Point on the segment from `origin` to `neighbor` at fraction `gap`.
/// Exact at gap 0 and 1 and bounded by the parents coordinate-wise.
std::vector<double> interpolate(std::span<const double> origin, std::span<const double> neighbor,
                                double gap);

/// SMOTE over flattened raw windows. Synthetic windows are labeled
/// Anomalous and appended with fresh ids until the anomalous count reaches
/// ceil(target_ratio * healthy_count).
Dataset smote_oversample(const Dataset& ds, const SmoteConfig& cfg);

}  // namespace whatif
