#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace whatif {

/// Exact k-d tree over fixed-dimension points with integer payloads.
///
/// Built by median split with the split dimension cycling by depth. Points
/// equal to the split value go left, so left <= split < right holds at every
/// node. Queries return the m nearest points by Euclidean distance, ordered
/// by (distance, id).
class KdTree {
 public:
  struct Options {
    // Above this dimension queries use a linear scan; results are identical.
    std::size_t brute_force_above_dim = 512;
  };

  struct Neighbor {
    std::size_t id = 0;
    double distance = 0.0;
    bool operator==(const Neighbor&) const = default;
  };

  struct QueryStats {
    std::size_t nodes_visited = 0;
    std::size_t distance_evaluations = 0;
  };

  struct Node {
    std::size_t point = 0;  // row into the point store
    std::size_t split_dim = 0;
    double split_value = 0.0;
    std::ptrdiff_t left = -1;
    std::ptrdiff_t right = -1;
  };

  KdTree(std::vector<std::vector<double>> points, std::vector<std::size_t> ids, Options options);
  KdTree(std::vector<std::vector<double>> points, std::vector<std::size_t> ids)
      : KdTree(std::move(points), std::move(ids), Options{}) {}

  std::vector<Neighbor> query(std::span<const double> q, std::size_t m, QueryStats* stats = nullptr) const;

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dimension() const noexcept { return dim_; }
  std::size_t depth() const;
  bool uses_linear_scan() const noexcept { return dim_ > options_.brute_force_above_dim; }

  std::span<const Node> nodes() const noexcept { return nodes_; }
  std::ptrdiff_t root() const noexcept { return root_; }
  std::size_t id_of(std::size_t point) const { return ids_[point]; }
  std::span<const double> point(std::size_t row) const { return {store_.data() + row * dim_, dim_}; }

 private:
  std::ptrdiff_t build(std::span<std::size_t> rows, std::size_t depth);
  double squared_distance(std::span<const double> q, std::size_t row) const;

  std::size_t dim_ = 0;
  std::vector<double> store_;
  std::vector<std::size_t> ids_;
  std::vector<Node> nodes_;
  std::ptrdiff_t root_ = -1;
  Options options_;
};

}  // namespace whatif
