#include "whatif/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "whatif/error.hpp"

namespace whatif {

namespace {

struct Candidate {
  double dist2;
  std::size_t id;
  std::size_t row;
};

// Max-heap on (distance, id): the top is the current worst kept candidate.
struct WorseFirst {
  bool operator()(const Candidate& a, const Candidate& b) const {
    return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.id < b.id;
  }
};

using CandidateHeap = std::priority_queue<Candidate, std::vector<Candidate>, WorseFirst>;

void offer(CandidateHeap& heap, std::size_t m, const Candidate& c) {
  if (heap.size() < m) {
    heap.push(c);
  } else if (WorseFirst{}(c, heap.top())) {
    heap.pop();
    heap.push(c);
  }
}

}  // namespace

KdTree::KdTree(std::vector<std::vector<double>> points, std::vector<std::size_t> ids, Options options)
    : options_(options) {
  if (points.empty()) throw Error(ErrorCode::EmptyIndex, "cannot build a k-d tree over no points");
  if (ids.empty()) {
    ids.resize(points.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
  }
  if (ids.size() != points.size()) throw Error(ErrorCode::ShapeError, "ids and points differ in length");
  dim_ = points.front().size();
  if (dim_ == 0) throw Error(ErrorCode::ShapeError, "zero-dimensional points");
  store_.reserve(points.size() * dim_);
  for (const auto& p : points) {
    if (p.size() != dim_) throw Error(ErrorCode::ShapeError, "points differ in dimension");
    store_.insert(store_.end(), p.begin(), p.end());
  }
  ids_ = std::move(ids);
  std::vector<std::size_t> rows(ids_.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  nodes_.reserve(rows.size());
  root_ = build(rows, 0);
}

std::ptrdiff_t KdTree::build(std::span<std::size_t> rows, std::size_t depth) {
  if (rows.empty()) return -1;
  const std::size_t dim = depth % dim_;
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    const double va = store_[a * dim_ + dim];
    const double vb = store_[b * dim_ + dim];
    return va != vb ? va < vb : ids_[a] < ids_[b];
  });
  // Move the median to the end of its run of equal values so the right
  // subtree holds only strictly greater coordinates.
  std::size_t mid = (rows.size() - 1) / 2;
  const double split = store_[rows[mid] * dim_ + dim];
  while (mid + 1 < rows.size() && store_[rows[mid + 1] * dim_ + dim] == split) ++mid;

  const auto index = static_cast<std::ptrdiff_t>(nodes_.size());
  nodes_.push_back(Node{rows[mid], dim, split, -1, -1});
  const auto left = build(rows.first(mid), depth + 1);
  const auto right = build(rows.subspan(mid + 1), depth + 1);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

double KdTree::squared_distance(std::span<const double> q, std::size_t row) const {
  const double* p = store_.data() + row * dim_;
  double acc = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    const double d = q[j] - p[j];
    acc += d * d;
  }
  return acc;
}

std::size_t KdTree::depth() const {
  std::size_t best = 0;
  std::vector<std::pair<std::ptrdiff_t, std::size_t>> stack{{root_, 1}};
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    if (node < 0) continue;
    best = std::max(best, d);
    stack.emplace_back(nodes_[static_cast<std::size_t>(node)].left, d + 1);
    stack.emplace_back(nodes_[static_cast<std::size_t>(node)].right, d + 1);
  }
  return best;
}

std::vector<KdTree::Neighbor> KdTree::query(std::span<const double> q, std::size_t m, QueryStats* stats) const {
  if (q.size() != dim_) throw Error(ErrorCode::ShapeError, "query dimension mismatch");
  if (m > size()) {
    throw Error(ErrorCode::InsufficientDistractors, "requested " + std::to_string(m) + " neighbours from " +
                                                        std::to_string(size()) + " points");
  }
  QueryStats local;
  CandidateHeap heap;
  if (m > 0 && uses_linear_scan()) {
    for (std::size_t row = 0; row < size(); ++row) {
      ++local.nodes_visited;
      ++local.distance_evaluations;
      offer(heap, m, Candidate{squared_distance(q, row), ids_[row], row});
    }
  } else if (m > 0) {
    // Iterative depth-first search, near side first.
    struct Pending {
      std::ptrdiff_t node;
      double bound2;  // lower bound on squared distance to anything in the subtree
    };
    std::vector<Pending> stack{{root_, 0.0}};
    while (!stack.empty()) {
      const Pending top = stack.back();
      stack.pop_back();
      if (top.node < 0) continue;
      if (heap.size() == m && top.bound2 > heap.top().dist2) continue;
      const Node& node = nodes_[static_cast<std::size_t>(top.node)];
      ++local.nodes_visited;
      ++local.distance_evaluations;
      offer(heap, m, Candidate{squared_distance(q, node.point), ids_[node.point], node.point});

      const double diff = q[node.split_dim] - node.split_value;
      const std::ptrdiff_t near = diff <= 0.0 ? node.left : node.right;
      const std::ptrdiff_t far = diff <= 0.0 ? node.right : node.left;
      stack.push_back({far, std::max(top.bound2, diff * diff)});
      stack.push_back({near, top.bound2});
    }
  }
  if (stats) {
    stats->nodes_visited += local.nodes_visited;
    stats->distance_evaluations += local.distance_evaluations;
  }
  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = Neighbor{heap.top().id, std::sqrt(heap.top().dist2)};
    heap.pop();
  }
  return out;
}

}  // namespace whatif
