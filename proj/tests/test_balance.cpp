#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "whatif/balance.hpp"
#include "whatif/error.hpp"

using namespace whatif;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected whatif::Error");
  return ErrorCode::NotFound;
}

Dataset imbalanced(std::size_t healthy, std::size_t anomalous, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.channel_names = {"h", "v"};
  ds.window_len = 6;
  for (std::size_t i = 0; i < healthy + anomalous; ++i) {
    Window w;
    w.id = 2 * i + 1;
    const bool bad = i >= healthy;
    w.label = bad ? Label::Anomalous : Label::Healthy;
    w.values = Matrix(2, 6);
    for (double& x : w.values.flat()) x = noise(gen) * (bad ? 3.0 : 1.0);
    ds.windows.push_back(w);
  }
  return ds;
}

std::vector<std::vector<double>> flat_minority(const Dataset& ds) {
  std::vector<std::vector<double>> out;
  for (const auto& w : ds.windows) {
    if (*w.label == Label::Anomalous) out.emplace_back(w.values.flat().begin(), w.values.flat().end());
  }
  return out;
}

}  // namespace

TEST_CASE("knn_neighbors") {
  const std::vector<std::vector<double>> line{{0}, {1}, {3}, {7}};
  CHECK(knn_neighbors(line, 0, 2) == std::vector<std::size_t>{1, 2});

  const std::vector<std::vector<double>> dup{{5, 5}, {0, 0}, {5, 5}, {4, 4}};
  CHECK(knn_neighbors(dup, 0, 1) == std::vector<std::size_t>{2});

  const std::vector<std::vector<double>> tie{{0}, {-1}, {1}};
  CHECK(knn_neighbors(tie, 0, 1) == std::vector<std::size_t>{1});

  CHECK(code_of([&] { knn_neighbors(line, 0, 4); }) == ErrorCode::InsufficientMinority);

  std::mt19937_64 gen(17);
  std::uniform_int_distribution<int> coord(-4, 4);  // small grid forces ties
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> pts(2 + gen() % 99, std::vector<double>(3));
    for (auto& p : pts) {
      for (double& x : p) x = coord(gen);
    }
    const std::size_t q = gen() % pts.size();
    const std::size_t k = 1 + gen() % (pts.size() - 1);
    CHECK(knn_neighbors(pts, q, k) == oracle::knn(pts, q, k));
  }
}

TEST_CASE("interpolate endpoints and betweenness") {
  const std::vector<double> a{1.0, -2.0, 0.1, 1e300};
  const std::vector<double> b{3.0, -7.0, 0.3, -1e300};
  CHECK(interpolate(a, b, 0.0) == a);
  CHECK(interpolate(a, b, 1.0) == b);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const auto p = interpolate(a, b, u(gen));
    for (std::size_t j = 0; j < a.size(); ++j) {
      CHECK(p[j] >= std::min(a[j], b[j]));
      CHECK(p[j] <= std::max(a[j], b[j]));
    }
  }
}

TEST_CASE("smote_oversample") {
  const Dataset ds = imbalanced(90, 10, 4);
  SmoteConfig cfg;
  cfg.seed = 12;
  const Dataset out = smote_oversample(ds, cfg);

  SUBCASE("counts reach the target and majority is untouched") {
    std::size_t healthy = 0, anomalous = 0;
    for (const auto& w : out.windows) (*w.label == Label::Healthy ? healthy : anomalous)++;
    CHECK(healthy == 90);
    CHECK(anomalous == 90);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(out.windows[i] == ds.windows[i]);
    out.validate();
  }
  SUBCASE("ratio below one uses the ceiling") {
    SmoteConfig half = cfg;
    half.target_ratio = 0.35;  // ceil(31.5) = 32
    const Dataset h = smote_oversample(ds, half);
    CHECK(h.size() == 90 + 32);
  }
  SUBCASE("synthetic points lie on a segment between a minority point and one of its k neighbours") {
    const auto minority = flat_minority(ds);
    std::vector<std::vector<std::size_t>> nbrs;
    for (std::size_t m = 0; m < minority.size(); ++m) nbrs.push_back(oracle::knn(minority, m, cfg.k_neighbors));
    std::vector<double> lo(minority[0]), hi(minority[0]);
    for (const auto& p : minority) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        lo[j] = std::min(lo[j], p[j]);
        hi[j] = std::max(hi[j], p[j]);
      }
    }
    for (std::size_t i = ds.size(); i < out.size(); ++i) {
      const auto p = out.windows[i].values.flat();
      bool found = false;
      for (std::size_t a = 0; a < minority.size() && !found; ++a) {
        for (std::size_t b : nbrs[a]) found = found || oracle::on_segment(p, minority[a], minority[b]);
      }
      CHECK(found);
      for (std::size_t j = 0; j < p.size(); ++j) {
        CHECK(p[j] >= lo[j]);
        CHECK(p[j] <= hi[j]);
      }
    }
  }
  SUBCASE("seed reproducible") {
    CHECK(smote_oversample(ds, cfg) == out);
    SmoteConfig other = cfg;
    other.seed = 13;
    CHECK_FALSE(smote_oversample(ds, other) == out);
  }
  SUBCASE("fresh ids") {
    for (std::size_t i = ds.size(); i < out.size(); ++i) CHECK(out.windows[i].id > ds.windows.back().id);
  }
  SUBCASE("already balanced is a no-op") {
    const Dataset even = imbalanced(10, 10, 2);
    CHECK(smote_oversample(even, cfg) == even);
  }
  SUBCASE("errors") {
    CHECK(code_of([&] { smote_oversample(imbalanced(90, 5, 1), cfg); }) == ErrorCode::InsufficientMinority);
    SmoteConfig bad = cfg;
    bad.k_neighbors = 0;
    CHECK(code_of([&] { smote_oversample(ds, bad); }) == ErrorCode::ConfigError);
    bad = cfg;
    bad.target_ratio = 1.5;
    CHECK(code_of([&] { smote_oversample(ds, bad); }) == ErrorCode::ConfigError);
  }
}
