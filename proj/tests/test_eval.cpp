#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "whatif/error.hpp"
#include "whatif/eval.hpp"

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

constexpr Label H = Label::Healthy;
constexpr Label A = Label::Anomalous;

Dataset loud_minority(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 0.2);
  Dataset ds;
  ds.channel_names = {"h", "v"};
  ds.window_len = 32;
  for (std::size_t i = 0; i < n; ++i) {
    const bool loud = i % 4 == 3;
    Window w;
    w.id = i;
    w.label = loud ? A : H;
    w.values = Matrix(2, 32);
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t t = 0; t < 32; ++t) w.values(c, t) = (loud ? 2.0 : 0.5) * std::sin(0.4 * t + c) + noise(gen);
    }
    ds.windows.push_back(w);
  }
  return ds;
}

}  // namespace

TEST_CASE("confusion") {
  const std::vector<Label> y{A, A, H};
  const auto cm = confusion(y, y);
  CHECK(cm == ConfusionMatrix{2, 0, 1, 0});
  const std::vector<Label> inverted{H, H, A};
  CHECK(confusion(y, inverted) == ConfusionMatrix{0, 1, 0, 2});
  CHECK(code_of([&] { confusion(y, std::vector<Label>{A}); }) == ErrorCode::ShapeError);
  CHECK(code_of([&] { confusion(std::vector<Label>{}, std::vector<Label>{}); }) == ErrorCode::EmptyInput);

  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Label> t(1 + gen() % 50), p(t.size());
    for (auto& l : t) l = gen() % 2 ? A : H;
    for (auto& l : p) l = gen() % 2 ? A : H;
    const auto got = confusion(t, p);
    const auto want = oracle::count(t, p);
    CHECK(got == ConfusionMatrix{want.tp, want.fp, want.tn, want.fn});
    std::vector<Label> flipped(p.size());
    std::transform(p.begin(), p.end(), flipped.begin(), [](Label l) { return l == A ? H : A; });
    const auto inv = confusion(t, flipped);
    CHECK(inv.tp == got.fn);
    CHECK(inv.fn == got.tp);
    CHECK(inv.tn == got.fp);
    CHECK(inv.fp == got.tn);

    const auto m = metrics(got);
    CHECK(*m.accuracy * got.total() == doctest::Approx(double(got.tp + got.tn)).epsilon(1e-15));
    if (m.g_score && got.tn + got.fp > 0) {
      const double spec = double(got.tn) / double(got.tn + got.fp);
      CHECK(std::abs(*m.g_score * *m.g_score - *m.recall * spec) < 1e-12);
    }
  }
}

TEST_CASE("metrics") {
  SUBCASE("perfect predictions") {
    const auto m = metrics({4, 0, 6, 0});
    CHECK(*m.accuracy == 1.0);
    CHECK(*m.precision == 1.0);
    CHECK(*m.recall == 1.0);
    CHECK(*m.f_score == 1.0);
    CHECK(*m.g_score == 1.0);
  }
  SUBCASE("hand-computed fixture") {
    const auto m = metrics({1, 1, 5, 3});
    CHECK(std::abs(*m.accuracy - 0.6) < 1e-12);
    CHECK(std::abs(*m.precision - 0.5) < 1e-12);
    CHECK(std::abs(*m.recall - 0.25) < 1e-12);
    CHECK(std::abs(*m.f_score - 1.0 / 3.0) < 1e-12);
    CHECK(std::abs(*m.g_score - std::sqrt(0.25 * 5.0 / 6.0)) < 1e-12);
    CHECK(std::abs(*m.g_score - 0.4564354645876384) < 1e-12);
  }
  SUBCASE("no true anomalies leaves positive-class metrics undefined") {
    for (const ConfusionMatrix cm : {ConfusionMatrix{0, 0, 10, 0}, ConfusionMatrix{0, 4, 6, 0}}) {
      const auto m = metrics(cm);
      CHECK(m.accuracy.has_value());
      CHECK_FALSE(m.precision.has_value());
      CHECK_FALSE(m.recall.has_value());
      CHECK_FALSE(m.f_score.has_value());
      CHECK_FALSE(m.g_score.has_value());
    }
  }
  SUBCASE("nothing predicted anomalous") {
    const auto m = metrics({0, 0, 5, 5});
    CHECK_FALSE(m.precision.has_value());
    CHECK(*m.recall == 0.0);
    CHECK(*m.g_score == 0.0);
  }
  SUBCASE("zero precision and recall give zero F") {
    const auto m = metrics({0, 3, 2, 5});
    CHECK(*m.precision == 0.0);
    CHECK(*m.recall == 0.0);
    CHECK(*m.f_score == 0.0);
  }
  SUBCASE("json uses null for undefined") {
    const auto j = to_json(metrics({0, 0, 3, 0}));
    CHECK(j.at("precision").is_null());
    CHECK(j.at("accuracy") == 1.0);
  }
}

TEST_CASE("summarize_folds") {
  const auto r = summarize_folds({98.88, 98.60, 99.02, 99.51, 99.23});
  CHECK(r.mean == doctest::Approx(99.048).epsilon(1e-12));
  CHECK(r.std == doctest::Approx(std::sqrt(0.47628 / 5)).epsilon(1e-9));
  const auto flat = summarize_folds({97.5, 97.5, 97.5});
  CHECK(flat.std == 0.0);
}

TEST_CASE("kfold_partition") {
  for (std::size_t n : {5u, 17u, 100u}) {
    const auto folds = kfold_partition(n, 5, 3);
    REQUIRE(folds.size() == 5);
    std::multiset<std::size_t> seen;
    std::size_t lo = n, hi = 0;
    for (const auto& f : folds) {
      seen.insert(f.begin(), f.end());
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
    }
    CHECK(hi - lo <= 1);
    CHECK(seen.size() == n);
    for (std::size_t i = 0; i < n; ++i) CHECK(seen.count(i) == 1);
  }
  CHECK(kfold_partition(50, 5, 1) == kfold_partition(50, 5, 1));
  CHECK(kfold_partition(50, 5, 1) != kfold_partition(50, 5, 2));
  CHECK(code_of([] { kfold_partition(3, 5, 0); }) == ErrorCode::InsufficientData);
}

TEST_CASE("kfold") {
  const Dataset ds = loud_minority(120, 4);
  KFoldOptions opt;
  opt.folds = 3;
  opt.seed = 11;
  const auto report = kfold(ds, opt);
  REQUIRE(report.fold_accuracy.size() == 3);
  for (double a : report.fold_accuracy) {
    CHECK(a >= 0.0);
    CHECK(a <= 100.0);
  }
  CHECK(report.mean >= 90.0);
  const auto again = kfold(ds, opt);
  CHECK(again.fold_accuracy == report.fold_accuracy);
  KFoldOptions parallel = opt;
  parallel.jobs = 3;
  CHECK(kfold(ds, parallel).fold_accuracy == report.fold_accuracy);

  Dataset one_class = ds;
  for (auto& w : one_class.windows) w.label = H;
  CHECK(code_of([&] { kfold(one_class, opt); }) == ErrorCode::DegenerateFold);
}
