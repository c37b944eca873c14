#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "whatif/data.hpp"
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

Dataset dataset_with_rms(const std::vector<double>& levels) {
  // Constant windows have RMS equal to |level|.
  Dataset ds;
  ds.channel_names = {"a", "b"};
  ds.window_len = 8;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    Window w;
    w.id = i;
    w.values = Matrix(2, 8, levels[i]);
    ds.windows.push_back(w);
  }
  return ds;
}

}  // namespace

TEST_CASE("parse_pronostia_file reads horizontal and vertical columns in row order") {
  std::istringstream in("8,0,0,0,0.5,-0.5\n8,0,0,39,1.25,2\n8,0,0,78,-3e-2,0\n");
  const Window w = parse_pronostia_file(in, 3);
  CHECK(w.channels() == 2);
  CHECK(w.timesteps() == 3);
  CHECK(w.values(0, 0) == 0.5);
  CHECK(w.values(1, 0) == -0.5);
  CHECK(w.values(0, 1) == 1.25);
  CHECK(w.values(1, 1) == 2.0);
  CHECK(w.values(0, 2) == -0.03);
  CHECK_FALSE(w.label.has_value());
}

TEST_CASE("parse_pronostia_file accepts semicolon separators and CRLF") {
  std::istringstream in("9;1;2;3;0.1;0.2\r\n9;1;2;4;0.3;0.4\r\n");
  const Window w = parse_pronostia_file(in, 2);
  CHECK(w.values(0, 1) == 0.3);
  CHECK(w.values(1, 1) == 0.4);
}

TEST_CASE("parse_pronostia_file rejects malformed files") {
  SUBCASE("row count below expected") {
    std::ostringstream text;
    for (int i = 0; i < 2559; ++i) text << "0,0,0," << i << ",0.1,0.2\n";
    std::istringstream in(text.str());
    CHECK(code_of([&] { parse_pronostia_file(in, 2560); }) == ErrorCode::MalformedFile);
  }
  SUBCASE("non-numeric acceleration") {
    std::istringstream in("0,0,0,0,abc,0.2\n");
    CHECK(code_of([&] { parse_pronostia_file(in, 1); }) == ErrorCode::MalformedFile);
  }
  SUBCASE("trailing garbage in a field") {
    std::istringstream in("0,0,0,0,0.1x,0.2\n");
    CHECK(code_of([&] { parse_pronostia_file(in, 1); }) == ErrorCode::MalformedFile);
  }
  SUBCASE("missing column") {
    std::istringstream in("0,0,0,0.1,0.2\n");
    CHECK(code_of([&] { parse_pronostia_file(in, 1); }) == ErrorCode::MalformedFile);
  }
}

TEST_CASE("write then parse is bit-exact for random windows") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> mag(-50.0, 50.0);
  std::uniform_int_distribution<int> exponent(-12, 3);
  for (int trial = 0; trial < 25; ++trial) {
    Window w;
    w.values = Matrix(2, 1 + trial * 7);
    for (double& x : w.values.flat()) x = mag(gen) * std::pow(10.0, exponent(gen));
    std::stringstream buf;
    write_pronostia_file(w, buf);
    const Window back = parse_pronostia_file(buf, w.timesteps());
    CHECK(back.values == w.values);
  }
}

TEST_CASE("rms") {
  const std::vector<double> zeros{0, 0, 0, 0};
  CHECK(rms(zeros) == 0.0);
  const std::vector<double> constant(17, -2.5);
  CHECK(rms(constant) == doctest::Approx(2.5).epsilon(1e-15));
  const std::vector<double> pair{3, 4};
  CHECK(rms(pair) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
  CHECK(rms(pair) == doctest::Approx(3.53553).epsilon(1e-5));
  CHECK(code_of([] { rms(std::vector<double>{}); }) == ErrorCode::EmptyInput);

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(1 + trial % 13);
    const bool all_zero = trial % 5 == 0;
    for (double& x : s) x = all_zero ? 0.0 : u(gen);
    const double r = rms(s);
    CHECK(r >= 0.0);
    CHECK((r == 0.0) == all_zero);
  }
}

TEST_CASE("three_sigma_label") {
  SUBCASE("identical windows are all healthy") {
    const auto [labeled, stats] = three_sigma_label(dataset_with_rms(std::vector<double>(20, 1.5)));
    CHECK(stats.rms_std[0] == 0.0);
    for (const auto& w : labeled.windows) CHECK(*w.label == Label::Healthy);
  }
  SUBCASE("a single large outlier is the only anomaly") {
    std::vector<double> levels(100, 1.0);
    levels.push_back(100.0);
    const auto [labeled, stats] = three_sigma_label(dataset_with_rms(levels));
    // mu = 200/101, sigma = 990/101, threshold ~ 31.39
    CHECK(stats.rms_mean[0] == doctest::Approx(200.0 / 101.0));
    CHECK(stats.rms_std[0] == doctest::Approx(990.0 / 101.0));
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      CHECK(*labeled.windows[i].label == (i == 100 ? Label::Anomalous : Label::Healthy));
    }
  }
  SUBCASE("labels are invariant to window order") {
    std::mt19937_64 gen(5);
    std::vector<double> levels(60);
    for (double& l : levels) l = std::exponential_distribution<double>(1.0)(gen);
    const auto base = three_sigma_label(dataset_with_rms(levels)).first;
    std::vector<std::size_t> perm(levels.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> shuffled;
    for (std::size_t p : perm) shuffled.push_back(levels[p]);
    const auto permuted = three_sigma_label(dataset_with_rms(shuffled)).first;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      CHECK(*permuted.windows[i].label == *base.windows[perm[i]].label);
    }
  }
  SUBCASE("fewer than two windows") {
    CHECK(code_of([] { three_sigma_label(dataset_with_rms({1.0})); }) == ErrorCode::InsufficientData);
  }
}

TEST_CASE("three_sigma_label matches the brute-force oracle on random datasets") {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const auto ds = oracle::random_dataset(gen, 2 + gen() % 199, 3, 16);
    const auto labeled = three_sigma_label(ds).first;
    const auto expected = oracle::three_sigma_labels(ds);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(*labeled.windows[i].label == expected[i]);
  }
}

TEST_CASE("suffix_smooth_labels") {
  using L = Label;
  const auto H = L::Healthy;
  const auto A = L::Anomalous;
  CHECK(suffix_smooth_labels(std::vector<L>{H, H, A}) == std::vector<L>{H, A, A});
  CHECK(suffix_smooth_labels(std::vector<L>{A, H, A, A}) == std::vector<L>{A, A, A, A});
  CHECK(suffix_smooth_labels(std::vector<L>{H, H, H}) == std::vector<L>{H, H, H});
  CHECK(suffix_smooth_labels(std::vector<L>{A}) == std::vector<L>{A});
  CHECK(suffix_smooth_labels(std::vector<L>{H}) == std::vector<L>{H});
  // A second pass over [H,A,A] sees an all-anomalous suffix after window 0.
  CHECK(suffix_smooth_labels(std::vector<L>{H, A, A}) == std::vector<L>{A, A, A});

  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<L> raw(1 + gen() % 30);
    for (auto& l : raw) l = gen() % 3 == 0 ? H : A;
    const auto once = suffix_smooth_labels(raw);
    const auto twice = suffix_smooth_labels(once);
    CHECK(std::count(twice.begin(), twice.end(), A) - std::count(once.begin(), once.end(), A) <= 1);
    CHECK(once == oracle::suffix_smooth(raw));
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == A) CHECK(once[i] == A);
    }
  }
}

TEST_CASE("generate_synthetic_bearing") {
  SyntheticConfig cfg;
  cfg.seed = 42;
  SUBCASE("deterministic for a fixed seed") {
    CHECK(generate_synthetic_bearing(cfg) == generate_synthetic_bearing(cfg));
    SyntheticConfig other = cfg;
    other.seed = 43;
    CHECK_FALSE(generate_synthetic_bearing(other) == generate_synthetic_bearing(cfg));
  }
  SUBCASE("no degradation and no noise gives no anomalies") {
    cfg.degradation_rate = 0.0;
    cfg.noise_std = 0.0;
    const auto labeled = label_dataset(generate_synthetic_bearing(cfg));
    for (const auto& w : labeled.windows) CHECK(*w.label == Label::Healthy);
  }
  SUBCASE("late onset labels a contiguous final tail") {
    cfg.n_windows = 400;
    cfg.window_len = 64;
    cfg.degradation_onset = 0.8;
    cfg.degradation_rate = 0.5;
    cfg.noise_std = 0.1;
    cfg.seed = 7;
    const auto ds = generate_synthetic_bearing(cfg);
    const auto labeled = label_dataset(ds);
    const auto expected = oracle::suffix_smooth(oracle::three_sigma_labels(ds));
    std::size_t anomalous = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(*labeled.windows[i].label == expected[i]);
      anomalous += expected[i] == Label::Anomalous;
    }
    // Frozen from the oracle; three-sigma can flag at most ~10% per channel
    // (Cantelli), so the tail is short.
    CHECK(anomalous == oracle::kSyntheticTailAnomalies);
    for (std::size_t i = ds.size() - anomalous; i < ds.size(); ++i) {
      CHECK(*labeled.windows[i].label == Label::Anomalous);
    }
  }
  SUBCASE("invalid configs") {
    SyntheticConfig bad = cfg;
    bad.degradation_onset = 1.5;
    CHECK(code_of([&] { generate_synthetic_bearing(bad); }) == ErrorCode::ConfigError);
    bad = cfg;
    bad.window_len = 1;
    CHECK(code_of([&] { generate_synthetic_bearing(bad); }) == ErrorCode::ConfigError);
    bad = cfg;
    bad.n_windows = 1;
    CHECK(code_of([&] { generate_synthetic_bearing(bad); }) == ErrorCode::ConfigError);
  }
}

TEST_CASE("normalizer") {
  SyntheticConfig cfg;
  cfg.n_windows = 30;
  cfg.seed = 1;
  const auto ds = generate_synthetic_bearing(cfg);
  const auto n = fit_normalizer(ds);

  SUBCASE("apply then invert restores the window") {
    for (const auto& w : ds.windows) {
      const auto back = n.invert(n.apply(w));
      for (std::size_t i = 0; i < w.values.size(); ++i) {
        CHECK(std::abs(back.values.flat()[i] - w.values.flat()[i]) < 1e-9);
      }
    }
  }
  SUBCASE("normalized training data has zero mean and unit std per channel") {
    for (std::size_t c = 0; c < ds.channels(); ++c) {
      long double sum = 0, sq = 0;
      std::size_t count = 0;
      for (const auto& w : ds.windows) {
        const Window z = n.apply(w);
        for (double x : z.values.row(c)) {
          sum += x;
          sq += static_cast<long double>(x) * x;
          ++count;
        }
      }
      const auto mean = static_cast<double>(sum / count);
      CHECK(std::abs(mean) < 1e-6);
      CHECK(static_cast<double>(sq / count) - mean * mean == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  SUBCASE("constant channel is floored and maps to zero") {
    Dataset flat = dataset_with_rms(std::vector<double>(5, 3.0));
    const auto fn = fit_normalizer(flat);
    CHECK(fn.std[0] == Normalizer::kStdFloor);
    const Window z = fn.apply(flat.windows[0]);
    for (double x : z.values.flat()) CHECK(std::abs(x) < 1e-6);
  }
  SUBCASE("channel mismatch") {
    Window w;
    w.values = Matrix(3, 4);
    CHECK(code_of([&] { n.apply(w); }) == ErrorCode::ShapeError);
  }
}

TEST_CASE("dataset persistence round-trips exactly") {
  SyntheticConfig cfg;
  cfg.n_windows = 12;
  cfg.seed = 3;
  Dataset ds = label_dataset(generate_synthetic_bearing(cfg));
  ds.normalizer = fit_normalizer(ds);
  const auto dir = std::filesystem::temp_directory_path() / "whatif_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  CHECK(std::filesystem::exists(dir / "manifest"));
  CHECK(std::filesystem::exists(dir / "windows.ndjson"));
  CHECK(load_dataset(dir) == ds);
  std::filesystem::remove_all(dir);
  CHECK(code_of([&] { load_dataset(dir); }) == ErrorCode::NotFound);
}

TEST_CASE("train_test_split partitions the dataset") {
  SyntheticConfig cfg;
  cfg.n_windows = 50;
  const auto ds = generate_synthetic_bearing(cfg);
  const auto [train, test] = train_test_split(ds, 0.2, 5);
  CHECK(test.size() == 10);
  CHECK(train.size() == 40);
  std::vector<std::size_t> ids;
  for (const auto& w : train.windows) ids.push_back(w.id);
  for (const auto& w : test.windows) ids.push_back(w.id);
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) CHECK(ids[i] == i);
  train.validate();
  test.validate();
}
