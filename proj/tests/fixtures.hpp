#pragma once

// Small labeled datasets shared by the cf, service and acceptance tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <filesystem>

#include "whatif/data.hpp"
#include "whatif/tcn.hpp"

namespace fixture {

// Channel 0 is loud on anomalous windows; the other channels look the same
// for both classes. Every fourth window is anomalous.
inline whatif::Dataset channel0_driven(std::size_t n, std::size_t len, std::uint64_t seed,
                                       std::size_t channels = 2, std::size_t first_id = 0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, 0.15);
  std::uniform_real_distribution<double> phase(0.0, 6.28);
  whatif::Dataset ds;
  for (std::size_t c = 0; c < channels; ++c) ds.channel_names.push_back("channel_" + std::to_string(c));
  ds.window_len = len;
  for (std::size_t i = 0; i < n; ++i) {
    const bool bad = i % 4 == 3;
    whatif::Window w;
    w.id = first_id + i;
    w.label = bad ? whatif::Label::Anomalous : whatif::Label::Healthy;
    w.values = whatif::Matrix(channels, len);
    for (std::size_t c = 0; c < channels; ++c) {
      const double amp = (bad && c == 0) ? 2.0 : 0.5;
      const double ph = phase(gen);
      for (std::size_t t = 0; t < len; ++t) w.values(c, t) = amp * std::sin(0.5 * t + ph) + noise(gen);
    }
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

// Data directory with datasets "train" and "queries" and model "m1".
inline void populate_service_dir(const std::filesystem::path& dir) {
  std::filesystem::remove_all(dir);
  const whatif::Dataset train = channel0_driven(160, 32, 1);
  const whatif::Dataset queries = channel0_driven(40, 32, 77, 2, 1000);
  whatif::save_dataset(train, dir / "datasets" / "train");
  whatif::save_dataset(queries, dir / "datasets" / "queries");
  whatif::save_dataset(channel0_driven(20, 32, 3, 3), dir / "datasets" / "three_channel");
  whatif::TcnConfig cfg;
  cfg.seed = 4;
  std::filesystem::create_directories(dir / "models");
  whatif::save_model(whatif::train(train, cfg).first, dir / "models" / "m1.json");
}

}  // namespace fixture
