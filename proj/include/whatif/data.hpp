#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "whatif/matrix.hpp"

namespace whatif {

enum class Label : int { Healthy = 0, Anomalous = 1 };

/// One fixed-length multichannel vibration segment.
struct Window {
  std::size_t id = 0;
  Matrix values;  // [channels x timesteps], acceleration in g
  std::optional<Label> label;

  std::size_t channels() const noexcept { return values.rows(); }
  std::size_t timesteps() const noexcept { return values.cols(); }

  bool operator==(const Window&) const = default;
};

/// Per-channel RMS statistics behind the three-sigma labels.
struct LabelingStats {
  std::vector<double> rms_mean;
  std::vector<double> rms_std;
  std::vector<double> threshold;

  bool operator==(const LabelingStats&) const = default;
};

/// Per-channel z-score transform.
struct Normalizer {
  static constexpr double kStdFloor = 1e-8;

  std::vector<double> mean;
  std::vector<double> std;

  Window apply(const Window& w) const;
  Window invert(const Window& w) const;
  /// Normalized values flattened channel-major, the layout used for distances.
  std::vector<double> flatten(const Window& w) const;

  bool operator==(const Normalizer&) const = default;
};

struct Dataset {
  std::vector<Window> windows;
  std::vector<std::string> channel_names;
  std::size_t window_len = 0;
  std::optional<LabelingStats> labeling;
  std::optional<Normalizer> normalizer;

  std::size_t channels() const noexcept { return channel_names.size(); }
  std::size_t size() const noexcept { return windows.size(); }

  /// Throws ShapeError / MalformedFile when the dataset invariants do not hold.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct SyntheticConfig {
  std::size_t n_windows = 400;
  std::size_t window_len = 64;
  std::size_t channels = 2;
  double base_amplitude = 1.0;
  double degradation_onset = 0.8;
  double degradation_rate = 0.1;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

// PRONOSTIA ingestion ------------------------------------------------------

/// Parses one acc_XXXXX.csv file: four timestamp columns then horizontal and
/// vertical acceleration. Accepts ',' or ';' separators.
Window parse_pronostia_file(std::istream& in, std::size_t expected_len);

/// Writes a 2-channel window in the same layout with shortest round-trip
/// decimal values, so parse(write(w)) is bit-exact.
void write_pronostia_file(const Window& w, std::ostream& out);

/// Loads every acc_*.csv under `dir` in lexicographic order.
Dataset load_pronostia_dir(const std::filesystem::path& dir, std::size_t window_len = 2560);

// Labeling -----------------------------------------------------------------

double rms(std::span<const double> series);

/// Raw three-sigma labels: a window is anomalous when any channel's RMS is
/// strictly above that channel's mean + 3 * population std.
std::pair<Dataset, LabelingStats> three_sigma_label(const Dataset& ds);

/// Window i < N-1 becomes anomalous when its raw suffix i+1..N-1 is entirely
/// anomalous. The last window keeps its raw label.
std::vector<Label> suffix_smooth_labels(std::span<const Label> labels);

/// three_sigma_label followed by suffix smoothing; the returned dataset
/// carries its LabelingStats.
Dataset label_dataset(const Dataset& ds);

// Synthetic data -----------------------------------------------------------

Dataset generate_synthetic_bearing(const SyntheticConfig& cfg);

// Normalization ------------------------------------------------------------

Normalizer fit_normalizer(const Dataset& ds);

// Splits and persistence ---------------------------------------------------

/// Seeded shuffle then split; both halves keep the source's metadata and
/// are re-sorted by window id.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

/// Dataset containing only the windows at `indices`, sorted by id.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

/// Writes `dir/manifest` and `dir/windows.ndjson`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<Label> labels_of(const Dataset& ds);

}  // namespace whatif
