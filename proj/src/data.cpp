#include "whatif/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "whatif/error.hpp"
#include "whatif/rng.hpp"

namespace whatif {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kDatasetVersion = "1";

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_field(std::string_view field, std::size_t row) {
  field = trim(field);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size() ||
      !std::isfinite(value)) {
    throw Error(ErrorCode::MalformedFile,
                "row " + std::to_string(row + 1) + ": non-numeric acceleration '" +
                    std::string(field) + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double mean_of(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

double population_std(std::span<const double> xs, double mean) {
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

json labeling_to_json(const LabelingStats& s) {
  return {{"rms_mean", s.rms_mean}, {"rms_std", s.rms_std}, {"threshold", s.threshold}};
}

json normalizer_to_json(const Normalizer& n) { return {{"mean", n.mean}, {"std", n.std}}; }

}  // namespace

// Normalizer ----------------------------------------------------------------

Window Normalizer::apply(const Window& w) const {
  if (w.channels() != mean.size()) {
    throw Error(ErrorCode::ShapeError, "normalizer has " + std::to_string(mean.size()) +
                                           " channels, window has " +
                                           std::to_string(w.channels()));
  }
  Window out = w;
  for (std::size_t c = 0; c < w.channels(); ++c) {
    for (double& x : out.values.row(c)) x = (x - mean[c]) / std[c];
  }
  return out;
}

Window Normalizer::invert(const Window& w) const {
  if (w.channels() != mean.size()) throw Error(ErrorCode::ShapeError, "channel mismatch");
  Window out = w;
  for (std::size_t c = 0; c < w.channels(); ++c) {
    for (double& x : out.values.row(c)) x = x * std[c] + mean[c];
  }
  return out;
}

std::vector<double> Normalizer::flatten(const Window& w) const {
  const Window n = apply(w);
  return {n.values.flat().begin(), n.values.flat().end()};
}

Normalizer fit_normalizer(const Dataset& ds) {
  if (ds.windows.empty()) throw Error(ErrorCode::EmptyInput, "cannot fit normalizer on no windows");
  const std::size_t channels = ds.windows.front().channels();
  Normalizer n;
  n.mean.assign(channels, 0.0);
  n.std.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& w : ds.windows) {
      for (double x : w.values.row(c)) sum += x;
      count += w.timesteps();
    }
    const double mu = sum / static_cast<double>(count);
    double acc = 0.0;
    for (const auto& w : ds.windows) {
      for (double x : w.values.row(c)) acc += (x - mu) * (x - mu);
    }
    n.mean[c] = mu;
    n.std[c] = std::max(std::sqrt(acc / static_cast<double>(count)), Normalizer::kStdFloor);
  }
  return n;
}

// Dataset -------------------------------------------------------------------

void Dataset::validate() const {
  if (channel_names.empty()) throw Error(ErrorCode::ShapeError, "dataset has no channels");
  if (window_len < 1) throw Error(ErrorCode::ShapeError, "window_len must be >= 1");
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    if (w.channels() != channels() || w.timesteps() != window_len) {
      throw Error(ErrorCode::ShapeError, "window " + std::to_string(w.id) + " has shape " +
                                             std::to_string(w.channels()) + "x" +
                                             std::to_string(w.timesteps()));
    }
    if (i > 0 && w.id <= windows[i - 1].id) {
      throw Error(ErrorCode::MalformedFile, "window ids must be strictly increasing");
    }
    if (labeling && !w.label) {
      throw Error(ErrorCode::MalformedFile, "labeled dataset has unlabeled window " +
                                                std::to_string(w.id));
    }
    for (double x : w.values.flat()) {
      if (!std::isfinite(x)) {
        throw Error(ErrorCode::MalformedFile, "non-finite value in window " + std::to_string(w.id));
      }
    }
  }
}

std::vector<Label> labels_of(const Dataset& ds) {
  std::vector<Label> out;
  out.reserve(ds.size());
  for (const auto& w : ds.windows) {
    if (!w.label) throw Error(ErrorCode::DegenerateLabels, "window " + std::to_string(w.id) + " is unlabeled");
    out.push_back(*w.label);
  }
  return out;
}

// PRONOSTIA -----------------------------------------------------------------

Window parse_pronostia_file(std::istream& in, std::size_t expected_len) {
  std::vector<double> horizontal;
  std::vector<double> vertical;
  horizontal.reserve(expected_len);
  vertical.reserve(expected_len);

  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::string_view view = trim(line);
    if (view.empty()) continue;
    const char sep = view.find(';') != std::string_view::npos ? ';' : ',';
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto pos = view.find(sep, start);
      fields.push_back(view.substr(start, pos == std::string_view::npos ? view.npos : pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    if (fields.size() != 6) {
      throw Error(ErrorCode::MalformedFile, "row " + std::to_string(row + 1) + ": expected 6 fields, got " +
                                                std::to_string(fields.size()));
    }
    horizontal.push_back(parse_field(fields[4], row));
    vertical.push_back(parse_field(fields[5], row));
    ++row;
  }
  if (row != expected_len) {
    throw Error(ErrorCode::MalformedFile, "expected " + std::to_string(expected_len) +
                                              " rows, found " + std::to_string(row));
  }

  Window w;
  w.values = Matrix(2, expected_len);
  std::copy(horizontal.begin(), horizontal.end(), w.values.row(0).begin());
  std::copy(vertical.begin(), vertical.end(), w.values.row(1).begin());
  return w;
}

void write_pronostia_file(const Window& w, std::ostream& out) {
  if (w.channels() != 2) throw Error(ErrorCode::ShapeError, "PRONOSTIA files carry exactly 2 channels");
  // 25.6 kHz sampling: 39.0625 us per sample, truncated like the source files.
  for (std::size_t t = 0; t < w.timesteps(); ++t) {
    const auto micros = static_cast<long long>(static_cast<double>(t) * 39.0625);
    out << "0,0,0," << micros << ',' << format_double(w.values(0, t)) << ','
        << format_double(w.values(1, t)) << '\n';
  }
}

Dataset load_pronostia_dir(const fs::path& dir, std::size_t window_len) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::NotFound, "no such directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("acc_") && name.ends_with(".csv")) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  Dataset ds;
  ds.channel_names = {"horizontal_acceleration", "vertical_acceleration"};
  ds.window_len = window_len;
  ds.windows.reserve(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::ifstream in(files[i]);
    if (!in) throw Error(ErrorCode::MalformedFile, "cannot open " + files[i].string());
    try {
      Window w = parse_pronostia_file(in, window_len);
      w.id = i;
      ds.windows.push_back(std::move(w));
    } catch (const Error& e) {
      throw Error(e.code(), files[i].filename().string() + ": " + e.what());
    }
  }
  return ds;
}

// Labeling ------------------------------------------------------------------

double rms(std::span<const double> series) {
  if (series.empty()) throw Error(ErrorCode::EmptyInput, "rms of an empty series");
  double acc = 0.0;
  for (double x : series) acc += x * x;
  return std::sqrt(acc / static_cast<double>(series.size()));
}

std::pair<Dataset, LabelingStats> three_sigma_label(const Dataset& ds) {
  if (ds.windows.size() < 2) {
    throw Error(ErrorCode::InsufficientData, "three-sigma labeling needs at least 2 windows");
  }
  const std::size_t channels = ds.windows.front().channels();
  LabelingStats stats;
  std::vector<std::vector<double>> per_channel(channels, std::vector<double>(ds.size()));
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < ds.size(); ++i) per_channel[c][i] = rms(ds.windows[i].values.row(c));
    const double mu = mean_of(per_channel[c]);
    const double sd = population_std(per_channel[c], mu);
    stats.rms_mean.push_back(mu);
    stats.rms_std.push_back(sd);
    stats.threshold.push_back(mu + 3.0 * sd);
  }

  Dataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) {
    bool anomalous = false;
    for (std::size_t c = 0; c < channels; ++c) anomalous = anomalous || per_channel[c][i] > stats.threshold[c];
    out.windows[i].label = anomalous ? Label::Anomalous : Label::Healthy;
  }
  out.labeling = stats;
  return {std::move(out), std::move(stats)};
}

std::vector<Label> suffix_smooth_labels(std::span<const Label> labels) {
  std::vector<Label> out(labels.begin(), labels.end());
  if (labels.size() < 2) return out;
  // Walk backwards tracking whether the raw suffix after i is all anomalous.
  bool suffix_anomalous = labels.back() == Label::Anomalous;
  for (std::size_t i = labels.size() - 1; i-- > 0;) {
    if (suffix_anomalous) out[i] = Label::Anomalous;
    suffix_anomalous = suffix_anomalous && labels[i] == Label::Anomalous;
  }
  return out;
}

Dataset label_dataset(const Dataset& ds) {
  auto [labeled, stats] = three_sigma_label(ds);
  const auto smoothed = suffix_smooth_labels(labels_of(labeled));
  for (std::size_t i = 0; i < labeled.size(); ++i) labeled.windows[i].label = smoothed[i];
  return labeled;
}

// Synthetic -----------------------------------------------------------------

Dataset generate_synthetic_bearing(const SyntheticConfig& cfg) {
  if (cfg.n_windows < 2) throw Error(ErrorCode::ConfigError, "n_windows must be >= 2");
  if (cfg.window_len < 2) throw Error(ErrorCode::ConfigError, "window_len must be >= 2");
  if (cfg.channels < 1) throw Error(ErrorCode::ConfigError, "channels must be >= 1");
  if (!(cfg.degradation_onset >= 0.0 && cfg.degradation_onset <= 1.0)) {
    throw Error(ErrorCode::ConfigError, "degradation_onset must lie in [0, 1]");
  }
  if (!(cfg.noise_std >= 0.0) || !std::isfinite(cfg.base_amplitude) ||
      !std::isfinite(cfg.degradation_rate)) {
    throw Error(ErrorCode::ConfigError, "amplitude, rate and noise must be finite, noise >= 0");
  }

  constexpr double kPi = 3.14159265358979323846;
  constexpr double kCyclesPerWindow = 4.0;
  Rng rng = make_rng(cfg.seed, "data.synthetic");
  const auto onset = static_cast<std::size_t>(
      std::floor(cfg.degradation_onset * static_cast<double>(cfg.n_windows)));

  Dataset ds;
  ds.window_len = cfg.window_len;
  for (std::size_t c = 0; c < cfg.channels; ++c) ds.channel_names.push_back("channel_" + std::to_string(c));
  ds.windows.reserve(cfg.n_windows);
  for (std::size_t i = 0; i < cfg.n_windows; ++i) {
    const double amplitude =
        i < onset ? cfg.base_amplitude
                  : cfg.base_amplitude + cfg.degradation_rate * static_cast<double>(i - onset + 1);
    Window w;
    w.id = i;
    w.values = Matrix(cfg.channels, cfg.window_len);
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const double phase = kPi * static_cast<double>(c) / static_cast<double>(cfg.channels);
      for (std::size_t t = 0; t < cfg.window_len; ++t) {
        const double angle =
            2.0 * kPi * kCyclesPerWindow * static_cast<double>(t) / static_cast<double>(cfg.window_len);
        double noise = 0.0;
        if (cfg.noise_std > 0.0) noise = cfg.noise_std * standard_normal(rng);
        w.values(c, t) = amplitude * std::sin(angle + phase) + noise;
      }
    }
    ds.windows.push_back(std::move(w));
  }
  return ds;
}

// Splits --------------------------------------------------------------------

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> sorted(indices.begin(), indices.end());
  std::sort(sorted.begin(), sorted.end());
  Dataset out;
  out.channel_names = ds.channel_names;
  out.window_len = ds.window_len;
  out.labeling = ds.labeling;
  out.normalizer = ds.normalizer;
  out.windows.reserve(sorted.size());
  for (std::size_t i : sorted) {
    if (i >= ds.size()) throw Error(ErrorCode::RangeError, "window index out of range");
    out.windows.push_back(ds.windows[i]);
  }
  return out;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::ConfigError, "test fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "data.split");
  shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(ds.size())));
  const std::span<const std::size_t> all(order);
  return {subset(ds, all.subspan(n_test)), subset(ds, all.first(n_test))};
}

// Persistence ---------------------------------------------------------------

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  json manifest = {
      {"format", "whatif-dataset"},
      {"version", kDatasetVersion},
      {"channels", ds.channel_names},
      {"window_len", ds.window_len},
      {"window_count", ds.size()},
      {"labeling", ds.labeling ? labeling_to_json(*ds.labeling) : json(nullptr)},
      {"normalizer", ds.normalizer ? normalizer_to_json(*ds.normalizer) : json(nullptr)},
  };
  {
    std::ofstream out(dir / "manifest");
    if (!out) throw Error(ErrorCode::MalformedFile, "cannot write " + (dir / "manifest").string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(dir / "windows.ndjson");
  if (!out) throw Error(ErrorCode::MalformedFile, "cannot write " + (dir / "windows.ndjson").string());
  for (const auto& w : ds.windows) {
    json values = json::array();
    for (std::size_t c = 0; c < w.channels(); ++c) {
      values.push_back(std::vector<double>(w.values.row(c).begin(), w.values.row(c).end()));
    }
    json record = {{"id", w.id},
                   {"label", w.label ? json(static_cast<int>(*w.label)) : json(nullptr)},
                   {"values", std::move(values)}};
    out << record.dump() << '\n';
  }
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream min(dir / "manifest");
  if (!min) throw Error(ErrorCode::NotFound, "no dataset manifest in " + dir.string());
  Dataset ds;
  try {
    const json manifest = json::parse(min);
    if (manifest.at("version").get<std::string>() != kDatasetVersion) {
      throw Error(ErrorCode::UnsupportedVersion,
                  "dataset version " + manifest.at("version").get<std::string>());
    }
    ds.channel_names = manifest.at("channels").get<std::vector<std::string>>();
    ds.window_len = manifest.at("window_len").get<std::size_t>();
    if (const auto& l = manifest.at("labeling"); !l.is_null()) {
      ds.labeling = LabelingStats{l.at("rms_mean").get<std::vector<double>>(),
                                  l.at("rms_std").get<std::vector<double>>(),
                                  l.at("threshold").get<std::vector<double>>()};
    }
    if (const auto& n = manifest.at("normalizer"); !n.is_null()) {
      ds.normalizer = Normalizer{n.at("mean").get<std::vector<double>>(),
                                 n.at("std").get<std::vector<double>>()};
    }

    std::ifstream win(dir / "windows.ndjson");
    if (!win) throw Error(ErrorCode::MalformedFile, "missing windows.ndjson in " + dir.string());
    std::string line;
    while (std::getline(win, line)) {
      if (trim(line).empty()) continue;
      const json record = json::parse(line);
      Window w;
      w.id = record.at("id").get<std::size_t>();
      if (!record.at("label").is_null()) w.label = static_cast<Label>(record.at("label").get<int>());
      const auto rows = record.at("values").get<std::vector<std::vector<double>>>();
      w.values = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
      for (std::size_t c = 0; c < rows.size(); ++c) {
        if (rows[c].size() != w.values.cols()) throw Error(ErrorCode::MalformedFile, "ragged window");
        std::copy(rows[c].begin(), rows[c].end(), w.values.row(c).begin());
      }
      ds.windows.push_back(std::move(w));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedFile, dir.string() + ": " + e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace whatif
