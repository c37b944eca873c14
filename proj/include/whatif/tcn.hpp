#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "whatif/data.hpp"
#include "whatif/matrix.hpp"
#include "whatif/rng.hpp"

namespace whatif {

struct TcnConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double dropout = 0.05;
  std::size_t kernel_size = 7;
  std::size_t levels = 1;
  double learning_rate = 2e-3;
  std::size_t hidden_per_level = 20;
  std::size_t in_channels = 2;
  std::size_t n_classes = 2;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TcnConfig&) const = default;
};

/// Causal 1-D convolution; weight layout is [out][in][kernel].
struct Conv1d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_size = 1;
  std::size_t dilation = 1;
  std::vector<double> weight;
  std::vector<double> bias;

  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation);

  double& w(std::size_t o, std::size_t i, std::size_t k) {
    return weight[(o * in_channels + i) * kernel_size + k];
  }
  double w(std::size_t o, std::size_t i, std::size_t k) const {
    return weight[(o * in_channels + i) * kernel_size + k];
  }

  bool operator==(const Conv1d&) const = default;
};

/// Left-zero-padded dilated convolution:
/// out[c][t] = bias[c] + sum_{i,k} w[c][i][k] * in[i][t - (K-1-k) * dilation].
Matrix causal_dilated_conv(const Matrix& input, const Conv1d& layer);

struct TemporalBlock {
  std::size_t dilation = 1;
  Conv1d conv1;
  Conv1d conv2;
  std::optional<Conv1d> downsample;  // 1x1 projection, only when channel counts differ

  bool operator==(const TemporalBlock&) const = default;
};

struct LinearHead {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::vector<double> weight;  // [out][in]
  std::vector<double> bias;

  bool operator==(const LinearHead&) const = default;
};

struct TcnModel {
  TcnConfig config;
  std::vector<TemporalBlock> blocks;
  LinearHead head;
  Normalizer normalizer;

  /// Fan-in scaled uniform initialization from config.seed.
  static TcnModel initialize(const TcnConfig& config, Normalizer normalizer);

  /// Copy of this model with every parameter set to zero (gradient storage).
  TcnModel zeros_like() const;

  bool operator==(const TcnModel&) const = default;
};

struct ParameterView {
  std::string name;
  std::span<double> values;
};

/// Every parameter tensor in a fixed order; absent projections are not listed.
std::vector<ParameterView> parameters(TcnModel& model);

struct TrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double wall_seconds = 0.0;
};

// Inference -------------------------------------------------------------------

/// One temporal block on an already-normalized input; output length equals input length.
Matrix block_forward(const TemporalBlock& block, const Matrix& input);

/// Pre-pooling features [hidden x T] for a normalized input.
Matrix feature_map(const TcnModel& model, const Matrix& normalized);

/// Class probabilities for a raw window. Dropout is drawn from `dropout_rng`
/// only when train_mode is set.
std::vector<double> forward(const TcnModel& model, const Window& window, bool train_mode = false,
                            Rng* dropout_rng = nullptr);

std::vector<std::vector<double>> predict_proba(const TcnModel& model, std::span<const Window> windows);
std::vector<Label> predict(const TcnModel& model, std::span<const Window> windows);

/// argmax with ties resolved toward Healthy.
Label argmax_label(std::span<const double> probabilities);

// Training --------------------------------------------------------------------

struct LossAndGradient {
  double loss = 0.0;  // mean cross-entropy over the batch
  TcnModel gradient;  // same shape as the model
};

/// Mean cross-entropy and its analytic gradient, dropout disabled.
LossAndGradient loss_and_gradient(const TcnModel& model, std::span<const Window> batch);

/// Mean cross-entropy only, dropout disabled.
double batch_loss(const TcnModel& model, std::span<const Window> batch);

std::pair<TcnModel, TrainReport> train(const Dataset& ds, const TcnConfig& config);

struct GradientCheckEntry {
  std::string parameter;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // finite difference straddled a ReLU kink
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::vector<GradientCheckEntry> entries;
};

/// Compares analytic gradients against central finite differences (h = 1e-4).
GradientCheckReport verify_gradients(const TcnModel& model, std::span<const Window> batch,
                                     double step = 1e-4);

// Persistence -----------------------------------------------------------------

inline constexpr const char* kModelFormatVersion = "1";

nlohmann::json model_to_json(const TcnModel& model);
TcnModel model_from_json(const nlohmann::json& doc);
void save_model(const TcnModel& model, const std::filesystem::path& path);
TcnModel load_model(const std::filesystem::path& path);

nlohmann::json config_to_json(const TcnConfig& config);

}  // namespace whatif
