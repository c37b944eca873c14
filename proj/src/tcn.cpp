#include "whatif/tcn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "whatif/error.hpp"

namespace whatif {

using json = nlohmann::json;

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

// Forward state of one temporal block kept for backpropagation.
struct BlockCache {
  Matrix input;
  Matrix pre1;   // conv1 output
  Matrix mask1;  // dropout scale, empty when inactive
  Matrix hidden1;
  Matrix pre2;
  Matrix mask2;
  Matrix sum;  // hidden2 + residual
  Matrix output;
};

struct ExampleCache {
  std::vector<BlockCache> blocks;
  std::vector<double> pooled;
  std::vector<double> probabilities;
};

Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& x : out.flat()) x = x > 0.0 ? x : 0.0;
  return out;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.flat()) m = uniform01(rng) < rate ? 0.0 : keep_scale;
  return mask;
}

void multiply_inplace(Matrix& m, const Matrix& mask) {
  if (mask.size() == 0) return;
  auto a = m.flat();
  auto b = mask.flat();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

// Accumulates weight/bias gradients into `grad` and returns d(input).
Matrix conv_backward(const Conv1d& layer, const Matrix& input, const Matrix& d_out, Conv1d& grad) {
  const std::size_t T = input.cols();
  Matrix d_in(layer.in_channels, T);
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    const auto dout_row = d_out.row(o);
    double bias_grad = 0.0;
    for (double g : dout_row) bias_grad += g;
    grad.bias[o] += bias_grad;
    for (std::size_t i = 0; i < layer.in_channels; ++i) {
      const auto in_row = input.row(i);
      auto din_row = d_in.row(i);
      for (std::size_t k = 0; k < layer.kernel_size; ++k) {
        const std::size_t shift = (layer.kernel_size - 1 - k) * layer.dilation;
        if (shift >= T) continue;
        const double w = layer.w(o, i, k);
        double acc = 0.0;
        for (std::size_t t = shift; t < T; ++t) {
          acc += dout_row[t] * in_row[t - shift];
          din_row[t - shift] += w * dout_row[t];
        }
        grad.w(o, i, k) += acc;
      }
    }
  }
  return d_in;
}

Matrix block_forward_cached(const TemporalBlock& block, const Matrix& input, double dropout,
                            Rng* rng, BlockCache& cache) {
  const bool drop = rng != nullptr && dropout > 0.0;
  cache.input = input;
  cache.pre1 = causal_dilated_conv(input, block.conv1);
  cache.hidden1 = relu(cache.pre1);
  if (drop) {
    cache.mask1 = dropout_mask(cache.hidden1.rows(), cache.hidden1.cols(), dropout, *rng);
    multiply_inplace(cache.hidden1, cache.mask1);
  }
  cache.pre2 = causal_dilated_conv(cache.hidden1, block.conv2);
  Matrix hidden2 = relu(cache.pre2);
  if (drop) {
    cache.mask2 = dropout_mask(hidden2.rows(), hidden2.cols(), dropout, *rng);
    multiply_inplace(hidden2, cache.mask2);
  }
  cache.sum = hidden2;
  if (block.downsample) {
    const Matrix residual = causal_dilated_conv(input, *block.downsample);
    auto s = cache.sum.flat();
    auto r = residual.flat();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += r[i];
  } else {
    auto s = cache.sum.flat();
    auto r = input.flat();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += r[i];
  }
  cache.output = relu(cache.sum);
  return cache.output;
}

Matrix block_backward(const TemporalBlock& block, const BlockCache& cache, const Matrix& d_out,
                      TemporalBlock& grad) {
  Matrix d_sum = d_out;
  {
    auto d = d_sum.flat();
    auto s = cache.sum.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = s[i] > 0.0 ? d[i] : 0.0;
  }
  Matrix d_pre2 = d_sum;
  multiply_inplace(d_pre2, cache.mask2);
  {
    auto d = d_pre2.flat();
    auto p = cache.pre2.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = p[i] > 0.0 ? d[i] : 0.0;
  }
  Matrix d_pre1 = conv_backward(block.conv2, cache.hidden1, d_pre2, grad.conv2);
  multiply_inplace(d_pre1, cache.mask1);
  {
    auto d = d_pre1.flat();
    auto p = cache.pre1.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = p[i] > 0.0 ? d[i] : 0.0;
  }
  Matrix d_input = conv_backward(block.conv1, cache.input, d_pre1, grad.conv1);
  if (block.downsample) {
    const Matrix d_res = conv_backward(*block.downsample, cache.input, d_sum, *grad.downsample);
    auto d = d_input.flat();
    auto r = d_res.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += r[i];
  } else {
    auto d = d_input.flat();
    auto r = d_sum.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += r[i];
  }
  return d_input;
}

std::vector<double> forward_cached(const TcnModel& model, const Matrix& normalized, Rng* rng,
                                   ExampleCache& cache) {
  if (normalized.rows() != model.config.in_channels) {
    throw Error(ErrorCode::ShapeError, "model expects " + std::to_string(model.config.in_channels) +
                                           " channels, window has " + std::to_string(normalized.rows()));
  }
  cache.blocks.resize(model.blocks.size());
  Matrix x = normalized;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    x = block_forward_cached(model.blocks[b], x, model.config.dropout, rng, cache.blocks[b]);
  }
  const auto& head = model.head;
  cache.pooled.assign(x.rows(), 0.0);
  for (std::size_t h = 0; h < x.rows(); ++h) {
    double acc = 0.0;
    for (double v : x.row(h)) acc += v;
    cache.pooled[h] = acc / static_cast<double>(x.cols());
  }
  std::vector<double> logits(head.out_features);
  for (std::size_t o = 0; o < head.out_features; ++o) {
    double acc = head.bias[o];
    for (std::size_t h = 0; h < head.in_features; ++h) acc += head.weight[o * head.in_features + h] * cache.pooled[h];
    logits[o] = acc;
  }
  cache.probabilities = softmax(logits);
  return cache.probabilities;
}

// Backprop of `scale * cross_entropy` for one example into `grad`.
void backward_example(const TcnModel& model, const ExampleCache& cache, std::size_t label,
                      double scale, TcnModel& grad) {
  const auto& head = model.head;
  std::vector<double> d_logits(head.out_features);
  for (std::size_t o = 0; o < head.out_features; ++o) {
    d_logits[o] = scale * (cache.probabilities[o] - (o == label ? 1.0 : 0.0));
  }
  std::vector<double> d_pooled(head.in_features, 0.0);
  for (std::size_t o = 0; o < head.out_features; ++o) {
    grad.head.bias[o] += d_logits[o];
    for (std::size_t h = 0; h < head.in_features; ++h) {
      grad.head.weight[o * head.in_features + h] += d_logits[o] * cache.pooled[h];
      d_pooled[h] += head.weight[o * head.in_features + h] * d_logits[o];
    }
  }
  const std::size_t T = cache.blocks.back().output.cols();
  Matrix d_x(head.in_features, T);
  for (std::size_t h = 0; h < head.in_features; ++h) {
    const double g = d_pooled[h] / static_cast<double>(T);
    for (double& v : d_x.row(h)) v = g;
  }
  for (std::size_t b = model.blocks.size(); b-- > 0;) {
    d_x = block_backward(model.blocks[b], cache.blocks[b], d_x, grad.blocks[b]);
  }
}

std::size_t label_index(const Window& w) {
  if (!w.label) throw Error(ErrorCode::DegenerateLabels, "window " + std::to_string(w.id) + " is unlabeled");
  return static_cast<std::size_t>(*w.label);
}

double cross_entropy(std::span<const double> probabilities, std::size_t label) {
  return -std::log(std::max(probabilities[label], 1e-300));
}

// ReLU activation pattern, used to detect finite differences across a kink.
std::vector<bool> activation_pattern(const ExampleCache& cache) {
  std::vector<bool> bits;
  for (const auto& b : cache.blocks) {
    for (double x : b.pre1.flat()) bits.push_back(x > 0.0);
    for (double x : b.pre2.flat()) bits.push_back(x > 0.0);
    for (double x : b.sum.flat()) bits.push_back(x > 0.0);
  }
  return bits;
}

std::pair<double, std::vector<bool>> loss_with_pattern(const TcnModel& model,
                                                       std::span<const Matrix> inputs,
                                                       std::span<const std::size_t> labels) {
  double loss = 0.0;
  std::vector<bool> pattern;
  ExampleCache cache;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto p = forward_cached(model, inputs[i], nullptr, cache);
    loss += cross_entropy(p, labels[i]);
    const auto bits = activation_pattern(cache);
    pattern.insert(pattern.end(), bits.begin(), bits.end());
  }
  return {loss / static_cast<double>(inputs.size()), std::move(pattern)};
}

void fill_uniform(std::vector<double>& values, double bound, Rng& rng) {
  for (double& v : values) v = (2.0 * uniform01(rng) - 1.0) * bound;
}

void init_conv(Conv1d& conv, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(conv.in_channels * conv.kernel_size));
  fill_uniform(conv.weight, bound, rng);
  fill_uniform(conv.bias, bound, rng);
}

void zero(Conv1d& conv) {
  std::fill(conv.weight.begin(), conv.weight.end(), 0.0);
  std::fill(conv.bias.begin(), conv.bias.end(), 0.0);
}

}  // namespace

// Config / structure ----------------------------------------------------------

void TcnConfig::validate() const {
  if (kernel_size < 1) throw Error(ErrorCode::ConfigError, "kernel_size must be >= 1");
  if (levels < 1) throw Error(ErrorCode::ConfigError, "levels must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::ConfigError, "dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::ConfigError, "learning_rate must be > 0");
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  if (hidden_per_level < 1) throw Error(ErrorCode::ConfigError, "hidden_per_level must be >= 1");
  if (in_channels < 1) throw Error(ErrorCode::ConfigError, "in_channels must be >= 1");
  if (n_classes < 2) throw Error(ErrorCode::ConfigError, "n_classes must be >= 2");
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dil)
    : in_channels(in),
      out_channels(out),
      kernel_size(kernel),
      dilation(dil),
      weight(in * out * kernel, 0.0),
      bias(out, 0.0) {}

TcnModel TcnModel::initialize(const TcnConfig& config, Normalizer normalizer) {
  config.validate();
  TcnModel model;
  model.config = config;
  model.normalizer = std::move(normalizer);
  Rng rng = make_rng(config.seed, "tcn.init");
  std::size_t in = config.in_channels;
  for (std::size_t level = 0; level < config.levels; ++level) {
    TemporalBlock block;
    block.dilation = std::size_t{1} << level;
    block.conv1 = Conv1d(in, config.hidden_per_level, config.kernel_size, block.dilation);
    block.conv2 = Conv1d(config.hidden_per_level, config.hidden_per_level, config.kernel_size, block.dilation);
    init_conv(block.conv1, rng);
    init_conv(block.conv2, rng);
    if (in != config.hidden_per_level) {
      block.downsample = Conv1d(in, config.hidden_per_level, 1, 1);
      init_conv(*block.downsample, rng);
    }
    model.blocks.push_back(std::move(block));
    in = config.hidden_per_level;
  }
  model.head.in_features = config.hidden_per_level;
  model.head.out_features = config.n_classes;
  model.head.weight.assign(config.n_classes * config.hidden_per_level, 0.0);
  model.head.bias.assign(config.n_classes, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.hidden_per_level));
  fill_uniform(model.head.weight, bound, rng);
  fill_uniform(model.head.bias, bound, rng);
  return model;
}

TcnModel TcnModel::zeros_like() const {
  TcnModel out = *this;
  for (auto& b : out.blocks) {
    zero(b.conv1);
    zero(b.conv2);
    if (b.downsample) zero(*b.downsample);
  }
  std::fill(out.head.weight.begin(), out.head.weight.end(), 0.0);
  std::fill(out.head.bias.begin(), out.head.bias.end(), 0.0);
  return out;
}

std::vector<ParameterView> parameters(TcnModel& model) {
  std::vector<ParameterView> out;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    auto& block = model.blocks[b];
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    out.push_back({prefix + "conv1.weight", block.conv1.weight});
    out.push_back({prefix + "conv1.bias", block.conv1.bias});
    out.push_back({prefix + "conv2.weight", block.conv2.weight});
    out.push_back({prefix + "conv2.bias", block.conv2.bias});
    if (block.downsample) {
      out.push_back({prefix + "downsample.weight", block.downsample->weight});
      out.push_back({prefix + "downsample.bias", block.downsample->bias});
    }
  }
  out.push_back({"head.weight", model.head.weight});
  out.push_back({"head.bias", model.head.bias});
  return out;
}

// Inference -------------------------------------------------------------------

Matrix causal_dilated_conv(const Matrix& input, const Conv1d& layer) {
  if (input.rows() != layer.in_channels) {
    throw Error(ErrorCode::ShapeError, "convolution expects " + std::to_string(layer.in_channels) +
                                           " input channels, got " + std::to_string(input.rows()));
  }
  if (layer.weight.size() != layer.in_channels * layer.out_channels * layer.kernel_size ||
      layer.bias.size() != layer.out_channels || layer.dilation < 1 || layer.kernel_size < 1) {
    throw Error(ErrorCode::ShapeError, "inconsistent convolution parameters");
  }
  const std::size_t T = input.cols();
  Matrix out(layer.out_channels, T);
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    auto out_row = out.row(o);
    std::fill(out_row.begin(), out_row.end(), layer.bias[o]);
    for (std::size_t i = 0; i < layer.in_channels; ++i) {
      const auto in_row = input.row(i);
      for (std::size_t k = 0; k < layer.kernel_size; ++k) {
        const std::size_t shift = (layer.kernel_size - 1 - k) * layer.dilation;
        if (shift >= T) continue;
        const double w = layer.w(o, i, k);
        for (std::size_t t = shift; t < T; ++t) out_row[t] += w * in_row[t - shift];
      }
    }
  }
  return out;
}

Matrix block_forward(const TemporalBlock& block, const Matrix& input) {
  BlockCache cache;
  return block_forward_cached(block, input, 0.0, nullptr, cache);
}

Matrix feature_map(const TcnModel& model, const Matrix& normalized) {
  if (normalized.rows() != model.config.in_channels) {
    throw Error(ErrorCode::ShapeError, "channel mismatch");
  }
  Matrix x = normalized;
  for (const auto& block : model.blocks) x = block_forward(block, x);
  return x;
}

std::vector<double> forward(const TcnModel& model, const Window& window, bool train_mode, Rng* dropout_rng) {
  if (window.channels() != model.config.in_channels) {
    throw Error(ErrorCode::ShapeError, "model expects " + std::to_string(model.config.in_channels) +
                                           " channels, window has " + std::to_string(window.channels()));
  }
  ExampleCache cache;
  return forward_cached(model, model.normalizer.apply(window).values,
                        train_mode ? dropout_rng : nullptr, cache);
}

std::vector<std::vector<double>> predict_proba(const TcnModel& model, std::span<const Window> windows) {
  std::vector<std::vector<double>> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(forward(model, w));
  return out;
}

Label argmax_label(std::span<const double> probabilities) {
  return probabilities[1] > probabilities[0] ? Label::Anomalous : Label::Healthy;
}

std::vector<Label> predict(const TcnModel& model, std::span<const Window> windows) {
  std::vector<Label> out;
  out.reserve(windows.size());
  for (const auto& p : predict_proba(model, windows)) out.push_back(argmax_label(p));
  return out;
}

// Training --------------------------------------------------------------------

LossAndGradient loss_and_gradient(const TcnModel& model, std::span<const Window> batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "empty batch");
  LossAndGradient result{0.0, model.zeros_like()};
  const double scale = 1.0 / static_cast<double>(batch.size());
  ExampleCache cache;
  for (const auto& w : batch) {
    const std::size_t label = label_index(w);
    const auto p = forward_cached(model, model.normalizer.apply(w).values, nullptr, cache);
    result.loss += cross_entropy(p, label) * scale;
    backward_example(model, cache, label, scale, result.gradient);
  }
  return result;
}

double batch_loss(const TcnModel& model, std::span<const Window> batch) {
  if (batch.empty()) throw Error(ErrorCode::EmptyInput, "empty batch");
  double loss = 0.0;
  for (const auto& w : batch) loss += cross_entropy(forward(model, w), label_index(w));
  return loss / static_cast<double>(batch.size());
}

std::pair<TcnModel, TrainReport> train(const Dataset& ds, const TcnConfig& config_in) {
  const auto started = std::chrono::steady_clock::now();
  if (ds.windows.empty()) throw Error(ErrorCode::EmptyInput, "empty training set");
  TcnConfig config = config_in;
  config.in_channels = ds.windows.front().channels();
  config.validate();

  std::vector<std::size_t> labels;
  labels.reserve(ds.size());
  bool seen[2] = {false, false};
  for (const auto& w : ds.windows) {
    labels.push_back(label_index(w));
    seen[labels.back() == 0 ? 0 : 1] = true;
  }
  if (!seen[0] || !seen[1]) throw Error(ErrorCode::DegenerateLabels, "training set contains a single class");

  TcnModel model = TcnModel::initialize(config, fit_normalizer(ds));
  std::vector<Matrix> inputs;
  inputs.reserve(ds.size());
  for (const auto& w : ds.windows) inputs.push_back(model.normalizer.apply(w).values);

  TcnModel grad = model.zeros_like();
  TcnModel first_moment = model.zeros_like();
  TcnModel second_moment = model.zeros_like();
  auto params = parameters(model);
  auto grads = parameters(grad);
  auto m_views = parameters(first_moment);
  auto v_views = parameters(second_moment);

  Rng shuffle_rng = make_rng(config.seed, "tcn.shuffle");
  Rng dropout_rng = make_rng(config.seed, "tcn.dropout");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport report;
  std::size_t step = 0;
  ExampleCache cache;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (auto& g : grads) std::fill(g.values.begin(), g.values.end(), 0.0);
      for (std::size_t j = start; j < stop; ++j) {
        const std::size_t idx = order[j];
        const auto p = forward_cached(model, inputs[idx], &dropout_rng, cache);
        epoch_loss += cross_entropy(p, labels[idx]);
        backward_example(model, cache, labels[idx], scale, grad);
      }
      ++step;
      const double correction1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
      const double correction2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto values = params[p].values;
        auto g = grads[p].values;
        auto m = m_views[p].values;
        auto v = v_views[p].values;
        for (std::size_t i = 0; i < values.size(); ++i) {
          m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
          v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
          const double m_hat = m[i] / correction1;
          const double v_hat = v[i] / correction2;
          values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEpsilon);
        }
      }
    }
    const double mean_loss = epoch_loss / static_cast<double>(ds.size());
    if (!std::isfinite(mean_loss)) {
      throw Error(ErrorCode::ConfigError, "training diverged at epoch " + std::to_string(epoch + 1));
    }
    report.epoch_loss.push_back(mean_loss);
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto p = forward_cached(model, inputs[i], nullptr, cache);
    correct += static_cast<std::size_t>(argmax_label(p)) == labels[i] ? 1 : 0;
  }
  report.train_accuracy = static_cast<double>(correct) / static_cast<double>(inputs.size());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(model), std::move(report)};
}

GradientCheckReport verify_gradients(const TcnModel& model_in, std::span<const Window> batch, double step) {
  TcnModel model = model_in;
  std::vector<Matrix> inputs;
  std::vector<std::size_t> labels;
  for (const auto& w : batch) {
    inputs.push_back(model.normalizer.apply(w).values);
    labels.push_back(label_index(w));
  }
  const auto analytic = loss_and_gradient(model, batch);
  TcnModel analytic_grad = analytic.gradient;
  const auto grad_views = parameters(analytic_grad);
  auto param_views = parameters(model);
  const auto base_pattern = loss_with_pattern(model, inputs, labels).second;

  GradientCheckReport report;
  for (std::size_t p = 0; p < param_views.size(); ++p) {
    GradientCheckEntry entry{param_views[p].name, 0.0, 0, 0};
    auto values = param_views[p].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const auto [plus, plus_pattern] = loss_with_pattern(model, inputs, labels);
      values[i] = original - step;
      const auto [minus, minus_pattern] = loss_with_pattern(model, inputs, labels);
      values[i] = original;
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++entry.skipped;
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double exact = grad_views[p].values[i];
      const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
      entry.max_relative_error = std::max(entry.max_relative_error, std::abs(numeric - exact) / scale);
      ++entry.checked;
    }
    report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// Persistence -----------------------------------------------------------------

namespace {

json conv_to_json(const Conv1d& conv) {
  json weight = json::array();
  for (std::size_t o = 0; o < conv.out_channels; ++o) {
    json per_out = json::array();
    for (std::size_t i = 0; i < conv.in_channels; ++i) {
      json taps = json::array();
      for (std::size_t k = 0; k < conv.kernel_size; ++k) taps.push_back(conv.w(o, i, k));
      per_out.push_back(std::move(taps));
    }
    weight.push_back(std::move(per_out));
  }
  return {{"dilation", conv.dilation}, {"weight", std::move(weight)}, {"bias", conv.bias}};
}

Conv1d conv_from_json(const json& tensors, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::size_t dilation) {
  if (!tensors.contains(name)) throw Error(ErrorCode::MalformedModel, "missing tensor " + name);
  const json& doc = tensors.at(name);
  Conv1d conv(in, out, kernel, dilation);
  const auto weight = doc.at("weight").get<std::vector<std::vector<std::vector<double>>>>();
  if (weight.size() != out) throw Error(ErrorCode::MalformedModel, name + ": wrong output size");
  for (std::size_t o = 0; o < out; ++o) {
    if (weight[o].size() != in) throw Error(ErrorCode::MalformedModel, name + ": wrong input size");
    for (std::size_t i = 0; i < in; ++i) {
      if (weight[o][i].size() != kernel) throw Error(ErrorCode::MalformedModel, name + ": wrong kernel size");
      for (std::size_t k = 0; k < kernel; ++k) conv.w(o, i, k) = weight[o][i][k];
    }
  }
  conv.bias = doc.at("bias").get<std::vector<double>>();
  if (conv.bias.size() != out) throw Error(ErrorCode::MalformedModel, name + ": wrong bias size");
  if (doc.at("dilation").get<std::size_t>() != dilation) {
    throw Error(ErrorCode::MalformedModel, name + ": unexpected dilation");
  }
  return conv;
}

TcnConfig config_from_json(const json& doc) {
  TcnConfig c;
  c.epochs = doc.at("epochs").get<std::size_t>();
  c.batch_size = doc.at("batch_size").get<std::size_t>();
  c.dropout = doc.at("dropout").get<double>();
  c.kernel_size = doc.at("kernel_size").get<std::size_t>();
  c.levels = doc.at("levels").get<std::size_t>();
  c.learning_rate = doc.at("learning_rate").get<double>();
  c.hidden_per_level = doc.at("hidden_per_level").get<std::size_t>();
  c.in_channels = doc.at("in_channels").get<std::size_t>();
  c.n_classes = doc.at("n_classes").get<std::size_t>();
  c.seed = doc.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

json config_to_json(const TcnConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"dropout", c.dropout},
          {"kernel_size", c.kernel_size},
          {"levels", c.levels},
          {"learning_rate", c.learning_rate},
          {"hidden_per_level", c.hidden_per_level},
          {"in_channels", c.in_channels},
          {"n_classes", c.n_classes},
          {"seed", c.seed}};
}

json model_to_json(const TcnModel& model) {
  json tensors = json::object();
  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const auto& block = model.blocks[b];
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    tensors[prefix + "conv1"] = conv_to_json(block.conv1);
    tensors[prefix + "conv2"] = conv_to_json(block.conv2);
    if (block.downsample) tensors[prefix + "downsample"] = conv_to_json(*block.downsample);
  }
  json head_weight = json::array();
  for (std::size_t o = 0; o < model.head.out_features; ++o) {
    head_weight.push_back(std::vector<double>(
        model.head.weight.begin() + static_cast<std::ptrdiff_t>(o * model.head.in_features),
        model.head.weight.begin() + static_cast<std::ptrdiff_t>((o + 1) * model.head.in_features)));
  }
  tensors["head"] = {{"weight", std::move(head_weight)}, {"bias", model.head.bias}};
  return {{"format", "whatif-tcn"},
          {"version", kModelFormatVersion},
          {"config", config_to_json(model.config)},
          {"normalizer", {{"mean", model.normalizer.mean}, {"std", model.normalizer.std}}},
          {"tensors", std::move(tensors)}};
}

TcnModel model_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("version")) throw Error(ErrorCode::MalformedModel, "missing version");
  const auto& version = doc.at("version");
  if (!version.is_string() || version.get<std::string>() != kModelFormatVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "model format version " + version.dump());
  }
  try {
    TcnModel model;
    model.config = config_from_json(doc.at("config"));
    model.config.validate();
    model.normalizer.mean = doc.at("normalizer").at("mean").get<std::vector<double>>();
    model.normalizer.std = doc.at("normalizer").at("std").get<std::vector<double>>();
    if (model.normalizer.mean.size() != model.config.in_channels ||
        model.normalizer.std.size() != model.config.in_channels) {
      throw Error(ErrorCode::MalformedModel, "normalizer does not match in_channels");
    }
    const json& tensors = doc.at("tensors");
    const auto& c = model.config;
    std::size_t in = c.in_channels;
    for (std::size_t level = 0; level < c.levels; ++level) {
      TemporalBlock block;
      block.dilation = std::size_t{1} << level;
      const std::string prefix = "blocks." + std::to_string(level) + ".";
      block.conv1 = conv_from_json(tensors, prefix + "conv1", in, c.hidden_per_level, c.kernel_size, block.dilation);
      block.conv2 = conv_from_json(tensors, prefix + "conv2", c.hidden_per_level, c.hidden_per_level,
                                   c.kernel_size, block.dilation);
      if (in != c.hidden_per_level) {
        block.downsample = conv_from_json(tensors, prefix + "downsample", in, c.hidden_per_level, 1, 1);
      }
      model.blocks.push_back(std::move(block));
      in = c.hidden_per_level;
    }
    if (!tensors.contains("head")) throw Error(ErrorCode::MalformedModel, "missing tensor head");
    model.head.in_features = c.hidden_per_level;
    model.head.out_features = c.n_classes;
    const auto rows = tensors.at("head").at("weight").get<std::vector<std::vector<double>>>();
    if (rows.size() != c.n_classes) throw Error(ErrorCode::MalformedModel, "head: wrong output size");
    for (const auto& row : rows) {
      if (row.size() != c.hidden_per_level) throw Error(ErrorCode::MalformedModel, "head: wrong input size");
      model.head.weight.insert(model.head.weight.end(), row.begin(), row.end());
    }
    model.head.bias = tensors.at("head").at("bias").get<std::vector<double>>();
    if (model.head.bias.size() != c.n_classes) throw Error(ErrorCode::MalformedModel, "head: wrong bias size");
    for (auto& view : parameters(model)) {
      for (double v : view.values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::MalformedModel, view.name + " has a non-finite value");
      }
    }
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedModel, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw Error(ErrorCode::MalformedModel, e.what());
    throw;
  }
}

void save_model(const TcnModel& model, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MalformedModel, "cannot write " + path.string());
  out << model_to_json(model).dump(1) << '\n';
}

TcnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "no model at " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedModel, path.string() + ": " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace whatif
