#include "whatif/cli.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "whatif/balance.hpp"
#include "whatif/cf.hpp"
#include "whatif/data.hpp"
#include "whatif/error.hpp"
#include "whatif/eval.hpp"
#include "whatif/service.hpp"
#include "whatif/tcn.hpp"

namespace whatif::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  std::size_t jobs = 1;
  std::string format = "table";

  // inputs
  std::string input;
  std::string data;
  std::string query_data;
  std::string model;
  std::size_t window_len = 2560;

  SyntheticConfig synth;
  double test_fraction = 0.0;
  SmoteConfig smote;
  TcnConfig tcn;
  std::size_t folds = 5;

  std::size_t window_id = 0;
  int target_class = 0;
  std::size_t distractors = 3;
  std::string lock;

  std::string data_dir = "data";
  std::string bind = "127.0.0.1:8080";
  std::size_t cache_size = 4;
};

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::MalformedFile, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

fs::path require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw Error(ErrorCode::ConfigError, "--out is required");
  return fs::absolute(cfg.out);
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "---";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << *v;
  return s.str();
}

void add_tcn_flags(CLI::App& cmd, TcnConfig& tcn) {
  cmd.add_option("--epochs", tcn.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--batch-size", tcn.batch_size, "Mini-batch size")->capture_default_str();
  cmd.add_option("--dropout", tcn.dropout, "Dropout rate")->capture_default_str();
  cmd.add_option("--kernel-size", tcn.kernel_size, "Convolution kernel size")->capture_default_str();
  cmd.add_option("--levels", tcn.levels, "Temporal blocks")->capture_default_str();
  cmd.add_option("--learning-rate", tcn.learning_rate, "Adam learning rate")->capture_default_str();
  cmd.add_option("--hidden", tcn.hidden_per_level, "Hidden channels per level")->capture_default_str();
}

void add_smote_flags(CLI::App& cmd, SmoteConfig& smote) {
  cmd.add_option("--smote-k", smote.k_neighbors, "SMOTE nearest neighbours")->capture_default_str();
  cmd.add_option("--smote-ratio", smote.target_ratio, "Anomalous/healthy ratio after SMOTE")->capture_default_str();
}

std::set<std::size_t> parse_locks(const std::string& spec, const std::vector<std::string>& names) {
  std::set<std::size_t> locks;
  if (spec.empty()) return locks;
  if (spec == "all") {
    for (std::size_t c = 0; c < names.size(); ++c) locks.insert(c);
    return locks;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto it = std::find(names.begin(), names.end(), item);
    if (it != names.end()) {
      locks.insert(static_cast<std::size_t>(it - names.begin()));
      continue;
    }
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), idx);
    if (ec != std::errc() || ptr != item.data() + item.size() || idx >= names.size()) {
      throw Error(ErrorCode::ConfigError, "unknown channel '" + item + "' in --lock");
    }
    locks.insert(idx);
  }
  return locks;
}

// Subcommands -----------------------------------------------------------------

int cmd_ingest(const RunConfig& cfg, std::ostream& out) {
  const auto ds = load_pronostia_dir(cfg.input, cfg.window_len);
  save_dataset(ds, require_out(cfg));
  out << "ingested " << ds.size() << " windows from " << cfg.input << '\n';
  return 0;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  SyntheticConfig synth = cfg.synth;
  synth.seed = cfg.seed;
  const auto ds = generate_synthetic_bearing(synth);
  save_dataset(ds, require_out(cfg));
  out << "generated " << ds.size() << " synthetic windows\n";
  return 0;
}

int cmd_label(const RunConfig& cfg, std::ostream& out) {
  const auto labeled = label_dataset(load_dataset(cfg.data));
  const auto dir = require_out(cfg);
  std::size_t anomalous = 0;
  for (const auto& w : labeled.windows) anomalous += *w.label == Label::Anomalous ? 1 : 0;
  if (cfg.test_fraction > 0.0) {
    const auto [train_part, test_part] = train_test_split(labeled, cfg.test_fraction, cfg.seed);
    save_dataset(train_part, dir / "train");
    save_dataset(test_part, dir / "test");
    out << "labeled " << labeled.size() << " windows (" << anomalous << " anomalous); train "
        << train_part.size() << ", test " << test_part.size() << '\n';
  } else {
    save_dataset(labeled, dir);
    out << "labeled " << labeled.size() << " windows (" << anomalous << " anomalous)\n";
  }
  return 0;
}

int cmd_balance(const RunConfig& cfg, std::ostream& out) {
  SmoteConfig smote = cfg.smote;
  smote.seed = cfg.seed;
  const auto input = load_dataset(cfg.data);
  const auto balanced = smote_oversample(input, smote);
  save_dataset(balanced, require_out(cfg));
  out << "balanced " << input.size() << " -> " << balanced.size() << " windows\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  TcnConfig tcn = cfg.tcn;
  tcn.seed = cfg.seed;
  const auto ds = load_dataset(cfg.data);
  const auto [model, report] = train(ds, tcn);
  const auto dir = require_out(cfg);
  save_model(model, dir / "model.json");
  const json doc = {{"epoch_loss", report.epoch_loss}, {"train_accuracy", report.train_accuracy}};
  write_json(dir / "train_report.json", doc);
  if (cfg.format == "structured") {
    out << doc.dump() << '\n';
  } else {
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
      out << "epoch " << (e + 1) << "  loss " << std::fixed << std::setprecision(6) << report.epoch_loss[e] << '\n';
    }
    out << "train accuracy " << std::setprecision(4) << report.train_accuracy << "  (" << std::setprecision(2)
        << report.wall_seconds << " s)\n";
  }
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  const auto model = load_model(cfg.model);
  const auto ds = load_dataset(cfg.data);
  const auto cm = confusion(labels_of(ds), predict(model, ds.windows));
  const auto report = metrics(cm);
  const json doc = {{"confusion", to_json(cm)}, {"metrics", to_json(report)}};
  write_json(require_out(cfg) / "metrics.json", doc);
  if (cfg.format == "structured") {
    out << doc.dump() << '\n';
  } else {
    out << "tp " << cm.tp << "  fp " << cm.fp << "  tn " << cm.tn << "  fn " << cm.fn << '\n'
        << "Accuracy   " << cell(report.accuracy) << '\n'
        << "Recall     " << cell(report.recall) << '\n'
        << "Precision  " << cell(report.precision) << '\n'
        << "F-Score    " << cell(report.f_score) << '\n'
        << "G-Score    " << cell(report.g_score) << '\n';
  }
  return 0;
}

int cmd_kfold(const RunConfig& cfg, std::ostream& out) {
  KFoldOptions options;
  options.folds = cfg.folds;
  options.tcn = cfg.tcn;
  options.smote = cfg.smote;
  options.seed = cfg.seed;
  options.jobs = cfg.jobs;
  const auto report = kfold(load_dataset(cfg.data), options);
  const json doc = to_json(report);
  write_json(require_out(cfg) / "kfold.json", doc);
  if (cfg.format == "structured") {
    out << doc.dump() << '\n';
  } else {
    out << std::left << std::setw(10) << "Fold";
    for (std::size_t f = 0; f < report.fold_accuracy.size(); ++f) out << std::right << std::setw(8) << (f + 1);
    out << std::setw(8) << "Mean" << std::setw(8) << "StD" << '\n';
    out << std::left << std::setw(10) << "Accuracy" << std::right << std::fixed << std::setprecision(2);
    for (double a : report.fold_accuracy) out << std::setw(8) << a;
    out << std::setw(8) << report.mean << std::setw(8) << report.std << '\n';
  }
  return 0;
}

int cmd_explain(const RunConfig& cfg, std::ostream& out) {
  auto model = std::make_shared<const TcnModel>(load_model(cfg.model));
  const auto train_ds = load_dataset(cfg.data);
  const auto query_ds = cfg.query_data.empty() ? train_ds : load_dataset(cfg.query_data);
  const auto it = std::find_if(query_ds.windows.begin(), query_ds.windows.end(),
                               [&](const Window& w) { return w.id == cfg.window_id; });
  if (it == query_ds.windows.end()) throw Error(ErrorCode::NotFound, "window " + std::to_string(cfg.window_id));
  if (cfg.target_class != 0 && cfg.target_class != 1) throw Error(ErrorCode::ConfigError, "--target-class must be 0 or 1");

  const Explainer explainer = fit_explainer(model, train_ds);
  CounterfactualQuery query;
  query.instance = *it;
  query.target = static_cast<Label>(cfg.target_class);
  query.num_distractors = cfg.distractors;
  query.locked_channels = parse_locks(cfg.lock, query_ds.channel_names);

  const auto cf = greedy_counterfactual(explainer, query);
  const auto report = counterfactual_report(cf, query.instance, query_ds.channel_names);
  const json doc = {{"counterfactual", to_json(cf)}, {"report", to_json(report)}};
  const auto dir = require_out(cfg);
  write_json(dir / "counterfactual.json", doc);

  // Plot-ready series: preceding window as context, the actual window, the counterfactual.
  std::ofstream series(dir / "counterfactual_series.csv");
  series << "channel,series,t,value\n";
  const Window* context = it == query_ds.windows.begin() ? nullptr : &*(it - 1);
  for (std::size_t c = 0; c < query.instance.channels(); ++c) {
    const auto& name = query_ds.channel_names[c];
    char buf[32];
    auto emit = [&](const char* label, const Window& w, long offset) {
      for (std::size_t t = 0; t < w.timesteps(); ++t) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), w.values(c, t));
        series << name << ',' << label << ',' << static_cast<long>(t) + offset << ',' << std::string(buf, ptr) << '\n';
      }
    };
    if (context) emit("context", *context, -static_cast<long>(context->timesteps()));
    emit("actual", query.instance, 0);
    emit("counterfactual", cf.window, 0);
  }

  if (cfg.format == "structured") {
    out << doc.dump() << '\n';
  } else {
    out << "window " << cf.window.id << " -> class " << static_cast<int>(cf.target);
    if (cf.substituted_channels.empty()) {
      out << ": already classified as target, no change\n";
    } else {
      out << " using distractor " << *cf.distractor_id << " (distance " << std::setprecision(4) << cf.distance
          << ", sparsity " << report.sparsity << ")\n";
      for (const auto& line : report.narrative) out << "  " << line << '\n';
    }
  }
  return 0;
}

int cmd_serve(const RunConfig& cfg, std::ostream& out) {
  const auto colon = cfg.bind.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "--bind must be host:port");
  const std::string host = cfg.bind.substr(0, colon);
  const int port = std::stoi(cfg.bind.substr(colon + 1));
  Service service(ServiceConfig{cfg.data_dir, cfg.cache_size});
  HttpServer server(service);
  if (!server.bind(host, port)) throw Error(ErrorCode::ConfigError, "cannot bind " + cfg.bind);
  out << "serving " << fs::absolute(cfg.data_dir).string() << " on http://" << cfg.bind << std::endl;
  server.listen_after_bind();
  return 0;
}

const char* env_or(const char* name, const char* fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  cfg.data_dir = env_or("WHATIF_DATA_DIR", "data");
  cfg.bind = env_or("WHATIF_BIND", "127.0.0.1:8080");
  try {
    cfg.cache_size = static_cast<std::size_t>(std::stoul(env_or("WHATIF_EXPLAINER_CACHE", "4")));
  } catch (const std::exception&) {
    err << "whatif: WHATIF_EXPLAINER_CACHE must be a non-negative integer\n";
    return 2;
  }

  CLI::App app{"Anomaly detection and counterfactual what-if analysis for bearing vibration data", "whatif"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", cfg.seed, "Seed for every stochastic component")->capture_default_str();
  app.add_option("--out", cfg.out, "Output directory for artifacts");
  app.add_option("--jobs", cfg.jobs, "Parallel folds for kfold")->capture_default_str();
  app.add_option("--format", cfg.format, "Report format on stdout")
      ->check(CLI::IsMember({"table", "structured"}))
      ->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "Load a directory of PRONOSTIA acc_*.csv files");
  ingest->add_option("--input", cfg.input, "Directory with acc_*.csv files")->required();
  ingest->add_option("--window-len", cfg.window_len, "Rows per file")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic run-to-failure dataset");
  synth->add_option("--windows", cfg.synth.n_windows)->capture_default_str();
  synth->add_option("--window-len", cfg.synth.window_len)->capture_default_str();
  synth->add_option("--channels", cfg.synth.channels)->capture_default_str();
  synth->add_option("--amplitude", cfg.synth.base_amplitude)->capture_default_str();
  synth->add_option("--onset", cfg.synth.degradation_onset, "Degradation onset as a fraction of the run")
      ->capture_default_str();
  synth->add_option("--rate", cfg.synth.degradation_rate, "Amplitude growth per window")->capture_default_str();
  synth->add_option("--noise", cfg.synth.noise_std)->capture_default_str();

  auto* label = app.add_subcommand("label", "Three-sigma RMS labeling with suffix smoothing");
  label->add_option("--data", cfg.data, "Dataset directory")->required();
  label->add_option("--test-fraction", cfg.test_fraction, "Also write a seeded train/test split");

  auto* balance = app.add_subcommand("balance", "SMOTE oversampling of the anomalous class");
  balance->add_option("--data", cfg.data, "Labeled dataset directory")->required();
  add_smote_flags(*balance, cfg.smote);

  auto* train_cmd = app.add_subcommand("train", "Train a TCN classifier");
  train_cmd->add_option("--data", cfg.data, "Labeled (balanced) dataset directory")->required();
  add_tcn_flags(*train_cmd, cfg.tcn);

  auto* evaluate = app.add_subcommand("evaluate", "Confusion-matrix metrics for a model on a dataset");
  evaluate->add_option("--model", cfg.model, "Model file")->required();
  evaluate->add_option("--data", cfg.data, "Labeled dataset directory")->required();

  auto* kfold_cmd = app.add_subcommand("kfold", "k-fold cross-validation with per-fold SMOTE");
  kfold_cmd->add_option("--data", cfg.data, "Labeled dataset directory")->required();
  kfold_cmd->add_option("--folds", cfg.folds)->capture_default_str();
  add_tcn_flags(*kfold_cmd, cfg.tcn);
  add_smote_flags(*kfold_cmd, cfg.smote);

  auto* explain = app.add_subcommand("explain", "Counterfactual explanation for one window");
  explain->add_option("--model", cfg.model, "Model file")->required();
  explain->add_option("--data", cfg.data, "Labeled training dataset (distractor source)")->required();
  explain->add_option("--query-data", cfg.query_data, "Dataset holding the window to explain (default --data)");
  explain->add_option("--window-id", cfg.window_id)->required();
  explain->add_option("--target-class", cfg.target_class)->capture_default_str();
  explain->add_option("--distractors", cfg.distractors)->capture_default_str();
  explain->add_option("--lock", cfg.lock, "Channels to keep fixed: indices or names, comma separated, or 'all'");

  auto* serve = app.add_subcommand("serve", "Run the what-if HTTP service");
  serve->add_option("--data-dir", cfg.data_dir, "Data directory (env WHATIF_DATA_DIR)")->capture_default_str();
  serve->add_option("--bind", cfg.bind, "host:port (env WHATIF_BIND)")->capture_default_str();
  serve->add_option("--cache-size", cfg.cache_size, "Explainer cache entries (env WHATIF_EXPLAINER_CACHE)")
      ->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  const auto* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    if (name == "ingest") return cmd_ingest(cfg, out);
    if (name == "synth") return cmd_synth(cfg, out);
    if (name == "label") return cmd_label(cfg, out);
    if (name == "balance") return cmd_balance(cfg, out);
    if (name == "train") return cmd_train(cfg, out);
    if (name == "evaluate") return cmd_evaluate(cfg, out);
    if (name == "kfold") return cmd_kfold(cfg, out);
    if (name == "explain") return cmd_explain(cfg, out);
    if (name == "serve") return cmd_serve(cfg, out);
  } catch (const Error& e) {
    err << "whatif " << name << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "whatif " << name << ": " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace whatif::cli
