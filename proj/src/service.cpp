#include "whatif/service.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>

#include "httplib.h"
#include "whatif/error.hpp"

namespace whatif {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::AnomalyDetected: return "AnomalyDetected";
    case EventKind::ExplainRequested: return "ExplainRequested";
    case EventKind::CounterfactualReturned: return "CounterfactualReturned";
    case EventKind::Accepted: return "Accepted";
    case EventKind::Rejected: return "Rejected";
  }
  return "Unknown";
}

struct Service::Session {
  std::string id;
  std::string dataset_id;
  std::string model_id;
  std::string distractor_dataset_id;
  std::shared_ptr<const Dataset> dataset;
  std::shared_ptr<const Explainer> explainer;
  fs::path dir;

  // Guards the event file and the derived state below.
  std::mutex mutex;
  std::size_t next_seq = 0;
  std::size_t next_request = 1;
  std::set<std::size_t> flagged_windows;
  std::map<std::string, bool> requests;  // request id -> decided

  void append(EventKind kind, json payload) {
    const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    json event = {{"seq", next_seq},
                  {"timestamp_ms", now},
                  {"kind", std::string(to_string(kind))},
                  {"payload", std::move(payload)}};
    std::ofstream out(dir / "events.ndjson", std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorCode::MalformedFile, "cannot append to event log of session " + id);
    out << event.dump() << '\n';
    out.flush();
    absorb(event);
  }

  // Updates derived state from one event; shared by append and reload.
  void absorb(const json& event) {
    next_seq = event.at("seq").get<std::size_t>() + 1;
    const auto kind = event.at("kind").get<std::string>();
    const json& payload = event.at("payload");
    if (kind == "AnomalyDetected") {
      flagged_windows.insert(payload.at("window_id").get<std::size_t>());
    } else if (kind == "ExplainRequested") {
      const auto rid = payload.at("request_id").get<std::string>();
      requests.emplace(rid, false);
      next_request = std::max(next_request, std::stoul(rid.substr(1)) + 1);
    } else if (kind == "Accepted" || kind == "Rejected") {
      requests[payload.at("request_id").get<std::string>()] = true;
    }
  }

  std::vector<json> read_events() const {
    std::vector<json> out;
    std::ifstream in(dir / "events.ndjson", std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
  }
};

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::RangeError:
    case ErrorCode::ConfigError:
    case ErrorCode::MalformedFile: return 400;
    case ErrorCode::ShapeError:
    case ErrorCode::EmptyClassIndex:
    case ErrorCode::DegenerateLabels: return 422;
    default: return 500;
  }
}

Response error_response(const Error& e) {
  return {status_for(e.code()), {{"error", std::string(to_string(e.code()))}, {"message", e.what()}}};
}

template <typename F>
Response guarded(F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    return error_response(e);
  } catch (const json::exception& e) {
    return {400, {{"error", "BadRequest"}, {"message", e.what()}}};
  }
}

std::string require_string(const json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) {
    throw Error(ErrorCode::ConfigError, std::string("missing string field '") + key + "'");
  }
  return body.at(key).get<std::string>();
}

bool valid_id(const std::string& id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  }) && id != "." && id != "..";
}

json window_values(const Window& w) {
  json values = json::array();
  for (std::size_t c = 0; c < w.channels(); ++c) {
    values.push_back(std::vector<double>(w.values.row(c).begin(), w.values.row(c).end()));
  }
  return values;
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)) {
  fs::create_directories(config_.data_dir / "datasets");
  fs::create_directories(config_.data_dir / "models");
  fs::create_directories(config_.data_dir / "sessions");
  for (const auto& entry : fs::directory_iterator(config_.data_dir / "sessions")) {
    const auto name = entry.path().filename().string();
    if (name.size() > 1 && name[0] == 's') {
      try {
        next_session_ = std::max<std::size_t>(next_session_, std::stoul(name.substr(1)) + 1);
      } catch (const std::exception&) {
      }
    }
  }
  if (config_.explainer_cache_size == 0) config_.explainer_cache_size = 1;
}

Service::~Service() = default;

std::shared_ptr<const Dataset> Service::dataset(const std::string& id) {
  if (!valid_id(id)) throw Error(ErrorCode::NotFound, "dataset '" + id + "'");
  std::lock_guard lock(mutex_);
  if (auto it = datasets_.find(id); it != datasets_.end()) return it->second;
  const auto dir = config_.data_dir / "datasets" / id;
  if (!fs::exists(dir / "manifest")) throw Error(ErrorCode::NotFound, "dataset '" + id + "'");
  auto ds = std::make_shared<const Dataset>(load_dataset(dir));
  datasets_.emplace(id, ds);
  return ds;
}

std::shared_ptr<const TcnModel> Service::model(const std::string& id) {
  if (!valid_id(id)) throw Error(ErrorCode::NotFound, "model '" + id + "'");
  std::lock_guard lock(mutex_);
  if (auto it = models_.find(id); it != models_.end()) return it->second;
  const auto path = config_.data_dir / "models" / (id + ".json");
  if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "model '" + id + "'");
  auto m = std::make_shared<const TcnModel>(load_model(path));
  models_.emplace(id, m);
  return m;
}

std::shared_ptr<const Explainer> Service::explainer(const std::string& model_id, const std::string& dataset_id) {
  const std::string key = model_id + '\x1f' + dataset_id;
  {
    std::lock_guard lock(mutex_);
    for (auto it = explainer_cache_.begin(); it != explainer_cache_.end(); ++it) {
      if (it->first == key) {
        explainer_cache_.splice(explainer_cache_.begin(), explainer_cache_, it);
        return explainer_cache_.front().second;
      }
    }
  }
  auto fitted = std::make_shared<const Explainer>(fit_explainer(model(model_id), *dataset(dataset_id)));
  std::lock_guard lock(mutex_);
  explainer_cache_.emplace_front(key, fitted);
  while (explainer_cache_.size() > config_.explainer_cache_size) explainer_cache_.pop_back();
  return fitted;
}

std::shared_ptr<Service::Session> Service::session(const std::string& id) {
  if (!valid_id(id)) throw Error(ErrorCode::NotFound, "session '" + id + "'");
  {
    std::lock_guard lock(mutex_);
    if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
  }
  const auto dir = config_.data_dir / "sessions" / id;
  std::ifstream in(dir / "session.json");
  if (!in) throw Error(ErrorCode::NotFound, "session '" + id + "'");
  const json meta = json::parse(in);
  auto s = std::make_shared<Session>();
  s->id = id;
  s->dir = dir;
  s->dataset_id = meta.at("dataset_id").get<std::string>();
  s->model_id = meta.at("model_id").get<std::string>();
  s->distractor_dataset_id = meta.at("distractor_dataset_id").get<std::string>();
  s->dataset = dataset(s->dataset_id);
  s->explainer = explainer(s->model_id, s->distractor_dataset_id);
  for (const auto& event : s->read_events()) s->absorb(event);

  std::lock_guard lock(mutex_);
  return sessions_.emplace(id, std::move(s)).first->second;
}

Response Service::list_datasets() const {
  json out = json::array();
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(config_.data_dir / "datasets")) {
    if (fs::exists(entry.path() / "manifest")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    std::ifstream in(dir / "manifest");
    try {
      const json manifest = json::parse(in);
      out.push_back({{"id", dir.filename().string()},
                     {"channels", manifest.at("channels")},
                     {"window_len", manifest.at("window_len")},
                     {"window_count", manifest.value("window_count", json(nullptr))},
                     {"labeled", !manifest.at("labeling").is_null()}});
    } catch (const json::exception&) {
      continue;
    }
  }
  return {200, {{"datasets", std::move(out)}}};
}

Response Service::list_models() const {
  json out = json::array();
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(config_.data_dir / "models")) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream in(file);
    try {
      const json doc = json::parse(in);
      out.push_back({{"id", file.stem().string()},
                     {"version", doc.at("version")},
                     {"config", doc.at("config")}});
    } catch (const json::exception&) {
      continue;
    }
  }
  return {200, {{"models", std::move(out)}}};
}

Response Service::create_session(const json& body) {
  return guarded([&]() -> Response {
    const auto dataset_id = require_string(body, "dataset_id");
    const auto model_id = require_string(body, "model_id");
    const auto distractor_id =
        body.contains("distractor_dataset_id") ? require_string(body, "distractor_dataset_id") : dataset_id;
    const auto ds = dataset(dataset_id);
    const auto m = model(model_id);
    if (ds->channels() != m->config.in_channels) {
      throw Error(ErrorCode::ShapeError, "dataset has " + std::to_string(ds->channels()) +
                                             " channels, model expects " +
                                             std::to_string(m->config.in_channels));
    }
    auto s = std::make_shared<Session>();
    s->dataset_id = dataset_id;
    s->model_id = model_id;
    s->distractor_dataset_id = distractor_id;
    s->dataset = ds;
    s->explainer = explainer(model_id, distractor_id);

    std::lock_guard lock(mutex_);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%06zu", next_session_++);
    s->id = buf;
    s->dir = config_.data_dir / "sessions" / s->id;
    fs::create_directories(s->dir);
    {
      std::ofstream out(s->dir / "session.json");
      out << json{{"id", s->id},
                  {"dataset_id", dataset_id},
                  {"model_id", model_id},
                  {"distractor_dataset_id", distractor_id}}
                 .dump(2)
          << '\n';
      std::ofstream(s->dir / "events.ndjson", std::ios::app);
    }
    sessions_.emplace(s->id, s);
    return {201, {{"session_id", s->id}, {"dataset_id", dataset_id}, {"model_id", model_id},
                  {"distractor_dataset_id", distractor_id}}};
  });
}

Response Service::detect(const std::string& session_id, std::optional<std::size_t> from,
                         std::optional<std::size_t> to) {
  return guarded([&]() -> Response {
    auto s = session(session_id);
    const auto& windows = s->dataset->windows;
    const std::size_t begin = from.value_or(0);
    const std::size_t end = to.value_or(windows.size());
    if (begin > end || end > windows.size()) {
      throw Error(ErrorCode::RangeError, "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                             ") outside dataset of " + std::to_string(windows.size()));
    }
    const auto& m = s->explainer->model();
    json out = json::array();
    std::lock_guard lock(s->mutex);
    for (std::size_t i = begin; i < end; ++i) {
      const Window& w = windows[i];
      const auto probs = forward(m, w);
      const Label predicted = argmax_label(probs);
      if (predicted == Label::Anomalous && !s->flagged_windows.contains(w.id)) {
        s->append(EventKind::AnomalyDetected, {{"window_id", w.id}, {"probabilities", probs}});
      }
      out.push_back({{"id", w.id},
                     {"label", w.label ? json(static_cast<int>(*w.label)) : json(nullptr)},
                     {"prediction", static_cast<int>(predicted)},
                     {"probabilities", probs},
                     {"values", window_values(w)}});
    }
    return {200, {{"session_id", s->id}, {"channels", s->dataset->channel_names}, {"windows", std::move(out)}}};
  });
}

json Service::run_explain(const Session& s, const json& request) const {
  const auto window_id = request.at("window_id").get<std::size_t>();
  const auto& windows = s.dataset->windows;
  const auto it = std::find_if(windows.begin(), windows.end(), [&](const Window& w) { return w.id == window_id; });
  if (it == windows.end()) throw Error(ErrorCode::NotFound, "window " + std::to_string(window_id));

  CounterfactualQuery query;
  query.instance = *it;
  const int target = request.at("target_class").get<int>();
  if (target != 0 && target != 1) throw Error(ErrorCode::RangeError, "target_class must be 0 or 1");
  query.target = static_cast<Label>(target);
  query.num_distractors = request.at("num_distractors").get<std::size_t>();
  for (const auto& c : request.at("locked_channels")) query.locked_channels.insert(c.get<std::size_t>());

  json payload = {{"request_id", request.at("request_id")}};
  try {
    const auto cf = greedy_counterfactual(*s.explainer, query);
    payload["status"] = "ok";
    payload["counterfactual"] = to_json(cf);
    payload["report"] = to_json(counterfactual_report(cf, query.instance, s.dataset->channel_names));
  } catch (const NoCounterfactualError& e) {
    json suggestions = json::array();
    if (!e.locked_channels.empty()) suggestions.push_back("unlock one or more of the locked channels");
    suggestions.push_back("raise num_distractors above " + std::to_string(e.distractors_tried));
    payload["status"] = "no_counterfactual";
    payload["advice"] = {{"message", e.what()},
                         {"locked_channels", e.locked_channels},
                         {"distractors_tried", e.distractors_tried},
                         {"suggestions", std::move(suggestions)}};
  }
  return payload;
}

Response Service::explain(const std::string& session_id, const json& body) {
  return guarded([&]() -> Response {
    auto s = session(session_id);
    if (!body.is_object() || !body.contains("window_id")) throw Error(ErrorCode::ConfigError, "missing window_id");
    json request = {{"window_id", body.at("window_id").get<std::size_t>()},
                    {"target_class", body.value("target_class", 0)},
                    {"locked_channels", body.value("locked_channels", json::array())},
                    {"num_distractors", body.value("num_distractors", std::size_t{3})}};
    for (const auto& c : request.at("locked_channels")) {
      if (!c.is_number_integer() || c.get<long long>() < 0 || c.get<std::size_t>() >= s->dataset->channels()) {
        throw Error(ErrorCode::RangeError, "locked channel " + c.dump() + " does not exist");
      }
    }
    if (const auto& t = request.at("target_class"); !t.is_number_integer() || (t != 0 && t != 1)) {
      throw Error(ErrorCode::RangeError, "target_class must be 0 or 1");
    }
    const auto& windows = s->dataset->windows;
    const auto wid = request.at("window_id").get<std::size_t>();
    if (std::none_of(windows.begin(), windows.end(), [&](const Window& w) { return w.id == wid; })) {
      throw Error(ErrorCode::NotFound, "window " + std::to_string(wid));
    }
    std::lock_guard lock(s->mutex);
    request["request_id"] = "r" + std::to_string(s->next_request++);
    s->append(EventKind::ExplainRequested, request);
    json payload = run_explain(*s, request);
    s->append(EventKind::CounterfactualReturned, payload);
    return {200, std::move(payload)};
  });
}

Response Service::record_decision(const std::string& session_id, const json& body) {
  return guarded([&]() -> Response {
    auto s = session(session_id);
    const auto request_id = require_string(body, "request_id");
    if (!body.contains("accepted") || !body.at("accepted").is_boolean()) {
      throw Error(ErrorCode::ConfigError, "missing boolean field 'accepted'");
    }
    const bool accepted = body.at("accepted").get<bool>();
    const std::string note = body.value("note", std::string());
    std::lock_guard lock(s->mutex);
    const auto it = s->requests.find(request_id);
    if (it == s->requests.end()) throw Error(ErrorCode::NotFound, "request '" + request_id + "'");
    if (it->second) throw Error(ErrorCode::Conflict, "request '" + request_id + "' already decided");
    s->append(accepted ? EventKind::Accepted : EventKind::Rejected,
              {{"request_id", request_id}, {"note", note}});
    return {200, {{"ack", true}, {"request_id", request_id}, {"accepted", accepted}, {"seq", s->next_seq - 1}}};
  });
}

Response Service::events(const std::string& session_id) {
  return guarded([&]() -> Response {
    auto s = session(session_id);
    std::lock_guard lock(s->mutex);
    return {200, {{"session_id", s->id}, {"events", s->read_events()}}};
  });
}

ReplayResult Service::replay(const std::string& session_id) {
  auto s = session(session_id);
  std::vector<json> log;
  {
    std::lock_guard lock(s->mutex);
    log = s->read_events();
  }
  std::map<std::string, json> returned;
  for (const auto& e : log) {
    if (e.at("kind") == "CounterfactualReturned") {
      returned[e.at("payload").at("request_id").get<std::string>()] = e.at("payload");
    }
  }
  ReplayResult result;
  for (const auto& e : log) {
    if (e.at("kind") != "ExplainRequested") continue;
    const auto& request = e.at("payload");
    const auto rid = request.at("request_id").get<std::string>();
    ++result.requests;
    const auto it = returned.find(rid);
    if (it != returned.end() && run_explain(*s, request) == it->second) {
      ++result.matched;
    } else {
      result.mismatched_request_ids.push_back(rid);
    }
  }
  return result;
}

// HTTP ----------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  static void reply(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  static std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
    try {
      return req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::exception& e) {
      reply(res, {400, {{"error", "BadRequest"}, {"message", e.what()}}});
      return std::nullopt;
    }
  }

  static std::optional<std::size_t> param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    const auto text = req.get_param_value(name);
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw Error(ErrorCode::RangeError, std::string("bad query parameter ") + name);
    }
    return value;
  }

  explicit Impl(Service& s) : service(s) {
    server.Get("/datasets", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, service.list_datasets());
    });
    server.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, service.list_models());
    });
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      if (auto body = parse_body(req, res)) reply(res, service.create_session(*body));
    });
    server.Get(R"(/sessions/([^/]+)/windows)", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        reply(res, service.detect(req.matches[1], param(req, "from"), param(req, "to")));
      } catch (const Error& e) {
        reply(res, error_response(e));
      }
    });
    server.Post(R"(/sessions/([^/]+)/explain)", [this](const httplib::Request& req, httplib::Response& res) {
      if (auto body = parse_body(req, res)) reply(res, service.explain(req.matches[1], *body));
    });
    server.Post(R"(/sessions/([^/]+)/decisions)", [this](const httplib::Request& req, httplib::Response& res) {
      if (auto body = parse_body(req, res)) reply(res, service.record_decision(req.matches[1], *body));
    });
    server.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      reply(res, service.events(req.matches[1]));
    });
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind_to_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool HttpServer::bind(const std::string& host, int port) { return impl_->server.bind_to_port(host, port); }
bool HttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }

}  // namespace whatif
