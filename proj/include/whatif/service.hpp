#pragma once

#include <cstddef>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "whatif/cf.hpp"
#include "whatif/data.hpp"
#include "whatif/tcn.hpp"

namespace whatif {

// Data directory layout:
//   datasets/<id>/manifest, datasets/<id>/windows.ndjson
//   models/<id>.json
//   sessions/<id>/session.json, sessions/<id>/events.ndjson
struct ServiceConfig {
  std::filesystem::path data_dir;
  std::size_t explainer_cache_size = 4;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

enum class EventKind { AnomalyDetected, ExplainRequested, CounterfactualReturned, Accepted, Rejected };

std::string_view to_string(EventKind kind);

struct ReplayResult {
  std::size_t requests = 0;
  std::size_t matched = 0;
  std::vector<std::string> mismatched_request_ids;
};

/// Session-oriented what-if loop over stored datasets and models. Every
/// method returns a status and a JSON body; transport lives in HttpServer.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  Response list_datasets() const;
  Response list_models() const;
  Response create_session(const nlohmann::json& body);
  /// Predictions over window positions [from, to); anomalous windows not yet
  /// flagged in this session are logged as AnomalyDetected.
  Response detect(const std::string& session_id, std::optional<std::size_t> from,
                  std::optional<std::size_t> to);
  Response explain(const std::string& session_id, const nlohmann::json& body);
  Response record_decision(const std::string& session_id, const nlohmann::json& body);
  Response events(const std::string& session_id);

  /// Re-runs every logged explain request and compares against the logged result.
  ReplayResult replay(const std::string& session_id);

  const ServiceConfig& config() const noexcept { return config_; }

 private:
  struct Session;

  std::shared_ptr<Session> session(const std::string& id);
  std::shared_ptr<const Dataset> dataset(const std::string& id);
  std::shared_ptr<const TcnModel> model(const std::string& id);
  std::shared_ptr<const Explainer> explainer(const std::string& model_id, const std::string& dataset_id);
  nlohmann::json run_explain(const Session& s, const nlohmann::json& request) const;

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::string, std::shared_ptr<const Dataset>> datasets_;
  std::map<std::string, std::shared_ptr<const TcnModel>> models_;
  std::list<std::pair<std::string, std::shared_ptr<const Explainer>>> explainer_cache_;  // MRU first
  std::size_t next_session_ = 1;
};

/// HTTP binding for Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to a free port on `host` and returns it.
  int bind_to_any_port(const std::string& host);
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen_after_bind();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace whatif
