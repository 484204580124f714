#pragma once

// Session-oriented service: a model store, live conversations with an
// optional censor/defender game, and analysis jobs on a worker pool. All
// routing lives in Service::handle so it can be exercised without sockets;
// serve() puts it behind HTTP.

#include "botlab/controllability.hpp"
#include "botlab/error.hpp"
#include "botlab/reachability.hpp"
#include "botlab/safeguard.hpp"

#include <json.hpp>

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace botlab::service {

using Json = nlohmann::ordered_json;

/// Bumped whenever a field is renamed or removed. Mirrors schema/service.schema.json.
inline constexpr const char* kSchemaVersion = "1";

struct Response {
  int status = 200;
  Json body;
};

/// HTTP status for an error category.
int http_status(ErrorCode code);
Response error_response(ErrorCode code, const std::string& message);

class ModelStore {
 public:
  void add(const std::string& id, DiscriminantPtr model);
  /// Throws kNotFound.
  DiscriminantPtr get(const std::string& id) const;
  bool remove(const std::string& id);
  std::vector<std::string> ids() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, DiscriminantPtr> models_;
};

struct GameConfig {
  GameSpec spec;
  double lambda = 1.0;
  std::size_t depth = 3;
  std::size_t completions = 64;
  /// Compressed steps and simulations behind the snapshot's absorption estimate.
  std::size_t horizon = 6;
  std::size_t samples = 1000;
};

struct SessionConfig {
  std::uint64_t seed = 0;
  Temperature temperature = Temperature::finite(1.0);
  Sentence prompt;
  std::optional<GameConfig> game;
};

/// A conversation bound to one model. Turns on a session are serialized by
/// its mutex; distinct sessions share nothing mutable.
class Session {
 public:
  Session(std::string id, std::string model_id, DiscriminantPtr model, SessionConfig config);

  const std::string& id() const { return id_; }
  const DiscriminantPtr& model() const { return model_; }
  Sentence window() const;

  /// Applies one user turn and returns {reply, snapshot}. A censored input
  /// leaves the session untouched and throws kCensored.
  Json turn(const std::vector<TokenId>& tokens);
  Json snapshot() const;
  Transcript transcript() const;
  Json summary() const;

 private:
  Json snapshot_locked() const;

  std::string id_;
  std::string model_id_;
  DiscriminantPtr model_;
  SessionConfig config_;
  std::optional<MeaningClassifier> classifier_;
  std::optional<GameModel> game_;
  mutable std::mutex mu_;
  Conversation conversation_;
  Sentence last_reply_;
  std::optional<Sentence> last_intervention_;
  bool last_censored_ = false;
};

class JobPool {
 public:
  enum class State { kQueued, kRunning, kDone, kFailed };

  struct Status {
    std::string id;
    std::string kind;
    State state = State::kQueued;
    Json result;
    std::optional<ErrorCode> error_code;
    std::string error;
  };

  explicit JobPool(std::size_t workers);
  ~JobPool();
  JobPool(const JobPool&) = delete;
  JobPool& operator=(const JobPool&) = delete;

  std::string submit(std::string kind, std::function<Json()> work);
  std::optional<Status> status(const std::string& id) const;
  /// Blocks until the job is done or failed.
  Status wait(const std::string& id) const;
  std::size_t workers() const { return threads_.size(); }

 private:
  struct Job {
    Status status;
    std::function<Json()> work;
  };

  void run();

  mutable std::mutex mu_;
  mutable std::condition_variable wake_;
  mutable std::condition_variable finished_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::size_t next_id_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

std::string_view to_string(JobPool::State s);

class Service {
 public:
  explicit Service(std::size_t workers = 2);

  ModelStore& models() { return models_; }
  JobPool& jobs() { return jobs_; }

  /// Dispatches a request. Paths live under /v1; bodies are JSON.
  Response handle(const std::string& method, const std::string& path, const std::string& body);

 private:
  Json create_session(const Json& req);
  Json list_sessions() const;
  std::shared_ptr<Session> session(const std::string& id) const;
  Json submit(const std::string& kind, const Json& req);

  ModelStore models_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;
  JobPool jobs_;
};

// JSON forms shared with the CLI.
Json to_json(const std::vector<TokenId>& tokens, const Alphabet& a);
Sentence tokens_from_json(const Json& j, const Alphabet& a);
Json to_json(const ReachReport& r, const Alphabet& a);
Json to_json(const Certificate& c, const Alphabet& a);
Json to_json(const ControlPlan& p, const Alphabet& a);
Json to_json(const GameValue& v, const GameModel& game, const Alphabet& a);

/// Service::handle behind HTTP. Every GET, POST and DELETE is routed there.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving HTTP on host:port until the process exits.
void serve(Service& service, const std::string& host, int port);

}  // namespace botlab::service
