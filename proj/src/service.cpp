#include "botlab/service.hpp"

#include "botlab/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <sstream>

namespace botlab::service {

namespace {

Json envelope() {
  Json j;
  j["schema"] = kSchemaVersion;
  return j;
}

template <typename T>
T field(const Json& req, const char* key, T fallback) {
  if (!req.contains(key) || req[key].is_null()) return fallback;
  try {
    return req[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
T required(const Json& req, const char* key) {
  if (!req.contains(key) || req[key].is_null()) {
    throw Error(ErrorCode::kInvalidArgument, std::string("missing field '") + key + "'");
  }
  return field<T>(req, key, T{});
}

Temperature temperature_field(const Json& req, Temperature fallback = Temperature::finite(1.0)) {
  if (!req.contains("temperature")) return fallback;
  const Json& t = req["temperature"];
  if (t.is_number()) return Temperature::finite(t.get<double>());
  if (t.is_string()) return Temperature::parse(t.get<std::string>());
  throw Error(ErrorCode::kInvalidArgument, "field 'temperature' has the wrong type");
}

Json interval(const Interval& ci) { return Json::array({ci.low, ci.high}); }

// Path segments after the leading slash.
std::vector<std::string> segments(const std::string& path) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (c == '?') {
      break;
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// The complete sentence ending at the last EOS of the window, if any.
std::optional<Sentence> last_sentence(const Sentence& window, const Alphabet& a) {
  const Sentence body = strip_padding(window, a.pad());
  auto end = std::find(body.rbegin(), body.rend(), a.eos());
  if (end == body.rend()) return std::nullopt;
  auto begin = std::find(std::next(end), body.rend(), a.eos());
  Sentence s(begin.base(), end.base());
  s.erase(std::remove(s.begin(), s.end(), a.pad()), s.end());
  if (s.size() < 2) return std::nullopt;
  return s;
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kParse: return 400;
    case ErrorCode::kCensored: return 403;
    case ErrorCode::kNotFound: return 404;
    case ErrorCode::kBudgetExceeded:
    case ErrorCode::kHypothesisViolated:
    case ErrorCode::kValidation: return 422;
  }
  return 500;
}

Response error_response(ErrorCode code, const std::string& message) {
  Json body = envelope();
  body["error"] = {{"code", to_string(code)}, {"message", message}};
  return {http_status(code), std::move(body)};
}

// ---------------------------------------------------------------------------
// JSON forms

Json to_json(const std::vector<TokenId>& tokens, const Alphabet& a) {
  Json out = Json::array();
  for (TokenId t : tokens) out.push_back(a.symbol(t));
  return out;
}

Sentence tokens_from_json(const Json& j, const Alphabet& a) {
  if (!j.is_array()) throw Error(ErrorCode::kValidation, "tokens must be an array of symbols");
  Sentence out;
  for (const auto& x : j) {
    if (!x.is_string()) throw Error(ErrorCode::kValidation, "tokens must be an array of symbols");
    const auto id = a.find(x.get<std::string>());
    if (!id) throw Error(ErrorCode::kValidation, "unknown token '" + x.get<std::string>() + "'");
    out.push_back(*id);
  }
  return out;
}

Json to_json(const ReachReport& r, const Alphabet& a) {
  Json j;
  j["method"] = r.method == ReachReport::Method::kExact ? "exact" : "monte_carlo";
  j["origin"] = to_json(r.origin, a);
  j["horizon"] = r.horizon;
  j["theta"] = r.theta;
  j["temperature"] = r.temperature.to_string();
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  j["model_hash"] = r.model_hash;
  Json reached = Json::array();
  for (const auto& x : r.reached) {
    reached.push_back(
        {{"sentence", to_json(x.sentence, a)}, {"probability", x.probability}, {"ci", interval(x.ci)}, {"count", x.count}});
  }
  j["reached"] = std::move(reached);
  j["continuation_mass"] = r.continuation_mass;
  j["pruned_mass"] = r.pruned_mass;
  j["unreported_mass"] = r.unreported_mass;
  return j;
}

Json to_json(const Certificate& c, const Alphabet& a) {
  Json j;
  const bool surj = c.property == Certificate::Property::kSurjective;
  j["property"] = surj ? "surjective" : "bijective";
  j["verdict"] = c.verdict;
  j["ell"] = c.ell;
  j["varied"] = Json::array({c.varied_from, c.varied_to});
  j["coverage"] = c.coverage;
  j["fixings_checked"] = c.fixings_checked;
  j["failing_fixings"] = c.failing_fixings;
  j["model_hash"] = c.model_hash;
  Json ws = Json::array();
  for (const auto& w : c.witnesses) {
    Json x{{"window", to_json(w.window, a)}};
    if (surj) {
      x["missing"] = a.symbol(w.missing);
    } else {
      x["first"] = a.symbol(w.first);
      x["second"] = a.symbol(w.second);
      x["output"] = a.symbol(w.output);
    }
    ws.push_back(std::move(x));
  }
  j["witnesses"] = std::move(ws);
  return j;
}

Json to_json(const ControlPlan& p, const Alphabet& a) {
  Json j;
  j["method"] = p.method == ControlPlan::Method::kPhiU ? "phi_u" : "bfs";
  j["start"] = to_json(p.start, a);
  j["target"] = to_json(p.target, a);
  j["inputs"] = to_json(p.inputs, a);
  j["length"] = p.length();
  j["settle_steps"] = p.settle_steps;
  Json traj = Json::array();
  for (const auto& w : p.trajectory) traj.push_back(to_json(w, a));
  j["trajectory"] = std::move(traj);
  j["model_hash"] = p.model_hash;
  return j;
}

Json to_json(const GameValue& v, const GameModel& game, const Alphabet& a) {
  Json j;
  j["horizon"] = v.horizon;
  j["sweeps"] = v.sweeps;
  j["converged"] = v.converged;
  Json values = Json::array();
  for (std::size_t x = 0; x < game.states(); ++x) {
    Json tau = v.tau[x] == kUnreachable ? Json(nullptr) : Json(v.tau[x]);
    values.push_back({{"window", to_json(game.decode(x), a)}, {"tau", tau}, {"policy", a.symbol(v.policy[x])}});
  }
  j["values"] = std::move(values);
  return j;
}

// ---------------------------------------------------------------------------
// Model store

void ModelStore::add(const std::string& id, DiscriminantPtr model) {
  if (id.empty()) throw Error(ErrorCode::kInvalidArgument, "model id must be non-empty");
  if (!model) throw Error(ErrorCode::kInvalidArgument, "null model");
  std::lock_guard lock(mu_);
  models_[id] = std::move(model);
}

DiscriminantPtr ModelStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = models_.find(id);
  if (it == models_.end()) throw Error(ErrorCode::kNotFound, "unknown model '" + id + "'");
  return it->second;
}

bool ModelStore::remove(const std::string& id) {
  std::lock_guard lock(mu_);
  return models_.erase(id) > 0;
}

std::vector<std::string> ModelStore::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, m] : models_) out.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// Sessions

Session::Session(std::string id, std::string model_id, DiscriminantPtr model, SessionConfig config)
    : id_(std::move(id)),
      model_id_(std::move(model_id)),
      model_(std::move(model)),
      config_(std::move(config)),
      conversation_(model_,
                    Context::from_prompt(config_.prompt, model_->context_length(), model_->alphabet().pad()),
                    config_.temperature, config_.seed) {
  if (!model_->alphabet().labels().empty()) classifier_ = MeaningClassifier::argmax(model_);
  if (config_.game) {
    if (!(config_.game->spec.toxic.alphabet() == model_->alphabet())) {
      throw Error(ErrorCode::kInvalidArgument, "game spec alphabet differs from the model's");
    }
    game_.emplace(*model_, config_.game->spec.toxic, config_.temperature);
  }
}

Json Session::turn(const std::vector<TokenId>& tokens) {
  if (tokens.empty()) throw Error(ErrorCode::kInvalidArgument, "a turn needs at least one token");
  std::lock_guard lock(mu_);
  for (TokenId t : tokens) {
    if (t >= model_->vocab_size()) throw Error(ErrorCode::kValidation, "token out of range");
  }
  const ToxicSpec* spec = config_.game ? &config_.game->spec.toxic : nullptr;

  // Work on a copy so a denied turn leaves no trace, sampler included.
  Conversation next = conversation_;
  auto admit = [&](TokenId u) {
    if (!spec || !spec->censors_input()) return;
    const CensorDecision d = spec->censor(next.context().shifted(u).window());
    if (!d.allow) throw Error(ErrorCode::kCensored, d.reason);
  };

  // Leading prompt tokens go in without bot turns; the last one closes a
  // compressed step behind the bot's reply.
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    admit(tokens[i]);
    next.user_turn(tokens[i]);
  }
  const TokenId u = tokens.back();

  std::optional<Sentence> intervention;
  if (spec) {
    const DefenderConfig dc{.interventions = config_.game->spec.interventions,
                            .lambda = config_.game->lambda,
                            .depth = config_.game->depth,
                            .completions = config_.game->completions,
                            .seed = config_.seed + next.context().clock(),
                            .temperature = config_.temperature};
    const DefenderChoice choice = defender_step(*model_, *spec, next.context().window(), u, dc);
    if (choice.index != 0) intervention = choice.v;
  }
  Conversation::OutputFilter deny;
  if (spec && spec->censors_output()) {
    deny = [spec](std::span<const TokenId> w) { return !spec->censor(w).allow; };
  }
  const Turn bot = next.bot_turn(intervention ? *intervention : Sentence{}, deny);
  admit(u);
  next.user_turn(u);

  conversation_ = std::move(next);
  last_reply_ = {bot.token};
  last_censored_ = bot.speaker == Speaker::kCensored;
  last_intervention_ = intervention;

  Json out = envelope();
  out["session"] = id_;
  out["reply"] = to_json(last_reply_, model_->alphabet());
  out["reply_censored"] = last_censored_;
  out["snapshot"] = snapshot_locked();
  return out;
}

Json Session::snapshot() const {
  std::lock_guard lock(mu_);
  Json out = envelope();
  out.update(snapshot_locked());
  return out;
}

Json Session::snapshot_locked() const {
  const Alphabet& a = model_->alphabet();
  const Context& ctx = conversation_.context();
  Json j;
  j["session"] = id_;
  j["model"] = model_id_;
  j["model_hash"] = model_->hash();
  j["clock"] = ctx.clock();
  j["turns"] = conversation_.transcript().turns.size();
  j["context"] = to_json(ctx.window(), a);

  j["meaning_class"] = nullptr;
  if (classifier_) {
    if (auto s = last_sentence(ctx.window(), a)) {
      try {
        j["meaning_class"] = classifier_->classify(*s).name;
      } catch (const Error&) {
      }
    }
  }

  j["provisional_toxic_score"] = nullptr;
  j["absorption_estimate"] = nullptr;
  if (config_.game) {
    const GameConfig& g = *config_.game;
    const std::uint64_t seed = config_.seed + ctx.clock();
    j["provisional_toxic_score"] =
        provisional_score(*model_, g.spec.toxic, ctx.window(), config_.temperature, g.completions, seed);
    const AbsorptionEstimate est = absorption_probability(*game_, ctx.window(), g.horizon, g.samples, seed);
    j["absorption_estimate"] = {{"probability", est.probability},
                                {"ci", interval(est.ci)},
                                {"absorbed", est.absorbed},
                                {"trials", est.trials},
                                {"horizon", g.horizon},
                                {"seed", seed}};
  }
  j["intervention"] = last_intervention_ ? to_json(*last_intervention_, a) : Json(nullptr);
  j["last_reply"] = to_json(last_reply_, a);
  j["last_reply_censored"] = last_censored_;
  return j;
}

Sentence Session::window() const {
  std::lock_guard lock(mu_);
  return conversation_.context().window();
}

Transcript Session::transcript() const {
  std::lock_guard lock(mu_);
  return conversation_.transcript();
}

Json Session::summary() const {
  std::lock_guard lock(mu_);
  return {{"session", id_},
          {"model", model_id_},
          {"seed", config_.seed},
          {"temperature", config_.temperature.to_string()},
          {"game", config_.game.has_value()},
          {"clock", conversation_.context().clock()}};
}

// ---------------------------------------------------------------------------
// Jobs

std::string_view to_string(JobPool::State s) {
  switch (s) {
    case JobPool::State::kQueued: return "queued";
    case JobPool::State::kRunning: return "running";
    case JobPool::State::kDone: return "done";
    case JobPool::State::kFailed: return "failed";
  }
  return "unknown";
}

JobPool::JobPool(std::size_t workers) {
  if (workers == 0) throw Error(ErrorCode::kInvalidArgument, "worker pool needs at least one thread");
  for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { run(); });
}

JobPool::~JobPool() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  wake_.notify_all();
  for (auto& t : threads_) t.join();
}

std::string JobPool::submit(std::string kind, std::function<Json()> work) {
  auto job = std::make_shared<Job>();
  std::string id;
  {
    std::lock_guard lock(mu_);
    id = "j" + std::to_string(next_id_++);
    job->status.id = id;
    job->status.kind = std::move(kind);
    job->work = std::move(work);
    jobs_[id] = job;
    queue_.push_back(job);
  }
  wake_.notify_one();
  return id;
}

std::optional<JobPool::Status> JobPool::status(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second->status;
}

JobPool::Status JobPool::wait(const std::string& id) const {
  std::unique_lock lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) throw Error(ErrorCode::kNotFound, "unknown job '" + id + "'");
  const auto job = it->second;
  finished_.wait(lock, [&] { return job->status.state == State::kDone || job->status.state == State::kFailed; });
  return job->status;
}

void JobPool::run() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock lock(mu_);
      wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_ && queue_.empty()) return;
      job = queue_.front();
      queue_.pop_front();
      job->status.state = State::kRunning;
    }
    Json result;
    std::optional<ErrorCode> code;
    std::string message;
    try {
      result = job->work();
    } catch (const Error& e) {
      code = e.code();
      message = e.what();
    } catch (const std::exception& e) {
      code = ErrorCode::kInvalidArgument;
      message = e.what();
    }
    {
      std::lock_guard lock(mu_);
      job->work = nullptr;
      if (code) {
        job->status.state = State::kFailed;
        job->status.error_code = code;
        job->status.error = std::move(message);
      } else {
        job->status.state = State::kDone;
        job->status.result = std::move(result);
      }
    }
    finished_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// Service

Service::Service(std::size_t workers) : jobs_(workers) {}

std::shared_ptr<Session> Service::session(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown session '" + id + "'");
  return it->second;
}

Json Service::create_session(const Json& req) {
  const std::string model_id = required<std::string>(req, "model");
  DiscriminantPtr model = models_.get(model_id);
  const Alphabet& a = model->alphabet();

  SessionConfig cfg;
  cfg.seed = field<std::uint64_t>(req, "seed", 0);
  cfg.temperature = temperature_field(req);
  if (req.contains("prompt")) cfg.prompt = tokens_from_json(req["prompt"], a);
  if (req.contains("game") && !req["game"].is_null()) {
    const Json& g = req["game"];
    std::istringstream text(required<std::string>(g, "spec"));
    GameConfig gc{parse_game_spec(text, model->alphabet_ptr())};
    gc.lambda = field<double>(g, "lambda", gc.lambda);
    gc.depth = field<std::size_t>(g, "depth", gc.depth);
    gc.completions = field<std::size_t>(g, "completions", gc.completions);
    gc.horizon = field<std::size_t>(g, "horizon", gc.horizon);
    gc.samples = field<std::size_t>(g, "samples", gc.samples);
    cfg.game = std::move(gc);
  }

  std::shared_ptr<Session> s;
  {
    std::lock_guard lock(sessions_mu_);
    const std::string id = "s" + std::to_string(next_session_++);
    s = std::make_shared<Session>(id, model_id, std::move(model), std::move(cfg));
    sessions_[id] = s;
  }
  Json out = envelope();
  out["session"] = s->id();
  out["snapshot"] = s->snapshot();
  out["snapshot"].erase("schema");
  return out;
}

Json Service::list_sessions() const {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(sessions_mu_);
    for (const auto& [id, s] : sessions_) all.push_back(s);
  }
  Json out = envelope();
  out["sessions"] = Json::array();
  for (const auto& s : all) out["sessions"].push_back(s->summary());
  return out;
}

Json Service::submit(const std::string& kind, const Json& req) {
  std::function<Json()> work;
  if (kind == "reach") {
    DiscriminantPtr model;
    std::optional<Sentence> origin;
    if (req.contains("session")) {
      const auto s = session(required<std::string>(req, "session"));
      model = s->model();
      if (!req.contains("origin")) origin = strip_padding(s->window(), model->alphabet().pad());
    } else {
      model = models_.get(required<std::string>(req, "model"));
    }
    const bool prompt = origin.has_value();
    if (!origin) origin = tokens_from_json(required<Json>(req, "origin"), model->alphabet());
    const std::size_t horizon = required<std::size_t>(req, "horizon");
    const double theta = field<double>(req, "theta", 0.0);
    ReachOptions opts{.temperature = temperature_field(req)};
    opts.budget = field<std::size_t>(req, "budget", opts.budget);
    const std::string method = field<std::string>(req, "method", "exact");
    const std::size_t samples = field<std::size_t>(req, "samples", 10000);
    const std::uint64_t seed = field<std::uint64_t>(req, "seed", 0);
    if (method != "exact" && method != "monte_carlo") {
      throw Error(ErrorCode::kInvalidArgument, "method must be exact or monte_carlo");
    }
    work = [=] {
      ReachReport r = method == "monte_carlo" ? reach_mc(*model, *origin, horizon, theta, samples, seed, opts)
                      : prompt                ? prompt_reach(*model, *origin, horizon, theta, opts)
                                              : reach_exact(*model, *origin, horizon, theta, opts);
      return to_json(r, model->alphabet());
    };
  } else if (kind == "certify") {
    DiscriminantPtr model = models_.get(required<std::string>(req, "model"));
    const std::size_t ell = required<std::size_t>(req, "ell");
    const int theorem = field<int>(req, "theorem", 2);
    if (theorem != 1 && theorem != 2) throw Error(ErrorCode::kInvalidArgument, "theorem must be 1 or 2");
    const std::size_t samples = field<std::size_t>(req, "fixings", 0);
    const std::uint64_t seed = field<std::uint64_t>(req, "seed", 0);
    work = [=] {
      const Skeleton s(*model);
      const std::optional<Fixings> fx = samples ? std::optional(Fixings::sample(samples, seed)) : std::nullopt;
      const Certificate c = theorem == 1 ? check_thm1(s, ell, fx.value_or(Fixings::all())) : check_thm2(s, ell, fx);
      return to_json(c, model->alphabet());
    };
  } else if (kind == "synthesize") {
    DiscriminantPtr model = models_.get(required<std::string>(req, "model"));
    const Sentence start = tokens_from_json(required<Json>(req, "start"), model->alphabet());
    const Sentence target = tokens_from_json(required<Json>(req, "target"), model->alphabet());
    SynthesisOptions opts;
    opts.max_settle = field<std::size_t>(req, "max_settle", opts.max_settle);
    work = [=] {
      const Skeleton s(*model);
      return to_json(synthesize(s, start, target, opts), model->alphabet());
    };
  } else if (kind == "game") {
    DiscriminantPtr model = models_.get(required<std::string>(req, "model"));
    std::istringstream text(required<std::string>(req, "spec"));
    const GameSpec spec = parse_game_spec(text, model->alphabet_ptr());
    const std::size_t horizon = required<std::size_t>(req, "horizon");
    const Temperature t = temperature_field(req);
    work = [=] {
      const GameModel game(*model, spec.toxic, t);
      return to_json(adversary_value_iteration(game, horizon), game, model->alphabet());
    };
  } else {
    throw Error(ErrorCode::kNotFound, "unknown analysis '" + kind + "'");
  }
  Json out = envelope();
  out["job"] = jobs_.submit(kind, std::move(work));
  out["kind"] = kind;
  out["status"] = "queued";
  return out;
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    Json req = Json::object();
    if (!body.empty()) {
      try {
        req = Json::parse(body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kParse, std::string("request body is not JSON: ") + e.what());
      }
      if (!req.is_object()) throw Error(ErrorCode::kParse, "request body must be a JSON object");
    }
    const auto seg = segments(path);
    if (seg.empty() || seg[0] != "v1") throw Error(ErrorCode::kNotFound, "no route for " + path);
    const std::size_t n = seg.size();
    auto route = [&](const char* m, std::initializer_list<const char*> parts) {
      if (method != m || n != parts.size() + 1) return false;
      std::size_t i = 1;
      for (const char* p : parts) {
        if (std::string_view(p) != "*" && seg[i] != p) return false;
        ++i;
      }
      return true;
    };

    if (route("GET", {"schema"})) {
      Json out = envelope();
      out["endpoints"] = {"GET /v1/schema",
                          "GET /v1/models",
                          "POST /v1/sessions",
                          "GET /v1/sessions",
                          "GET /v1/sessions/{id}",
                          "GET /v1/sessions/{id}/snapshot",
                          "GET /v1/sessions/{id}/transcript",
                          "POST /v1/sessions/{id}/turn",
                          "DELETE /v1/sessions/{id}",
                          "POST /v1/reach",
                          "POST /v1/certify",
                          "POST /v1/synthesize",
                          "POST /v1/game",
                          "GET /v1/jobs/{id}"};
      return {200, out};
    }
    if (route("GET", {"models"})) {
      Json out = envelope();
      out["models"] = Json::array();
      for (const auto& id : models_.ids()) {
        const auto m = models_.get(id);
        out["models"].push_back({{"model", id},
                                 {"kind", m->kind()},
                                 {"hash", m->hash()},
                                 {"vocab_size", m->vocab_size()},
                                 {"context_length", m->context_length()},
                                 {"alphabet", m->alphabet().symbols()}});
      }
      return {200, out};
    }
    if (route("POST", {"sessions"})) return {201, create_session(req)};
    if (route("GET", {"sessions"})) return {200, list_sessions()};
    if (route("GET", {"sessions", "*"}) || route("GET", {"sessions", "*", "snapshot"})) {
      return {200, session(seg[2])->snapshot()};
    }
    if (route("GET", {"sessions", "*", "transcript"})) {
      const auto s = session(seg[2]);
      std::ostringstream text;
      write_transcript(text, s->transcript(), s->model()->alphabet());
      Json out = envelope();
      out["session"] = seg[2];
      out["transcript"] = text.str();
      return {200, out};
    }
    if (route("POST", {"sessions", "*", "turn"})) {
      const auto s = session(seg[2]);
      return {200, s->turn(tokens_from_json(required<Json>(req, "tokens"), s->model()->alphabet()))};
    }
    if (route("DELETE", {"sessions", "*"})) {
      std::lock_guard lock(sessions_mu_);
      if (!sessions_.erase(seg[2])) throw Error(ErrorCode::kNotFound, "unknown session '" + seg[2] + "'");
      Json out = envelope();
      out["session"] = seg[2];
      out["deleted"] = true;
      return {200, out};
    }
    if (method == "POST" && n == 2 && (seg[1] == "reach" || seg[1] == "certify" || seg[1] == "synthesize" || seg[1] == "game")) {
      return {202, submit(seg[1], req)};
    }
    if (route("GET", {"jobs", "*"})) {
      const auto st = jobs_.status(seg[2]);
      if (!st) throw Error(ErrorCode::kNotFound, "unknown job '" + seg[2] + "'");
      Json out = envelope();
      out["job"] = st->id;
      out["kind"] = st->kind;
      out["status"] = to_string(st->state);
      if (st->state == JobPool::State::kDone) out["result"] = st->result;
      if (st->state == JobPool::State::kFailed) {
        out["error"] = {{"code", to_string(*st->error_code)}, {"message", st->error}};
      }
      return {200, out};
    }
    throw Error(ErrorCode::kNotFound, "no route for " + method + " " + path);
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  }
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>()) {
  auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
    const Response r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  impl_->server.Get(".*", handler);
  impl_->server.Post(".*", handler);
  impl_->server.Delete(".*", handler);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::kInvalidArgument, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(ErrorCode::kInvalidArgument, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void serve(Service& service, const std::string& host, int port) {
  HttpServer server(service);
  server.bind(host, port);
  server.run();
}

}  // namespace botlab::service
