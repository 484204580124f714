#include "botlab/safeguard.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace botlab {

std::string_view to_string(Scenario s) { return s == Scenario::kPhi1 ? "phi1" : "phi2"; }

std::string_view to_string(CensorScope s) {
  switch (s) {
    case CensorScope::kNone: return "none";
    case CensorScope::kInput: return "input";
    case CensorScope::kOutput: return "output";
    case CensorScope::kBoth: return "both";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// ToxicSpec

ToxicSpec::ToxicSpec(AlphabetPtr alphabet, std::vector<Sentence> toxic_sentences, Scenario scenario, double epsilon,
                     double threshold, CensorScope scope)
    : alphabet_(std::move(alphabet)),
      sentences_(std::move(toxic_sentences)),
      scenario_(scenario),
      epsilon_(epsilon),
      threshold_(threshold),
      scope_(scope) {
  if (!alphabet_) throw Error(ErrorCode::kInvalidArgument, "toxic spec needs an alphabet");
  if (!(epsilon_ >= 0 && epsilon_ < 1)) throw Error(ErrorCode::kInvalidArgument, "epsilon must lie in [0, 1)");
  for (const auto& s : sentences_) {
    if (!is_complete(s, alphabet_->eos())) {
      throw Error(ErrorCode::kInvalidArgument, "toxic sentences must be complete: '" + alphabet_->render(s) + "'");
    }
    Sentence phrase(s.begin(), s.end() - 1);
    if (phrase.empty()) throw Error(ErrorCode::kInvalidArgument, "toxic sentence has no tokens before EOS");
    phrases_.push_back(std::move(phrase));
  }
}

ToxicSpec ToxicSpec::with_scenario(Scenario s) const {
  ToxicSpec out = *this;
  out.scenario_ = s;
  return out;
}

ToxicSpec ToxicSpec::with_scope(CensorScope s) const {
  ToxicSpec out = *this;
  out.scope_ = s;
  return out;
}

bool ToxicSpec::contains_toxic(std::span<const TokenId> tokens) const {
  for (const auto& p : phrases_) {
    if (std::search(tokens.begin(), tokens.end(), p.begin(), p.end()) != tokens.end()) return true;
  }
  return false;
}

double ToxicSpec::score(std::span<const TokenId> tokens) const {
  if (!contains_toxic(tokens)) return 0.0;
  return scenario_ == Scenario::kPhi1 ? 1.0 : 1.0 - epsilon_;
}

CensorDecision ToxicSpec::censor(std::span<const TokenId> tokens) const {
  CensorDecision d;
  d.score = score(tokens);
  if (d.score >= threshold_) {
    d.allow = false;
    std::ostringstream reason;
    reason << to_string(scenario_) << " score " << d.score << " >= threshold " << threshold_;
    d.reason = reason.str();
  }
  return d;
}

// ---------------------------------------------------------------------------
// Game spec files

GameSpec parse_game_spec(std::istream& in, AlphabetPtr alphabet) {
  Scenario scenario = Scenario::kPhi1;
  double epsilon = 0.2, threshold = 0.9;
  CensorScope scope = CensorScope::kBoth;
  std::vector<Sentence> toxic, interventions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    auto fail = [&](const std::string& msg) {
      return Error(ErrorCode::kParse, "game spec line " + std::to_string(line_no) + ": " + msg);
    };
    if (head == "#scenario") {
      std::string v;
      fields >> v;
      if (v == "phi1") scenario = Scenario::kPhi1;
      else if (v == "phi2") scenario = Scenario::kPhi2;
      else throw fail("unknown scenario '" + v + "'");
    } else if (head == "#epsilon") {
      if (!(fields >> epsilon)) throw fail("bad epsilon");
    } else if (head == "#threshold") {
      if (!(fields >> threshold)) throw fail("bad threshold");
    } else if (head == "#scope") {
      std::string v;
      fields >> v;
      if (v == "none") scope = CensorScope::kNone;
      else if (v == "input") scope = CensorScope::kInput;
      else if (v == "output") scope = CensorScope::kOutput;
      else if (v == "both") scope = CensorScope::kBoth;
      else throw fail("unknown scope '" + v + "'");
    } else if (head == "#intervention") {
      std::string rest;
      std::getline(fields, rest);
      Sentence v = parse_sentence(rest, *alphabet, line_no);
      if (v.empty()) throw fail("empty intervention");
      interventions.push_back(std::move(v));
    } else if (head[0] == '#') {
      throw fail("unknown directive '" + head + "'");
    } else {
      Sentence s = parse_sentence(line, *alphabet, line_no);
      if (!is_complete(s, alphabet->eos())) throw fail("missing EOS at end of sentence");
      toxic.push_back(std::move(s));
    }
  }
  return {ToxicSpec(std::move(alphabet), std::move(toxic), scenario, epsilon, threshold, scope),
          std::move(interventions)};
}

GameSpec load_game_spec(const std::string& path, AlphabetPtr alphabet) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open game spec '" + path + "'");
  return parse_game_spec(in, std::move(alphabet));
}

void write_game_spec(std::ostream& out, const GameSpec& spec) {
  const ToxicSpec& t = spec.toxic;
  out << "#scenario " << to_string(t.scenario()) << "\n";
  out << "#epsilon " << t.epsilon() << "\n";
  out << "#threshold " << t.threshold() << "\n";
  out << "#scope " << to_string(t.scope()) << "\n";
  for (const auto& v : spec.interventions) out << "#intervention " << t.alphabet().render(v) << "\n";
  for (const auto& s : t.sentences()) out << t.alphabet().render(s) << "\n";
}

// ---------------------------------------------------------------------------
// Censored step

namespace {

Sentence shift(std::span<const TokenId> w, TokenId t) {
  Sentence out(w.begin() + 1, w.end());
  out.push_back(t);
  return out;
}

Sentence censored_next(const ToxicSpec& spec, std::span<const TokenId> w, TokenId b, TokenId u) {
  const TokenId pad = spec.alphabet().pad();
  Sentence w1 = shift(w, b);
  if (spec.censors_output() && !spec.censor(w1).allow) w1 = shift(w, pad);
  Sentence w2 = shift(w1, u);
  if (spec.censors_input() && !spec.censor(w2).allow) w2 = shift(w1, pad);
  return w2;
}

}  // namespace

GameModel::GameModel(const Discriminant& model, const ToxicSpec& spec, Temperature t, std::size_t budget)
    : k_(model.vocab_size()), c_(model.context_length()) {
  if (!(model.alphabet() == spec.alphabet())) {
    throw Error(ErrorCode::kInvalidArgument, "toxic spec and model use different alphabets");
  }
  if (c_ < 2) throw Error(ErrorCode::kInvalidArgument, "the game needs a context of at least 2 tokens");
  const std::size_t n = checked_pow(k_, c_);
  if (n > budget) {
    throw Error(ErrorCode::kBudgetExceeded, "game state space K^C = " + std::to_string(k_) + "^" + std::to_string(c_) +
                                                " exceeds the budget of " + std::to_string(budget));
  }
  toxic_.resize(n);
  law_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k_));
  next_.resize(n * k_ * k_);
  for (std::size_t x = 0; x < n; ++x) {
    const Sentence w = decode(x);
    toxic_[x] = spec.contains_toxic(w);
    law_.row(static_cast<Eigen::Index>(x)) = next_token_distribution(model, w, t).transpose();
    for (TokenId b = 0; b < k_; ++b) {
      for (TokenId u = 0; u < k_; ++u) next_[(x * k_ + b) * k_ + u] = encode(censored_next(spec, w, b, u));
    }
  }
}

std::size_t GameModel::next(std::size_t state, TokenId bot, TokenId user) const {
  return next_[(state * k_ + bot) * k_ + user];
}

std::size_t GameModel::encode(std::span<const TokenId> window) const {
  if (window.size() != c_) throw Error(ErrorCode::kInvalidArgument, "window length does not match the game");
  return window_index(window, k_);
}

Sentence GameModel::decode(std::size_t state) const { return window_from_index(state, k_, c_); }

// ---------------------------------------------------------------------------
// Value iteration

GameValue adversary_value_iteration(const GameModel& game, std::size_t horizon) {
  const std::size_t n = game.states();
  const std::size_t k = game.k();
  GameValue out;
  out.horizon = horizon;
  out.tau.resize(n);
  out.policy.assign(n, 0);
  for (std::size_t x = 0; x < n; ++x) out.tau[x] = game.toxic(x) ? 0.0 : kUnreachable;

  std::vector<double> next(n);
  for (std::size_t h = 1; h <= horizon; ++h) {
    for (std::size_t x = 0; x < n; ++x) {
      if (game.toxic(x)) {
        next[x] = 0.0;
        continue;
      }
      const auto law = game.bot_law(x);
      double best = kUnreachable;
      TokenId arg = 0;
      for (TokenId u = 0; u < k; ++u) {
        double sum = 0;
        for (TokenId b = 0; b < k; ++b) {
          const double p = law(b);
          if (p == 0) continue;
          sum += p * out.tau[game.next(x, b, u)];
        }
        const double v = 1.0 + sum;
        if (v < best) {
          best = v;
          arg = u;
        }
      }
      next[x] = best;
      out.policy[x] = arg;
    }
    const bool same = next == out.tau;
    out.tau.swap(next);
    out.sweeps = h;
    if (same) {
      out.converged = true;
      break;
    }
  }
  if (horizon == 0) out.converged = true;
  return out;
}

GameValue adversary_value_iteration(const Discriminant& model, const ToxicSpec& spec, std::size_t horizon,
                                    Temperature t) {
  return adversary_value_iteration(GameModel(model, spec, t), horizon);
}

ScenarioReport compare_scenarios(const Discriminant& model, const ToxicSpec& spec1, const ToxicSpec& spec2,
                                 const std::vector<Sentence>& starts, std::size_t horizon, Temperature t) {
  if (spec1.phrases() != spec2.phrases()) {
    throw Error(ErrorCode::kInvalidArgument, "scenarios must share the same toxic set");
  }
  const GameModel g1(model, spec1, t), g2(model, spec2, t);
  const GameValue v1 = adversary_value_iteration(g1, horizon);
  const GameValue v2 = adversary_value_iteration(g2, horizon);
  ScenarioReport report;
  for (const auto& s : starts) {
    const std::size_t x = g1.encode(s);
    ScenarioRow row{s, v1.tau[x], v2.tau[x], v2.tau[x] <= v1.tau[x]};
    report.violations += !row.ordered;
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Defender

double provisional_score(const Discriminant& model, const ToxicSpec& spec, std::span<const TokenId> window,
                         Temperature t, std::size_t n, std::uint64_t seed) {
  if (spec.contains_toxic(window)) return spec.score(window);
  const std::size_t runs = t.kind() == Temperature::Kind::kZero ? 1 : n;
  if (runs == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one completion");
  Sampler sampler(seed);
  double total = 0;
  for (std::size_t i = 0; i < runs; ++i) {
    const RolloutResult r = rollout(model, window, t, sampler, model.context_length());
    total += spec.score(r.tokens);
  }
  return total / static_cast<double>(runs);
}

double intervention_cost(const Discriminant& model, std::span<const TokenId> window, std::span<const TokenId> v,
                         Temperature t, double phi) {
  if (v.empty()) return 0.0;
  const Vector p0 = next_token_distribution(model, window, t);
  const Vector pv = next_token_distribution(model, with_prompt(window, v), t);
  return (std::exp(phi) - 1.0) * (pv - p0).squaredNorm();
}

namespace {

struct Lookahead {
  const Discriminant& model;
  const ToxicSpec& spec;
  Temperature t;
  std::map<std::pair<Sentence, std::size_t>, double> arrival_memo, absorb_memo;

  // E[min(tau, h)] under the minimising adversary, no defence.
  double arrival(const Sentence& y, std::size_t h) {
    if (spec.contains_toxic(y) || h == 0) return 0.0;
    auto key = std::make_pair(y, h);
    if (auto it = arrival_memo.find(key); it != arrival_memo.end()) return it->second;
    const Vector p = next_token_distribution(model, y, t);
    double best = kUnreachable;
    for (TokenId u = 0; u < model.vocab_size(); ++u) {
      double sum = 0;
      for (TokenId b = 0; b < model.vocab_size(); ++b) {
        if (p(b) == 0) continue;
        sum += p(b) * arrival(censored_next(spec, y, b, u), h - 1);
      }
      best = std::min(best, 1.0 + sum);
    }
    return arrival_memo[key] = best;
  }

  // Largest probability of entering the toxic set within h steps.
  double absorb(const Sentence& y, std::size_t h) {
    if (spec.contains_toxic(y)) return 1.0;
    if (h == 0) return 0.0;
    auto key = std::make_pair(y, h);
    if (auto it = absorb_memo.find(key); it != absorb_memo.end()) return it->second;
    const Vector p = next_token_distribution(model, y, t);
    double best = 0;
    for (TokenId u = 0; u < model.vocab_size(); ++u) {
      double sum = 0;
      for (TokenId b = 0; b < model.vocab_size(); ++b) {
        if (p(b) == 0) continue;
        sum += p(b) * absorb(censored_next(spec, y, b, u), h - 1);
      }
      best = std::max(best, sum);
    }
    return absorb_memo[key] = best;
  }
};

}  // namespace

DefenderChoice defender_step(const Discriminant& model, const ToxicSpec& spec, std::span<const TokenId> window,
                             TokenId u, const DefenderConfig& config) {
  if (window.size() != model.context_length()) throw Error(ErrorCode::kInvalidArgument, "window length mismatch");
  if (u >= model.vocab_size()) throw Error(ErrorCode::kInvalidArgument, "user token out of range");
  if (config.depth == 0) throw Error(ErrorCode::kInvalidArgument, "lookahead depth must be positive");
  const Sentence x(window.begin(), window.end());
  Lookahead look{model, spec, config.temperature, {}, {}};

  DefenderChoice best;
  best.provisional_score = provisional_score(model, spec, x, config.temperature, config.completions, config.seed);
  if (spec.contains_toxic(x)) {
    best.null_absorption = 1.0;
    return best;
  }

  const Vector p0 = next_token_distribution(model, x, config.temperature);
  for (TokenId b = 0; b < model.vocab_size(); ++b) {
    if (p0(b) == 0) continue;
    best.null_absorption += p0(b) * look.absorb(censored_next(spec, x, b, u), config.depth - 1);
  }

  auto evaluate = [&](std::span<const TokenId> v) {
    const Vector p = v.empty() ? p0 : next_token_distribution(model, with_prompt(x, v), config.temperature);
    double sum = 0;
    for (TokenId b = 0; b < model.vocab_size(); ++b) {
      if (p(b) == 0) continue;
      sum += p(b) * look.arrival(censored_next(spec, x, b, u), config.depth - 1);
    }
    return 1.0 + sum;
  };

  best.arrival = evaluate({});
  best.objective = best.arrival;
  if (best.null_absorption == 0) return best;

  for (std::size_t i = 0; i < config.interventions.size(); ++i) {
    const Sentence& v = config.interventions[i];
    const double cost = intervention_cost(model, x, v, config.temperature, best.provisional_score);
    const double arrival = evaluate(v);
    const double objective = arrival - config.lambda * cost;
    if (objective > best.objective || (objective == best.objective && best.index != 0 && cost < best.cost)) {
      best.index = i + 1;
      best.v = v;
      best.cost = cost;
      best.arrival = arrival;
      best.objective = objective;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Absorption

std::vector<TokenId> absorption_policy(const GameModel& game, std::size_t horizon) {
  const std::size_t n = game.states();
  const std::size_t k = game.k();
  std::vector<double> q(n), next(n);
  std::vector<TokenId> policy(n, 0);
  for (std::size_t x = 0; x < n; ++x) q[x] = game.toxic(x) ? 1.0 : 0.0;
  for (std::size_t h = 1; h <= horizon; ++h) {
    for (std::size_t x = 0; x < n; ++x) {
      if (game.toxic(x)) {
        next[x] = 1.0;
        continue;
      }
      const auto law = game.bot_law(x);
      double best = -1;
      for (TokenId u = 0; u < k; ++u) {
        double sum = 0;
        for (TokenId b = 0; b < k; ++b) {
          if (law(b) == 0) continue;
          sum += law(b) * q[game.next(x, b, u)];
        }
        if (sum > best) {
          best = sum;
          policy[x] = u;
        }
      }
      next[x] = best;
    }
    q.swap(next);
  }
  return policy;
}

AbsorptionEstimate absorption_probability(const GameModel& game, std::span<const TokenId> start,
                                          std::size_t horizon, std::size_t n, std::uint64_t seed,
                                          AdversaryKind kind) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one simulation");
  AbsorptionEstimate est;
  est.trials = n;
  const std::size_t x0 = game.encode(start);
  if (game.toxic(x0) || !game.any_toxic()) {
    est.absorbed = game.toxic(x0) ? n : 0;
    est.probability = game.toxic(x0) ? 1.0 : 0.0;
    est.ci = {est.probability, est.probability};
    return est;
  }
  const std::vector<TokenId> policy =
      kind == AdversaryKind::kWorstCase ? absorption_policy(game, horizon) : std::vector<TokenId>{};
  Sampler sampler(seed);
  const std::size_t k = game.k();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t x = x0;
    for (std::size_t step = 0; step < horizon; ++step) {
      TokenId u = 0;
      if (kind == AdversaryKind::kWorstCase) {
        u = policy[x];
      } else {
        u = static_cast<TokenId>(std::min<std::size_t>(static_cast<std::size_t>(sampler.uniform() * k), k - 1));
      }
      const TokenId b = sampler.draw(game.bot_law(x));
      x = game.next(x, b, u);
      if (game.toxic(x)) {
        ++est.absorbed;
        break;
      }
    }
  }
  est.probability = static_cast<double>(est.absorbed) / static_cast<double>(n);
  est.ci = wilson_interval(est.absorbed, n);
  return est;
}

AbsorptionEstimate absorption_probability(const Discriminant& model, const ToxicSpec& spec,
                                          std::span<const TokenId> start, std::size_t horizon, std::size_t n,
                                          std::uint64_t seed, AdversaryKind kind, Temperature t) {
  if (spec.empty() && !spec.contains_toxic(start)) {
    if (n == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one simulation");
    return {0.0, {0.0, 0.0}, 0, n};
  }
  return absorption_probability(GameModel(model, spec, t), start, horizon, n, seed, kind);
}

void write_game_value(std::ostream& out, const GameValue& v, const GameModel& game, const Alphabet& a) {
  out << "# horizon " << v.horizon << "\n";
  out << "# sweeps " << v.sweeps << "\n";
  out << "# converged " << (v.converged ? "yes" : "no") << "\n";
  for (std::size_t x = 0; x < game.states(); ++x) {
    out << a.render(game.decode(x)) << '\t';
    if (v.tau[x] == kUnreachable) {
      out << "inf";
    } else {
      out << v.tau[x];
    }
    out << '\t' << a.symbol(v.policy[x]) << "\n";
  }
}

}  // namespace botlab
