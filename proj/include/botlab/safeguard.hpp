#pragma once

// Toxic-set censoring and the adversary/defender game on the compressed
// dynamics: value iteration for the adversary's expected arrival time,
// a receding-horizon defender, and Monte Carlo absorption estimates.

#include "botlab/dynamics.hpp"

#include <algorithm>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

namespace botlab {

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// phi1 is trained on toxic and tame sentences and scores toxic text 1.
/// phi2 has seen only tame text and scores toxic text 1 - epsilon.
enum class Scenario { kPhi1, kPhi2 };
enum class CensorScope { kNone, kInput, kOutput, kBoth };

std::string_view to_string(Scenario s);
std::string_view to_string(CensorScope s);

struct CensorDecision {
  bool allow = true;
  double score = 0;
  std::string reason;
};

/// A toxic set given by a list of toxic sentences. A token sequence is toxic
/// when it contains one of them (EOS removed) as a contiguous run.
class ToxicSpec {
 public:
  ToxicSpec(AlphabetPtr alphabet, std::vector<Sentence> toxic_sentences, Scenario scenario = Scenario::kPhi1,
            double epsilon = 0.2, double threshold = 0.9, CensorScope scope = CensorScope::kBoth);

  const Alphabet& alphabet() const { return *alphabet_; }
  const AlphabetPtr& alphabet_ptr() const { return alphabet_; }
  const std::vector<Sentence>& sentences() const { return sentences_; }
  const std::vector<Sentence>& phrases() const { return phrases_; }
  bool empty() const { return phrases_.empty(); }

  Scenario scenario() const { return scenario_; }
  double epsilon() const { return epsilon_; }
  double threshold() const { return threshold_; }
  CensorScope scope() const { return scope_; }
  bool censors_input() const { return scope_ == CensorScope::kInput || scope_ == CensorScope::kBoth; }
  bool censors_output() const { return scope_ == CensorScope::kOutput || scope_ == CensorScope::kBoth; }

  ToxicSpec with_scenario(Scenario s) const;
  ToxicSpec with_scope(CensorScope s) const;

  bool contains_toxic(std::span<const TokenId> tokens) const;
  /// Classifier score of a sentence or window.
  double score(std::span<const TokenId> tokens) const;
  /// Deny iff score >= threshold.
  CensorDecision censor(std::span<const TokenId> tokens) const;

 private:
  AlphabetPtr alphabet_;
  std::vector<Sentence> sentences_;
  std::vector<Sentence> phrases_;
  Scenario scenario_;
  double epsilon_;
  double threshold_;
  CensorScope scope_;
};

struct GameSpec {
  ToxicSpec toxic;
  /// Prompt strings the defender may show the bot before its turn.
  std::vector<Sentence> interventions;
};

/// Game spec file: `#scenario phi1|phi2`, `#epsilon e`, `#threshold t`,
/// `#scope none|input|output|both`, `#intervention <tokens>` lines, then
/// toxic sentences in corpus format.
GameSpec parse_game_spec(std::istream& in, AlphabetPtr alphabet);
GameSpec load_game_spec(const std::string& path, AlphabetPtr alphabet);
void write_game_spec(std::ostream& out, const GameSpec& spec);

/// The censored compressed step tabulated over all K^C windows. From state
/// x the bot draws b; an output censor replaces b by pad when the new
/// window is denied; the user's u is then shifted in, and an input censor
/// replaces it by pad when that window is denied.
class GameModel {
 public:
  GameModel(const Discriminant& model, const ToxicSpec& spec, Temperature t,
            std::size_t budget = std::size_t{1} << 20);

  std::size_t k() const { return k_; }
  std::size_t context_length() const { return c_; }
  std::size_t states() const { return toxic_.size(); }
  bool toxic(std::size_t state) const { return toxic_[state]; }
  bool any_toxic() const { return std::find(toxic_.begin(), toxic_.end(), true) != toxic_.end(); }
  /// Bot next-token law at `state`.
  auto bot_law(std::size_t state) const { return law_.row(static_cast<Eigen::Index>(state)); }
  std::size_t next(std::size_t state, TokenId bot, TokenId user) const;

  std::size_t encode(std::span<const TokenId> window) const;
  Sentence decode(std::size_t state) const;

 private:
  std::size_t k_;
  std::size_t c_;
  std::vector<bool> toxic_;
  Matrix law_;
  std::vector<std::size_t> next_;
};

struct GameValue {
  /// Expected compressed steps to the toxic set under the minimising
  /// adversary; kUnreachable when positive mass never arrives in time.
  std::vector<double> tau;
  /// Minimising input per state (lowest id on ties; 0 where all are equal).
  std::vector<TokenId> policy;
  std::size_t horizon = 0;
  /// Sweep after which values stopped changing (horizon if they never did).
  std::size_t sweeps = 0;
  bool converged = false;
};

/// V_0 = 0 on toxic states, infinity elsewhere;
/// V_h(x) = 0 if x is toxic, else 1 + min_u sum_b p(b|x) V_{h-1}(next(x, b, u)).
GameValue adversary_value_iteration(const GameModel& game, std::size_t horizon);
GameValue adversary_value_iteration(const Discriminant& model, const ToxicSpec& spec, std::size_t horizon,
                                    Temperature t = Temperature::finite(1.0));

struct ScenarioRow {
  Sentence start;
  double tau1 = 0;
  double tau2 = 0;
  bool ordered = true;
};

struct ScenarioReport {
  std::vector<ScenarioRow> rows;
  std::size_t violations = 0;
};

/// tau* under both censoring regimes for each start; flags starts where
/// tau2 > tau1.
ScenarioReport compare_scenarios(const Discriminant& model, const ToxicSpec& spec1, const ToxicSpec& spec2,
                                 const std::vector<Sentence>& starts, std::size_t horizon,
                                 Temperature t = Temperature::finite(1.0));

// ---------------------------------------------------------------------------
// Defender

struct DefenderConfig {
  std::vector<Sentence> interventions;
  double lambda = 1.0;
  std::size_t depth = 3;
  std::size_t completions = 64;
  std::uint64_t seed = 0;
  Temperature temperature = Temperature::finite(1.0);
};

struct DefenderChoice {
  /// 0 for the null intervention, i + 1 for interventions[i].
  std::size_t index = 0;
  Sentence v;
  double cost = 0;
  double arrival = 0;
  double objective = 0;
  double provisional_score = 0;
  /// Worst-case absorption probability within the lookahead under null.
  double null_absorption = 0;
};

/// Expected toxic score of completions of `window`: the deterministic
/// completion at T = ZERO, otherwise the mean over n sampled completions of
/// at most C tokens.
double provisional_score(const Discriminant& model, const ToxicSpec& spec, std::span<const TokenId> window,
                         Temperature t, std::size_t n, std::uint64_t seed);

/// (e^phi - 1) * ||p_v - p_0||^2 for the bot's next-token laws with and
/// without the prompt v.
double intervention_cost(const Discriminant& model, std::span<const TokenId> window, std::span<const TokenId> v,
                         Temperature t, double phi);

/// Picks the intervention for the bot turn of the compressed step from
/// `window` with user input `u`, maximising lookahead arrival time minus
/// lambda * cost. Ties prefer null, then lower cost, then lower index.
DefenderChoice defender_step(const Discriminant& model, const ToxicSpec& spec, std::span<const TokenId> window,
                             TokenId u, const DefenderConfig& config);

// ---------------------------------------------------------------------------
// Absorption

enum class AdversaryKind { kWorstCase, kRandom };

struct AbsorptionEstimate {
  double probability = 0;
  Interval ci;
  std::size_t absorbed = 0;
  std::size_t trials = 0;
};

/// Stationary input that maximises the probability of reaching the toxic
/// set within `horizon` steps (from the final sweep), lowest id on ties.
std::vector<TokenId> absorption_policy(const GameModel& game, std::size_t horizon);

/// Fraction of n simulated conversations from `start` that enter the toxic
/// set within `horizon` compressed steps. Already-toxic starts give 1 and an
/// empty toxic set gives 0 without sampling.
AbsorptionEstimate absorption_probability(const GameModel& game, std::span<const TokenId> start,
                                          std::size_t horizon, std::size_t n, std::uint64_t seed,
                                          AdversaryKind kind = AdversaryKind::kWorstCase);
AbsorptionEstimate absorption_probability(const Discriminant& model, const ToxicSpec& spec,
                                          std::span<const TokenId> start, std::size_t horizon, std::size_t n,
                                          std::uint64_t seed, AdversaryKind kind = AdversaryKind::kWorstCase,
                                          Temperature t = Temperature::finite(1.0));

/// `window tau policy` rows.
void write_game_value(std::ostream& out, const GameValue& v, const GameModel& game, const Alphabet& a);

}  // namespace botlab
