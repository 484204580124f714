#pragma once

// The bot as a stochastic dynamical system on C-token windows: temperature
// sampling, rollouts, sentence probabilities, the user/bot alternation and
// the substitution-based attention metric.

#include "botlab/models.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace botlab {

/// Sampling temperature: a positive real, or one of the two limits.
class Temperature {
 public:
  enum class Kind { kFinite, kZero, kInf };

  static Temperature finite(double t);
  static Temperature zero() { return Temperature(Kind::kZero, 0.0); }
  static Temperature infinite() { return Temperature(Kind::kInf, 0.0); }
  /// Accepts "zero", "inf", or a positive decimal.
  static Temperature parse(const std::string& text);

  Kind kind() const { return kind_; }
  double value() const { return value_; }
  std::string to_string() const;

  bool operator==(const Temperature&) const = default;

 private:
  Temperature(Kind kind, double value) : kind_(kind), value_(value) {}

  Kind kind_;
  double value_;
};

/// Categorical draws from a seeded 64-bit Mersenne twister. Every draw
/// consumes exactly one engine output, so call sequences replay exactly.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : engine_(seed) {}

  template <typename Derived>
  TokenId draw(const Eigen::MatrixBase<Derived>& p) {
    const double u = unit_draw(engine_());
    double acc = 0;
    Eigen::Index last = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p(i) <= 0) continue;
      acc += p(i);
      last = i;
      if (u < acc) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(last);
  }

  double uniform() { return unit_draw(engine_()); }
  std::uint64_t bits() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// The state x_{t-C:t}: a window of C token ids, oldest first, and a clock
/// counting the tokens shifted in so far.
class Context {
 public:
  explicit Context(Sentence window, std::size_t clock = 0);

  static Context empty(std::size_t context_length, TokenId pad);
  static Context from_prompt(std::span<const TokenId> prompt, std::size_t context_length, TokenId pad);

  const Sentence& window() const { return window_; }
  std::size_t size() const { return window_.size(); }
  std::size_t clock() const { return clock_; }

  Context shifted(TokenId t) const;

  bool operator==(const Context&) const = default;

 private:
  Sentence window_;
  std::size_t clock_;
};

/// Next-token law at temperature T. Logits may contain -inf; NaN, +inf or
/// an all -inf vector are rejected as invalid discriminant output. The INF
/// limit is uniform over tokens with finite logits.
Vector next_token_distribution(const Discriminant& model, std::span<const TokenId> window, Temperature t);

struct StepResult {
  Context context;
  TokenId token;
};

StepResult step(const Discriminant& model, const Context& ctx, Temperature t, Sampler& sampler);

struct RolloutResult {
  /// The initial tokens followed by everything generated.
  Sentence tokens;
  /// Last C tokens of `tokens`, left-padded.
  Sentence window;
  bool halted = false;
  std::size_t steps = 0;
};

/// Generates until EOS is sampled or `max_steps` tokens have been produced.
RolloutResult rollout(const Discriminant& model, std::span<const TokenId> init, Temperature t, Sampler& sampler,
                      std::size_t max_steps);

/// P(x_1), the law of the first token.
class FirstTokenPrior {
 public:
  explicit FirstTokenPrior(Vector p);

  /// Uniform over ordinary tokens (not EOS, pad or labels).
  static FirstTokenPrior uniform_words(const Alphabet& a);
  /// Uniform over all K tokens.
  static FirstTokenPrior uniform_all(const Alphabet& a);
  /// Empirical first-token frequencies of a corpus.
  static FirstTokenPrior empirical(const Corpus& c);

  double operator()(TokenId t) const { return p_(t); }
  const Vector& probabilities() const { return p_; }

 private:
  Vector p_;
};

/// P(x_1) times the product of next-token conditionals, each evaluated on
/// the left-padded prefix window.
double sentence_probability(const Discriminant& model, const Sentence& s, Temperature t,
                            const FirstTokenPrior& prior);

/// One compressed step: the bot samples from the current window, then the
/// user's token is shifted in.
struct ConversationStep {
  Context context;
  TokenId bot;
};

ConversationStep conversation_step(const Discriminant& model, const Context& ctx, TokenId user_input, Temperature t,
                                   Sampler& sampler);

// ---------------------------------------------------------------------------
// Transcripts

enum class Speaker { kUser, kBot, kSilent, kCensored };

std::string_view to_string(Speaker s);

/// One token-level turn. A censored turn records the sampled token; the
/// window receives pad in its place. `intervention` holds prompt tokens the
/// bot saw transiently before sampling.
struct Turn {
  Speaker speaker;
  TokenId token;
  Sentence intervention;

  bool operator==(const Turn&) const = default;
};

struct Transcript {
  std::uint64_t seed = 0;
  Temperature temperature = Temperature::finite(1.0);
  std::string model_hash;
  Sentence init;
  std::vector<Turn> turns;

  /// Window after each turn, derived by shifting. Silent and censored turns
  /// shift in `pad`.
  std::vector<Sentence> contexts(TokenId pad) const;

  bool operator==(const Transcript&) const = default;
};

/// Replays a transcript against `model`, re-sampling every bot turn with the
/// recorded seed. Throws a validation error on the first mismatch.
Context replay(const Discriminant& model, const Transcript& transcript);

void write_transcript(std::ostream& out, const Transcript& t, const Alphabet& a);
Transcript read_transcript(std::istream& in, const Alphabet& a);

/// Window the bot conditions on when prompt tokens v are placed in front of
/// it: the last C tokens of (window, v).
Sentence with_prompt(std::span<const TokenId> window, std::span<const TokenId> v);

/// A live conversation in the token-level view. Each user token, bot token
/// or silence shifts the window by one.
class Conversation {
 public:
  /// Returns true when the window after the bot token must be censored.
  using OutputFilter = std::function<bool(std::span<const TokenId>)>;

  Conversation(DiscriminantPtr model, Context init, Temperature t, std::uint64_t seed);

  const Turn& bot_turn(std::span<const TokenId> intervention = {}, const OutputFilter& deny = {});
  void silent_turn();
  void user_turn(TokenId u);

  const Context& context() const { return context_; }
  const Transcript& transcript() const { return transcript_; }
  const Discriminant& model() const { return *model_; }
  Temperature temperature() const { return transcript_.temperature; }

 private:
  DiscriminantPtr model_;
  Context context_;
  Sampler sampler_;
  Transcript transcript_;
};

// ---------------------------------------------------------------------------
// Attention

/// Largest total-variation change of the next-token law over all
/// substitutions of position i (1-based).
double attention_sensitivity(const Discriminant& model, std::span<const TokenId> window, std::size_t i,
                             Temperature t = Temperature::finite(1.0));

bool is_attentive(double sensitivity, double tau);

}  // namespace botlab
