#pragma once

// Last-l controllability of the compressed dynamics
//   x(k+1) = (x_3(k), ..., x_C(k), f(x(k)), u(k))
// on the deterministic (T = ZERO) skeleton: restriction-map certificates,
// plan synthesis, a breadth-first oracle and the class-map probe.

#include "botlab/dynamics.hpp"
#include "botlab/meaning.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace botlab {

/// The argmax next-token map tabulated over all K^C windows. States are
/// base-K window indices (first token most significant).
class Skeleton {
 public:
  explicit Skeleton(const Discriminant& model, std::size_t budget = std::size_t{1} << 22);

  std::size_t k() const { return k_; }
  std::size_t context_length() const { return c_; }
  std::size_t states() const { return table_.size(); }
  const std::string& model_hash() const { return model_hash_; }

  TokenId f(std::size_t state) const { return table_[state]; }
  std::size_t encode(std::span<const TokenId> window) const;
  Sentence decode(std::size_t state) const;

  /// One compressed step: bot token f(x) then user token u.
  std::size_t step(std::size_t state, TokenId u) const { return (state % tail_) * k_ * k_ + f(state) * k_ + u; }

  /// Code of the last `ell` tokens.
  std::size_t block(std::size_t state, std::size_t ell) const;
  std::size_t encode_block(std::span<const TokenId> block) const;

 private:
  std::size_t k_;
  std::size_t c_;
  std::size_t tail_;
  std::vector<TokenId> table_;
  std::string model_hash_;
};

/// Which fixings of the held coordinates a certificate examines.
struct Fixings {
  bool exhaustive = true;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  static Fixings all() { return {}; }
  static Fixings sample(std::size_t n, std::uint64_t seed) { return {false, n, seed}; }
};

struct Certificate {
  enum class Property { kSurjective, kBijective };

  struct Witness {
    /// Full window with the varied coordinates shown as in the first
    /// offending assignment.
    Sentence window;
    /// Surjectivity: a token never produced under this fixing.
    TokenId missing = 0;
    /// Bijectivity: two pivot values with the same output.
    TokenId first = 0;
    TokenId second = 0;
    TokenId output = 0;
  };

  Property property = Property::kSurjective;
  bool verdict = false;
  std::size_t ell = 0;
  /// 1-based first and last varied coordinate.
  std::size_t varied_from = 0;
  std::size_t varied_to = 0;
  std::string coverage;
  std::size_t fixings_checked = 0;
  std::size_t failing_fixings = 0;
  std::vector<Witness> witnesses;
  std::string model_hash;
};

/// The map from the first C - l + 2 coordinates to the next token, with the
/// last l - 2 held fixed, must hit every token for every fixing.
Certificate check_thm1(const Skeleton& s, std::size_t ell, Fixings fixings = Fixings::all());

/// The single-coordinate restriction at the pivot (C - l + 2 for even l,
/// C - l + 1 for odd l) must be a permutation for every fixing of the
/// remaining coordinates. Without explicit fixings: exhaustive when K <= 6
/// and C <= 6, otherwise 4096 sampled fixings.
Certificate check_thm2(const Skeleton& s, std::size_t ell, std::optional<Fixings> fixings = std::nullopt);

struct ControlPlan {
  enum class Method { kPhiU, kBfs };

  Method method = Method::kPhiU;
  Sentence start;
  Sentence target;
  std::vector<TokenId> inputs;
  /// States x(0), ..., x(len) as windows.
  std::vector<Sentence> trajectory;
  /// Inputs spent before the terminal window.
  std::size_t settle_steps = 0;
  std::string model_hash;

  std::size_t length() const { return inputs.size(); }
};

struct SynthesisOptions {
  /// Longest settling prefix tried before the terminal window.
  std::size_t max_settle = 4;
  std::size_t budget = std::size_t{1} << 24;
};

/// Plan driving the last l tokens of `start` to `target`.
///
/// Even l = 2m: a settling prefix (searched in length then lexicographic
/// order), m - 1 free inputs, one pivot input, then the m user tokens of the
/// target. The pivot is found by inverting the pivot restriction so that
/// the final bot token matches; zero or several preimages mean the
/// bijectivity hypothesis fails and raise an error. Odd l: the prefix and
/// the pivot input are searched jointly, followed by the m + 1 target user
/// tokens. Every returned plan has been simulated to the target.
ControlPlan synthesize(const Skeleton& s, const Sentence& start, const Sentence& target,
                       const SynthesisOptions& options = {});

/// Shortest plan by breadth-first search over compressed steps, or nullopt
/// when the target block is unreachable within `max_steps`.
std::optional<ControlPlan> bfs_oracle(const Skeleton& s, const Sentence& start, const Sentence& target,
                                      std::size_t max_steps);

/// Breadth-first distances from one start to every state.
struct BfsTree {
  std::size_t start = 0;
  /// -1 marks unreachable states.
  std::vector<int> dist;
  std::vector<std::uint32_t> parent;
  std::vector<TokenId> via;

  std::vector<TokenId> inputs_to(std::size_t state) const;
};

BfsTree bfs_tree(const Skeleton& s, std::size_t start);

/// Shortest plan length to each of the K^l blocks (-1 if unreachable).
std::vector<int> block_distances(const Skeleton& s, const BfsTree& tree, std::size_t ell);

/// Every block reachable from every start.
bool fully_controllable(const Skeleton& s, std::size_t ell);

/// States x(0), ..., x(n) under the given inputs.
std::vector<Sentence> simulate(const Skeleton& s, const Sentence& start, const std::vector<TokenId>& inputs);

/// Fraction of n stochastic replays of the plan's inputs at temperature t
/// that end on the target block.
double plan_success_rate(const Discriminant& model, const ControlPlan& plan, Temperature t, std::size_t n,
                         std::uint64_t seed);

/// The plan as a T = ZERO transcript (bot then user per compressed step).
Transcript plan_transcript(const ControlPlan& plan, const Skeleton& s);

void write_certificate(std::ostream& out, const Certificate& c, const Alphabet& a);
void write_plan(std::ostream& out, const ControlPlan& p, const Alphabet& a);

// ---------------------------------------------------------------------------
// Class map probe

struct ProbeReport {
  std::size_t sentences = 0;
  /// Sentences whose deterministic reply never reached EOS.
  std::size_t open_replies = 0;
  std::size_t input_classes = 0;
  std::size_t output_classes = 0;
  /// Input classes whose members reply into more than one class.
  std::size_t multi_valued = 0;
  /// Output classes hit by more than one input class.
  std::size_t collisions = 0;
  /// Classes of the classifier never produced as a reply class.
  std::size_t unhit = 0;
  /// (input class, output class) -> number of sentences.
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> edges;
  /// Human-readable witnesses for each failure kind.
  std::vector<std::string> witnesses;
  std::string classifier;

  bool injective() const { return collisions == 0 && multi_valued == 0; }
  bool surjective() const { return unhit == 0; }
};

/// Maps each member of `ms` to the class of its T = ZERO reply (the tokens
/// generated after it, up to EOS, at most max_reply tokens) and reports how
/// far the induced class map is from a bijection.
ProbeReport postulate_probe(const Discriminant& model, const MeaningClassifier& classifier, const MeaningfulSet& ms,
                            std::size_t max_reply = 0);

}  // namespace botlab
