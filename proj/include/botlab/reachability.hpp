#pragma once

// Reachable sets of complete sentences from a token or prompt: exact
// enumeration of the generation tree and Monte Carlo estimates.

#include "botlab/dynamics.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace botlab {

struct ReachedSentence {
  /// Origin followed by the generated tokens, EOS last.
  Sentence sentence;
  double probability = 0;
  /// Wilson 95% interval (Monte Carlo only; [p, p] for exact reports).
  Interval ci;
  std::size_t count = 0;
};

struct ReachReport {
  enum class Method { kExact, kMonteCarlo };

  Method method = Method::kExact;
  Sentence origin;
  std::size_t horizon = 0;
  double theta = 0;
  Temperature temperature = Temperature::finite(1.0);
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::string model_hash;

  /// Sentences with probability >= theta, most probable first, ties in
  /// lexicographic order.
  std::vector<ReachedSentence> reached;
  /// Probability of generating `horizon` tokens without EOS.
  double continuation_mass = 0;
  /// Probability mass in subtrees skipped by pruning (exact only).
  double pruned_mass = 0;
  /// Halted mass below theta that was visited but not reported (exact only).
  double unreported_mass = 0;

  double reported_mass() const;
  const ReachedSentence* find(const Sentence& s) const;
};

struct ReachOptions {
  Temperature temperature = Temperature::finite(1.0);
  /// Upper bound on K^horizon for exact enumeration.
  std::size_t budget = std::size_t{1} << 22;
};

/// Depth-first enumeration of every continuation of `origin` of at most
/// `horizon` generated tokens. A subtree whose path probability is below
/// theta / K^remaining is skipped.
ReachReport reach_exact(const Discriminant& model, const Sentence& origin, std::size_t horizon, double theta,
                        const ReachOptions& options = {});

/// n independent rollouts from `origin`, sampled sequentially from `seed`.
ReachReport reach_mc(const Discriminant& model, const Sentence& origin, std::size_t horizon, double theta,
                     std::size_t n, std::uint64_t seed, const ReachOptions& options = {});

/// reach_exact from an incomplete prompt of at most C tokens.
ReachReport prompt_reach(const Discriminant& model, const Sentence& prompt, std::size_t horizon, double theta,
                         const ReachOptions& options = {});

/// `sentence probability [low high]` rows under a commented header.
void write_report(std::ostream& out, const ReachReport& r, const Alphabet& a);

}  // namespace botlab
