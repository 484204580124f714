#include "botlab/reachability.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <ostream>

namespace botlab {

double ReachReport::reported_mass() const {
  double m = 0;
  for (const auto& r : reached) m += r.probability;
  return m;
}

const ReachedSentence* ReachReport::find(const Sentence& s) const {
  for (const auto& r : reached) {
    if (r.sentence == s) return &r;
  }
  return nullptr;
}

namespace {

void check_origin(const Discriminant& model, const Sentence& origin) {
  if (origin.empty()) throw Error(ErrorCode::kInvalidArgument, "reachability needs a non-empty origin");
  for (TokenId t : origin) {
    if (t >= model.vocab_size()) throw Error(ErrorCode::kInvalidArgument, "origin token out of range");
  }
  if (origin.back() == model.alphabet().eos()) {
    throw Error(ErrorCode::kInvalidArgument, "origin is already a complete sentence");
  }
}

void sort_reached(std::vector<ReachedSentence>& v) {
  std::sort(v.begin(), v.end(), [](const ReachedSentence& x, const ReachedSentence& y) {
    if (x.probability != y.probability) return x.probability > y.probability;
    return x.sentence < y.sentence;
  });
}

struct Tree {
  const Discriminant& model;
  const ReachOptions& options;
  double theta;
  std::size_t horizon;
  ReachReport& report;
  Sentence path;

  void visit(const Context& ctx, double q, std::size_t depth) {
    if (depth == horizon) {
      report.continuation_mass += q;
      return;
    }
    const double k = static_cast<double>(model.vocab_size());
    if (theta > 0 && q < theta / std::pow(k, static_cast<double>(horizon - depth))) {
      report.pruned_mass += q;
      return;
    }
    const Vector p = next_token_distribution(model, ctx.window(), options.temperature);
    const TokenId eos = model.alphabet().eos();
    for (TokenId t = 0; t < model.vocab_size(); ++t) {
      if (p(t) <= 0) continue;
      const double next = q * p(t);
      path.push_back(t);
      if (t == eos) {
        if (next >= theta) {
          report.reached.push_back({path, next, {next, next}, 0});
        } else {
          report.unreported_mass += next;
        }
      } else {
        visit(ctx.shifted(t), next, depth + 1);
      }
      path.pop_back();
    }
  }
};

}  // namespace

ReachReport reach_exact(const Discriminant& model, const Sentence& origin, std::size_t horizon, double theta,
                        const ReachOptions& options) {
  check_origin(model, origin);
  const std::size_t size = checked_pow(model.vocab_size(), horizon);
  if (size > options.budget) {
    throw Error(ErrorCode::kBudgetExceeded, "exact reachability over K^horizon = " +
                                                std::to_string(model.vocab_size()) + "^" + std::to_string(horizon) +
                                                " paths exceeds the budget of " + std::to_string(options.budget));
  }
  ReachReport report;
  report.method = ReachReport::Method::kExact;
  report.origin = origin;
  report.horizon = horizon;
  report.theta = theta;
  report.temperature = options.temperature;
  report.model_hash = model.hash();

  Tree tree{model, options, theta, horizon, report, origin};
  tree.visit(Context(left_pad(origin, model.context_length(), model.alphabet().pad()), origin.size()), 1.0, 0);
  sort_reached(report.reached);
  return report;
}

ReachReport reach_mc(const Discriminant& model, const Sentence& origin, std::size_t horizon, double theta,
                     std::size_t n, std::uint64_t seed, const ReachOptions& options) {
  check_origin(model, origin);
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "Monte Carlo reachability needs n >= 1");
  ReachReport report;
  report.method = ReachReport::Method::kMonteCarlo;
  report.origin = origin;
  report.horizon = horizon;
  report.theta = theta;
  report.temperature = options.temperature;
  report.samples = n;
  report.seed = seed;
  report.model_hash = model.hash();

  Sampler sampler(seed);
  std::map<Sentence, std::size_t> counts;
  std::size_t open = 0;
  for (std::size_t i = 0; i < n; ++i) {
    RolloutResult r = rollout(model, origin, options.temperature, sampler, horizon);
    if (r.halted) {
      ++counts[r.tokens];
    } else {
      ++open;
    }
  }
  const double total = static_cast<double>(n);
  for (const auto& [s, c] : counts) {
    const double freq = static_cast<double>(c) / total;
    if (freq >= theta) report.reached.push_back({s, freq, wilson_interval(c, n), c});
  }
  report.continuation_mass = static_cast<double>(open) / total;
  sort_reached(report.reached);
  return report;
}

ReachReport prompt_reach(const Discriminant& model, const Sentence& prompt, std::size_t horizon, double theta,
                         const ReachOptions& options) {
  if (prompt.empty()) throw Error(ErrorCode::kInvalidArgument, "prompt must not be empty");
  if (prompt.size() > model.context_length()) {
    throw Error(ErrorCode::kInvalidArgument, "prompt longer than the context length");
  }
  return reach_exact(model, prompt, horizon, theta, options);
}

void write_report(std::ostream& out, const ReachReport& r, const Alphabet& a) {
  out << "# method " << (r.method == ReachReport::Method::kExact ? "exact" : "monte_carlo") << "\n";
  out << "# origin " << a.render(r.origin) << "\n";
  out << "# model " << r.model_hash << "\n";
  out << "# temperature " << r.temperature.to_string() << "\n";
  out << "# theta " << std::setprecision(17) << r.theta << "\n";
  out << "# horizon " << r.horizon << "\n";
  if (r.method == ReachReport::Method::kMonteCarlo) {
    out << "# samples " << r.samples << "\n";
    out << "# seed " << r.seed << "\n";
  }
  out << "# continuation_mass " << r.continuation_mass << "\n";
  if (r.method == ReachReport::Method::kExact) out << "# pruned_mass " << r.pruned_mass << "\n";
  for (const auto& s : r.reached) {
    out << a.render(s.sentence) << '\t' << s.probability;
    if (r.method == ReachReport::Method::kMonteCarlo) out << '\t' << s.ci.low << '\t' << s.ci.high;
    out << "\n";
  }
}

}  // namespace botlab
