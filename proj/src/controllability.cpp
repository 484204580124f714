#include "botlab/controllability.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace botlab {

// ---------------------------------------------------------------------------
// Skeleton

Skeleton::Skeleton(const Discriminant& model, std::size_t budget)
    : k_(model.vocab_size()), c_(model.context_length()), model_hash_(model.hash()) {
  if (c_ < 2) throw Error(ErrorCode::kInvalidArgument, "compressed dynamics need a context of at least 2 tokens");
  const std::size_t n = checked_pow(k_, c_);
  if (n > budget) {
    throw Error(ErrorCode::kBudgetExceeded, "state space K^C = " + std::to_string(k_) + "^" + std::to_string(c_) +
                                                " exceeds the budget of " + std::to_string(budget));
  }
  tail_ = checked_pow(k_, c_ - 2);
  table_.resize(n);
  for (std::size_t i = 0; i < n; ++i) table_[i] = model.deterministic_token(window_from_index(i, k_, c_));
}

std::size_t Skeleton::encode(std::span<const TokenId> window) const {
  if (window.size() != c_) throw Error(ErrorCode::kInvalidArgument, "window length does not match the model");
  for (TokenId t : window) {
    if (t >= k_) throw Error(ErrorCode::kInvalidArgument, "token id out of range");
  }
  return window_index(window, k_);
}

Sentence Skeleton::decode(std::size_t state) const { return window_from_index(state, k_, c_); }

std::size_t Skeleton::block(std::size_t state, std::size_t ell) const { return state % checked_pow(k_, ell); }

std::size_t Skeleton::encode_block(std::span<const TokenId> block) const {
  for (TokenId t : block) {
    if (t >= k_) throw Error(ErrorCode::kInvalidArgument, "token id out of range");
  }
  return window_index(block, k_);
}

namespace {

void check_ell(const Skeleton& s, std::size_t ell) {
  if (ell < 2) throw Error(ErrorCode::kInvalidArgument, "ℓ must be ≥ 2");
  if (ell > s.context_length()) throw Error(ErrorCode::kInvalidArgument, "ℓ must not exceed the context length");
}

std::string coverage_note(const Fixings& f, std::size_t total) {
  if (f.exhaustive) return "exhaustive (" + std::to_string(total) + " fixings)";
  return "sampled (" + std::to_string(f.samples) + " of " + std::to_string(total) + " fixings, seed " +
         std::to_string(f.seed) + ")";
}

constexpr std::size_t kMaxWitnesses = 8;

}  // namespace

// ---------------------------------------------------------------------------
// Certificates

Certificate check_thm1(const Skeleton& s, std::size_t ell, Fixings fixings) {
  check_ell(s, ell);
  const std::size_t k = s.k();
  const std::size_t c = s.context_length();
  const std::size_t held = checked_pow(k, ell - 2);
  const std::size_t varied = checked_pow(k, c - ell + 2);

  Certificate cert;
  cert.property = Certificate::Property::kSurjective;
  cert.ell = ell;
  cert.varied_from = 1;
  cert.varied_to = c - ell + 2;
  cert.coverage = coverage_note(fixings, held);
  cert.model_hash = s.model_hash();

  std::vector<std::size_t> chosen;
  if (fixings.exhaustive) {
    chosen.resize(held);
    for (std::size_t i = 0; i < held; ++i) chosen[i] = i;
  } else {
    Sampler rng(fixings.seed);
    for (std::size_t i = 0; i < fixings.samples; ++i) chosen.push_back(rng.bits() % held);
  }

  std::vector<bool> hit(k);
  for (std::size_t fix : chosen) {
    std::fill(hit.begin(), hit.end(), false);
    std::size_t distinct = 0;
    for (std::size_t v = 0; v < varied && distinct < k; ++v) {
      const TokenId y = s.f(v * held + fix);
      if (!hit[y]) {
        hit[y] = true;
        ++distinct;
      }
    }
    ++cert.fixings_checked;
    if (distinct == k) continue;
    ++cert.failing_fixings;
    if (cert.witnesses.size() < kMaxWitnesses) {
      const auto missing = static_cast<TokenId>(std::find(hit.begin(), hit.end(), false) - hit.begin());
      cert.witnesses.push_back({s.decode(fix), missing, 0, 0, 0});
    }
  }
  cert.verdict = cert.failing_fixings == 0;
  return cert;
}

Certificate check_thm2(const Skeleton& s, std::size_t ell, std::optional<Fixings> fixings) {
  check_ell(s, ell);
  const std::size_t k = s.k();
  const std::size_t c = s.context_length();
  const std::size_t p = pivot_position(c, ell);
  const std::size_t stride = checked_pow(k, c - p);
  const std::size_t others = checked_pow(k, c - 1);
  if (!fixings) fixings = (k <= 6 && c <= 6) ? Fixings::all() : Fixings::sample(4096, 0);

  Certificate cert;
  cert.property = Certificate::Property::kBijective;
  cert.ell = ell;
  cert.varied_from = p;
  cert.varied_to = p;
  cert.coverage = coverage_note(*fixings, others);
  cert.model_hash = s.model_hash();

  // A fixing is a state with the pivot coordinate zeroed.
  auto base_of = [&](std::size_t j) { return (j / stride) * stride * k + (j % stride); };
  std::vector<std::size_t> chosen;
  if (fixings->exhaustive) {
    chosen.resize(others);
    for (std::size_t j = 0; j < others; ++j) chosen[j] = base_of(j);
  } else {
    Sampler rng(fixings->seed);
    for (std::size_t i = 0; i < fixings->samples; ++i) chosen.push_back(base_of(rng.bits() % others));
  }

  std::vector<int> seen(k);
  for (std::size_t base : chosen) {
    std::fill(seen.begin(), seen.end(), -1);
    ++cert.fixings_checked;
    for (std::size_t v = 0; v < k; ++v) {
      const TokenId y = s.f(base + v * stride);
      if (seen[y] < 0) {
        seen[y] = static_cast<int>(v);
        continue;
      }
      ++cert.failing_fixings;
      if (cert.witnesses.size() < kMaxWitnesses) {
        cert.witnesses.push_back(
            {s.decode(base + v * stride), 0, static_cast<TokenId>(seen[y]), static_cast<TokenId>(v), y});
      }
      break;
    }
  }
  cert.verdict = cert.failing_fixings == 0;
  return cert;
}

// ---------------------------------------------------------------------------
// Simulation

std::vector<Sentence> simulate(const Skeleton& s, const Sentence& start, const std::vector<TokenId>& inputs) {
  std::size_t x = s.encode(start);
  std::vector<Sentence> out{s.decode(x)};
  for (TokenId u : inputs) {
    if (u >= s.k()) throw Error(ErrorCode::kInvalidArgument, "input token out of range");
    x = s.step(x, u);
    out.push_back(s.decode(x));
  }
  return out;
}

namespace {

std::size_t run(const Skeleton& s, std::size_t x, std::span<const TokenId> inputs) {
  for (TokenId u : inputs) x = s.step(x, u);
  return x;
}

// Odometer over A^n in lexicographic order.
bool advance(std::vector<TokenId>& digits, std::size_t k) {
  for (std::size_t i = digits.size(); i-- > 0;) {
    if (++digits[i] < k) return true;
    digits[i] = 0;
  }
  return false;
}

std::string block_diff(const Sentence& got, const Sentence& want, const Alphabet* a) {
  std::ostringstream out;
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (got[i] == want[i]) continue;
    out << " position " << i + 1 << ": got " << (a ? a->symbol(got[i]) : std::to_string(got[i])) << " want "
        << (a ? a->symbol(want[i]) : std::to_string(want[i])) << ';';
  }
  return out.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthesis

ControlPlan synthesize(const Skeleton& s, const Sentence& start, const Sentence& target,
                       const SynthesisOptions& options) {
  const std::size_t ell = target.size();
  check_ell(s, ell);
  const std::size_t k = s.k();
  const std::size_t c = s.context_length();
  const std::size_t x0 = s.encode(start);
  const std::size_t want = s.encode_block(target);
  const bool even = ell % 2 == 0;
  const std::size_t m = ell / 2;

  // User tokens of the target block, in the order they must be typed.
  std::vector<TokenId> typed;
  for (std::size_t i = even ? 1 : 0; i < ell; i += 2) typed.push_back(target[i]);
  const std::size_t free_count = even ? m - 1 : 0;

  std::size_t best_match = 0;
  std::vector<TokenId> best_inputs;
  auto score = [&](std::size_t x, const std::vector<TokenId>& inputs) {
    const Sentence got = s.decode(x);
    std::size_t match = 0;
    for (std::size_t i = 0; i < ell; ++i) match += got[c - ell + i] == target[i];
    if (best_inputs.empty() || match > best_match) {
      best_match = match;
      best_inputs = inputs;
    }
  };

  auto finish = [&](std::vector<TokenId> inputs, std::size_t settle) {
    ControlPlan plan;
    plan.method = ControlPlan::Method::kPhiU;
    plan.start = start;
    plan.target = target;
    plan.inputs = std::move(inputs);
    plan.trajectory = simulate(s, start, plan.inputs);
    plan.settle_steps = settle;
    plan.model_hash = s.model_hash();
    const Sentence& last = plan.trajectory.back();
    if (!std::equal(target.begin(), target.end(), last.end() - static_cast<std::ptrdiff_t>(ell))) {
      throw Error(ErrorCode::kValidation, "plan does not reach the target:" +
                                              block_diff(Sentence(last.end() - static_cast<std::ptrdiff_t>(ell),
                                                                  last.end()),
                                                         target, nullptr));
    }
    return plan;
  };

  std::size_t work = 0;
  const std::size_t settle_limit = even ? options.max_settle : options.max_settle + 1;
  for (std::size_t r = 0; r <= settle_limit; ++r) {
    std::vector<TokenId> pre(r + free_count, 0);
    do {
      if (++work > options.budget) {
        throw Error(ErrorCode::kBudgetExceeded, "synthesis search exceeded " + std::to_string(options.budget) +
                                                    " candidate prefixes");
      }
      std::size_t x = run(s, x0, pre);
      std::vector<TokenId> inputs = pre;
      if (even) {
        // x is the state one step before the pivot input. The first C - 1
        // coordinates of the next state do not depend on it.
        Sentence next = s.decode(x);
        next.erase(next.begin(), next.begin() + 2);
        next.push_back(s.f(x));
        Sentence window(next.begin() + static_cast<std::ptrdiff_t>(2 * m - 2), next.end());
        window.push_back(0);
        const std::size_t slot = window.size() - 1;
        window.insert(window.end(), target.begin(), target.end() - 2);
        std::vector<TokenId> roots;
        for (TokenId v = 0; v < k; ++v) {
          window[slot] = v;
          if (s.f(s.encode(window)) == target[ell - 2]) roots.push_back(v);
        }
        if (roots.size() != 1) {
          window[slot] = 0;
          throw Error(ErrorCode::kHypothesisViolated,
                      "bijectivity hypothesis violated at runtime: " + std::to_string(roots.size()) +
                          " pivot preimages at state " + std::to_string(x) + " (pivot position " +
                          std::to_string(slot + 1) + ")");
        }
        inputs.push_back(roots.front());
      }
      inputs.insert(inputs.end(), typed.begin(), typed.end());
      const std::size_t end = run(s, x0, inputs);
      if (s.block(end, ell) == want) return finish(std::move(inputs), r);
      score(end, inputs);
    } while (advance(pre, k));
  }

  const Sentence got = s.decode(run(s, x0, best_inputs));
  throw Error(ErrorCode::kValidation,
              "no plan within " + std::to_string(settle_limit) + " settling steps; closest attempt differs at" +
                  block_diff(Sentence(got.end() - static_cast<std::ptrdiff_t>(ell), got.end()), target, nullptr));
}

// ---------------------------------------------------------------------------
// Breadth-first oracle

std::vector<TokenId> BfsTree::inputs_to(std::size_t state) const {
  if (dist[state] < 0) throw Error(ErrorCode::kInvalidArgument, "state is unreachable");
  std::vector<TokenId> out;
  while (state != start) {
    out.push_back(via[state]);
    state = parent[state];
  }
  std::reverse(out.begin(), out.end());
  return out;
}

BfsTree bfs_tree(const Skeleton& s, std::size_t start) {
  BfsTree t;
  t.start = start;
  t.dist.assign(s.states(), -1);
  t.parent.assign(s.states(), 0);
  t.via.assign(s.states(), 0);
  std::deque<std::size_t> queue{start};
  t.dist[start] = 0;
  while (!queue.empty()) {
    const std::size_t x = queue.front();
    queue.pop_front();
    for (TokenId u = 0; u < s.k(); ++u) {
      const std::size_t y = s.step(x, u);
      if (t.dist[y] >= 0) continue;
      t.dist[y] = t.dist[x] + 1;
      t.parent[y] = static_cast<std::uint32_t>(x);
      t.via[y] = u;
      queue.push_back(y);
    }
  }
  return t;
}

std::vector<int> block_distances(const Skeleton& s, const BfsTree& tree, std::size_t ell) {
  std::vector<int> out(checked_pow(s.k(), ell), -1);
  for (std::size_t x = 0; x < s.states(); ++x) {
    if (tree.dist[x] < 0) continue;
    int& d = out[s.block(x, ell)];
    if (d < 0 || tree.dist[x] < d) d = tree.dist[x];
  }
  return out;
}

std::optional<ControlPlan> bfs_oracle(const Skeleton& s, const Sentence& start, const Sentence& target,
                                      std::size_t max_steps) {
  const std::size_t ell = target.size();
  if (ell == 0 || ell > s.context_length()) throw Error(ErrorCode::kInvalidArgument, "target block has a bad length");
  const std::size_t x0 = s.encode(start);
  const std::size_t want = s.encode_block(target);

  std::vector<int> dist(s.states(), -1);
  std::vector<std::uint32_t> parent(s.states(), 0);
  std::vector<TokenId> via(s.states(), 0);
  std::deque<std::size_t> queue{x0};
  dist[x0] = 0;
  std::optional<std::size_t> hit;
  while (!queue.empty()) {
    const std::size_t x = queue.front();
    queue.pop_front();
    if (s.block(x, ell) == want) {
      hit = x;
      break;
    }
    if (static_cast<std::size_t>(dist[x]) >= max_steps) continue;
    for (TokenId u = 0; u < s.k(); ++u) {
      const std::size_t y = s.step(x, u);
      if (dist[y] >= 0) continue;
      dist[y] = dist[x] + 1;
      parent[y] = static_cast<std::uint32_t>(x);
      via[y] = u;
      queue.push_back(y);
    }
  }
  if (!hit) return std::nullopt;

  ControlPlan plan;
  plan.method = ControlPlan::Method::kBfs;
  plan.start = start;
  plan.target = target;
  for (std::size_t x = *hit; x != x0; x = parent[x]) plan.inputs.push_back(via[x]);
  std::reverse(plan.inputs.begin(), plan.inputs.end());
  plan.trajectory = simulate(s, start, plan.inputs);
  plan.model_hash = s.model_hash();
  return plan;
}

bool fully_controllable(const Skeleton& s, std::size_t ell) {
  for (std::size_t x = 0; x < s.states(); ++x) {
    const auto d = block_distances(s, bfs_tree(s, x), ell);
    if (std::any_of(d.begin(), d.end(), [](int v) { return v < 0; })) return false;
  }
  return true;
}

double plan_success_rate(const Discriminant& model, const ControlPlan& plan, Temperature t, std::size_t n,
                         std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one replay");
  Sampler sampler(seed);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Context ctx(plan.start);
    for (TokenId u : plan.inputs) ctx = conversation_step(model, ctx, u, t, sampler).context;
    const Sentence& w = ctx.window();
    ok += std::equal(plan.target.begin(), plan.target.end(), w.end() - static_cast<std::ptrdiff_t>(plan.target.size()));
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

Transcript plan_transcript(const ControlPlan& plan, const Skeleton& s) {
  Transcript t;
  t.seed = 0;
  t.temperature = Temperature::zero();
  t.model_hash = plan.model_hash;
  t.init = plan.start;
  std::size_t x = s.encode(plan.start);
  for (TokenId u : plan.inputs) {
    t.turns.push_back({Speaker::kBot, s.f(x), {}});
    t.turns.push_back({Speaker::kUser, u, {}});
    x = s.step(x, u);
  }
  return t;
}

void write_certificate(std::ostream& out, const Certificate& c, const Alphabet& a) {
  const bool surj = c.property == Certificate::Property::kSurjective;
  out << "# property " << (surj ? "surjective" : "bijective") << "\n";
  out << "# model " << c.model_hash << "\n";
  out << "# ell " << c.ell << "\n";
  out << "# varied " << c.varied_from << ".." << c.varied_to << "\n";
  out << "# coverage " << c.coverage << "\n";
  out << "verdict\t" << (c.verdict ? "pass" : "fail") << "\n";
  out << "fixings_checked\t" << c.fixings_checked << "\n";
  out << "failing_fixings\t" << c.failing_fixings << "\n";
  for (const auto& w : c.witnesses) {
    if (surj) {
      out << "witness\t" << a.render(w.window) << "\tmissing\t" << a.symbol(w.missing) << "\n";
    } else {
      out << "witness\t" << a.render(w.window) << "\tcollision\t" << a.symbol(w.first) << ' ' << a.symbol(w.second)
          << "\toutput\t" << a.symbol(w.output) << "\n";
    }
  }
}

void write_plan(std::ostream& out, const ControlPlan& p, const Alphabet& a) {
  out << "# method " << (p.method == ControlPlan::Method::kPhiU ? "phi_u" : "bfs") << "\n";
  out << "# model " << p.model_hash << "\n";
  out << "# start " << a.render(p.start) << "\n";
  out << "# target " << a.render(p.target) << "\n";
  out << "# length " << p.length() << "\n";
  out << "# settle " << p.settle_steps << "\n";
  for (std::size_t k = 0; k < p.trajectory.size(); ++k) {
    out << k << '\t' << (k < p.inputs.size() ? a.symbol(p.inputs[k]) : "-") << '\t' << a.render(p.trajectory[k])
        << "\n";
  }
}

// ---------------------------------------------------------------------------
// Class map probe

ProbeReport postulate_probe(const Discriminant& model, const MeaningClassifier& classifier, const MeaningfulSet& ms,
                            std::size_t max_reply) {
  if (max_reply == 0) max_reply = model.context_length();
  const Alphabet& a = model.alphabet();
  ProbeReport report;
  report.classifier = classifier.describe();

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> edges;
  std::map<std::size_t, std::set<std::size_t>> out_of, into;
  std::map<std::size_t, Sentence> example_in;
  std::set<std::size_t> inputs;
  for (const Sentence& s : ms.sorted_members()) {
    ++report.sentences;
    const std::size_t cin = classifier.classify(s).id;
    inputs.insert(cin);
    example_in.try_emplace(cin, s);
    Sampler unused(0);
    const RolloutResult r = rollout(model, s, Temperature::zero(), unused, max_reply);
    if (!r.halted) {
      ++report.open_replies;
      continue;
    }
    const Sentence reply(r.tokens.begin() + static_cast<std::ptrdiff_t>(s.size()), r.tokens.end());
    const std::size_t cout = classifier.classify(reply).id;
    ++edges[{cin, cout}];
    out_of[cin].insert(cout);
    into[cout].insert(cin);
  }
  report.input_classes = inputs.size();
  report.output_classes = into.size();
  for (const auto& [key, n] : edges) report.edges.emplace_back(key.first, key.second, n);
  for (const auto& [cin, outs] : out_of) {
    if (outs.size() < 2) continue;
    ++report.multi_valued;
    if (report.witnesses.size() < kMaxWitnesses) {
      report.witnesses.push_back("class " + classifier.class_name(cin) + " replies into " +
                                 std::to_string(outs.size()) + " classes");
    }
  }
  for (const auto& [cout, ins] : into) {
    if (ins.size() < 2) continue;
    ++report.collisions;
    if (report.witnesses.size() < kMaxWitnesses) {
      std::string names;
      for (std::size_t c : ins) names += (names.empty() ? "" : ", ") + classifier.class_name(c);
      report.witnesses.push_back("classes {" + names + "} all reply into " + classifier.class_name(cout) +
                                 ", e.g. '" + a.render(example_in[*ins.begin()]) + "'");
    }
  }
  for (std::size_t c = 0; c < classifier.num_classes(); ++c) {
    if (into.count(c)) continue;
    ++report.unhit;
    if (report.witnesses.size() < kMaxWitnesses) {
      report.witnesses.push_back("class " + classifier.class_name(c) + " is never a reply class");
    }
  }
  return report;
}

}  // namespace botlab
