#include <doctest.h>

#include "botlab/error.hpp"
#include "botlab/reachability.hpp"
#include "oracles.hpp"

#include <cmath>
#include <set>
#include <sstream>

using namespace botlab;

namespace {

AlphabetPtr synth(std::size_t k) { return std::make_shared<const Alphabet>(Alphabet::synthetic(k)); }

Sentence S(const Alphabet& a, const std::string& text) { return parse_sentence(text, a); }

std::set<Sentence> sentences(const ReachReport& r) {
  std::set<Sentence> out;
  for (const auto& x : r.reached) out.insert(x.sentence);
  return out;
}

bool subset(const std::set<Sentence>& a, const std::set<Sentence>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST_CASE("deterministic chains reach one sentence") {
  auto a = synth(4);
  // t0 -> t1 -> EOS.
  const FunctionModel chain(
      a, 3,
      [](std::span<const TokenId> w) {
        Vector l = Vector::Zero(4);
        l(w.back() == 0 ? 1 : 2) = 5.0;
        return l;
      },
      "chain");
  const auto r = reach_exact(chain, S(*a, "t0"), 4, 0.0, {.temperature = Temperature::zero()});
  REQUIRE(r.reached.size() == 1);
  CHECK(r.reached[0].sentence == S(*a, "t0 t1 EOS"));
  CHECK(r.reached[0].probability == 1.0);
  CHECK(r.continuation_mass == 0.0);
}

TEST_CASE("uniform tree in closed form") {
  auto a = synth(4);
  const auto u = uniform_model(a, 3);
  const auto r = reach_exact(*u, S(*a, "t0"), 2, 0.0);
  // One step: EOS with 1/4. Two steps: any of three non-EOS tokens, then EOS.
  REQUIRE(r.reached.size() == 4);
  CHECK(r.find(S(*a, "t0 EOS"))->probability == 0.25);
  for (const char* s : {"t0 t0 EOS", "t0 t1 EOS", "t0 PAD EOS"}) {
    REQUIRE(r.find(S(*a, s)) != nullptr);
    CHECK(r.find(S(*a, s))->probability == 0.0625);
  }
  CHECK(r.continuation_mass == 9.0 / 16);
  CHECK(reach_exact(*u, S(*a, "t0"), 2, 1.0).reached.empty());

  // A sure sentence survives theta = 1.
  CHECK(reach_exact(*constant_model(a, 3, a->eos()), S(*a, "t1"), 3, 1.0, {.temperature = Temperature::zero()})
            .reached.size() == 1);
}

TEST_CASE("exact mass accounting on random models") {
  auto a = synth(4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_tabular(a, 4, seed, {.support = seed % 2 ? 0.6 : 1.0});
    for (std::size_t h = 1; h <= 4; ++h) {
      const auto r = reach_exact(m, S(*a, "t1"), h, 0.0);
      CHECK(std::abs(r.reported_mass() + r.continuation_mass - 1.0) < 1e-12);
      CHECK(r.pruned_mass == 0.0);
      for (const auto& x : r.reached) {
        CHECK(is_complete(x.sentence, a->eos()));
        // Path probability recomputed from the table.
        long double p = 1;
        for (std::size_t t = 1; t < x.sentence.size(); ++t) {
          const Sentence w = left_pad(std::span(x.sentence).first(t), 4, a->pad());
          std::vector<double> l(4);
          for (int j = 0; j < 4; ++j) l[j] = m.table()(static_cast<Eigen::Index>(window_index(w, 4)), j);
          p *= oracle::softmax(l, 1.0)[x.sentence[t]];
        }
        CHECK(x.probability == doctest::Approx(static_cast<double>(p)).epsilon(1e-12));
      }
      if (h > 1) CHECK(subset(sentences(reach_exact(m, S(*a, "t1"), h - 1, 0.0)), sentences(r)));
    }
    std::set<Sentence> last = sentences(reach_exact(m, S(*a, "t1"), 4, 0.0));
    for (double theta : {1e-3, 1e-2, 0.05, 0.1, 0.3}) {
      const auto r = reach_exact(m, S(*a, "t1"), 4, theta);
      const auto now = sentences(r);
      CHECK(subset(now, last));
      for (const auto& x : r.reached) CHECK(x.probability >= theta);
      CHECK(std::abs(r.reported_mass() + r.unreported_mass + r.pruned_mass + r.continuation_mass - 1.0) < 1e-12);
      last = now;
    }
  }
  CHECK_THROWS_AS(reach_exact(*uniform_model(a, 4), S(*a, "t0"), 20, 0.0), Error);
  CHECK_THROWS_AS(reach_exact(*uniform_model(a, 4), Sentence{}, 2, 0.0), Error);
}

TEST_CASE("Monte Carlo agrees with exact enumeration") {
  auto a = synth(4);
  const auto m = random_tabular(a, 4, 17);
  const auto exact = reach_exact(m, S(*a, "t0"), 3, 0.0);
  std::size_t inside = 0, total = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    const std::size_t n = 2000;
    const auto mc = reach_mc(m, S(*a, "t0"), 3, 0.0, n, 1000 + rep);
    for (const auto& x : exact.reached) {
      const ReachedSentence* hit = mc.find(x.sentence);
      const Interval ci = hit ? hit->ci : wilson_interval(0, n);
      inside += ci.contains(x.probability);
      ++total;
    }
  }
  CHECK(static_cast<double>(inside) / static_cast<double>(total) >= 0.93);

  const auto one = reach_mc(*constant_model(a, 4, a->eos()), S(*a, "t0"), 3, 0.0, 1, 5);
  REQUIRE(one.reached.size() == 1);
  CHECK(one.reached[0].count == 1);
  CHECK(one.reached[0].probability == 1.0);

  const auto r1 = reach_mc(m, S(*a, "t0"), 3, 0.0, 500, 9);
  const auto r2 = reach_mc(m, S(*a, "t0"), 3, 0.0, 500, 9);
  std::stringstream s1, s2;
  write_report(s1, r1, *a);
  write_report(s2, r2, *a);
  CHECK(s1.str() == s2.str());
  CHECK(s1.str().find("# method monte_carlo") == 0);
  CHECK_THROWS_AS(reach_mc(m, S(*a, "t0"), 3, 0.0, 0, 9), Error);
}

TEST_CASE("reachability from prompts") {
  auto a = synth(5);
  const auto modk = make_modk(5, 4, 2, {1, 2, 3, 1});
  CHECK_THROWS_AS(prompt_reach(modk, Sentence{}, 3, 0.0), Error);
  CHECK_THROWS_AS(prompt_reach(modk, S(*a, "t0 t1 t2 t0 t1"), 3, 0.0), Error);

  const ReachOptions zero{.temperature = Temperature::zero()};
  const Sentence prompt = S(*a, "t0 t1");
  // Deterministic continuation by hand: next = (x1 + 2 x2 + 3 x3 + x4) mod 5.
  Sentence path = prompt;
  Sentence w = left_pad(prompt, 4, a->pad());
  std::optional<Sentence> halted;
  for (std::size_t i = 0; i < 5; ++i) {
    const TokenId next = static_cast<TokenId>((w[0] + 2 * w[1] + 3 * w[2] + w[3]) % 5);
    path.push_back(next);
    w.erase(w.begin());
    w.push_back(next);
    if (next == a->eos()) {
      halted = path;
      break;
    }
  }
  const auto r = prompt_reach(modk, prompt, 5, 0.0, zero);
  if (halted) {
    REQUIRE(r.reached.size() == 1);
    CHECK(r.reached[0].sentence == *halted);
    CHECK(r.continuation_mass == 0.0);
  } else {
    CHECK(r.reached.empty());
    CHECK(r.continuation_mass == 1.0);
  }

  // Extending a prompt along its own deterministic path keeps the reached set.
  const auto tab = random_tabular(synth(4), 4, 3, {.deterministic = true});
  auto a4 = tab.alphabet_ptr();
  for (TokenId x = 0; x < 2; ++x) {
    Sentence p = {x};
    for (int grow = 0; grow < 2; ++grow) {
      const auto shorter = prompt_reach(tab, p, 5, 0.0, zero);
      const TokenId next = tab.deterministic_token(left_pad(p, 4, a4->pad()));
      if (next == a4->eos()) break;
      p.push_back(next);
      const auto longer = prompt_reach(tab, p, 4, 0.0, zero);
      CHECK(subset(sentences(longer), sentences(shorter)));
    }
  }
}
