#include <doctest.h>

#include "botlab/controllability.hpp"
#include "botlab/error.hpp"
#include "oracles.hpp"

#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace botlab;

namespace {

AlphabetPtr synth(std::size_t k) { return std::make_shared<const Alphabet>(Alphabet::synthetic(k)); }

Sentence S(const Alphabet& a, const std::string& text) { return parse_sentence(text, a); }

Sentence last(const Sentence& w, std::size_t ell) { return Sentence(w.end() - static_cast<std::ptrdiff_t>(ell), w.end()); }

// Compressed step computed from the raw model.
Sentence raw_step(const Discriminant& m, const Sentence& w, TokenId u) {
  Sentence next(w.begin() + 2, w.end());
  next.push_back(m.deterministic_token(w));
  next.push_back(u);
  return next;
}

// Every block of length ell reachable from `start`, by plain set iteration.
std::set<Sentence> reachable_blocks(const Discriminant& m, const Sentence& start, std::size_t ell) {
  std::set<Sentence> seen = {start}, frontier = {start};
  while (!frontier.empty()) {
    std::set<Sentence> next;
    for (const auto& w : frontier) {
      for (TokenId u = 0; u < m.vocab_size(); ++u) {
        Sentence x = raw_step(m, w, u);
        if (seen.insert(x).second) next.insert(x);
      }
    }
    frontier = std::move(next);
  }
  std::set<Sentence> blocks;
  for (const auto& w : seen) blocks.insert(last(w, ell));
  return blocks;
}

}  // namespace

TEST_CASE("skeleton step is the compressed shift") {
  const auto m = random_tabular(synth(3), 4, 1, {.deterministic = true});
  const Skeleton s(m);
  CHECK(s.states() == 81);
  for (std::size_t x = 0; x < s.states(); ++x) {
    const Sentence w = s.decode(x);
    CHECK(s.encode(w) == x);
    CHECK(s.f(x) == m.deterministic_token(w));
    for (TokenId u = 0; u < 3; ++u) CHECK(s.decode(s.step(x, u)) == raw_step(m, w, u));
  }
  CHECK_THROWS_AS(Skeleton(*uniform_model(synth(8), 9)), Error);
}

TEST_CASE("surjectivity certificates") {
  SUBCASE("mod-K is surjective") {
    const auto m = make_modk(5, 6, 4, {1, 1, 1, 1, 1, 1});
    const Skeleton s(m);
    const auto cert = check_thm1(s, 4);
    CHECK(cert.verdict);
    CHECK(cert.fixings_checked == 25);
    CHECK(cert.varied_from == 1);
    CHECK(cert.varied_to == 4);
    CHECK(cert.coverage.find("exhaustive") == 0);
  }
  SUBCASE("constant map misses tokens") {
    auto a = synth(4);
    const auto m = constant_model(a, 4, 0);
    const Skeleton s(*m);
    const auto cert = check_thm1(s, 2);
    CHECK_FALSE(cert.verdict);
    REQUIRE_FALSE(cert.witnesses.empty());
    CHECK(cert.witnesses[0].missing == 1);
  }
  SUBCASE("xor of all coordinates over two tokens") {
    const FunctionModel x(
        synth(2), 5,
        [](std::span<const TokenId> w) {
          TokenId acc = 0;
          for (TokenId t : w) acc ^= t;
          Vector l = Vector::Zero(2);
          l(acc) = 1.0;
          return l;
        },
        "xor");
    const Skeleton s(x);
    for (std::size_t ell = 2; ell <= 5; ++ell) CHECK(check_thm1(s, ell).verdict);
  }
  SUBCASE("witnesses survive re-evaluation through the raw model") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto m = random_tabular(synth(3), 4, seed, {.deterministic = true, .range = 2});
      const Skeleton s(m);
      const auto cert = check_thm1(s, 2);
      for (const auto& w : cert.witnesses) {
        // Held block is the last l - 2 = 0 tokens here: nothing to hold, so
        // the missing token is missing from the whole image.
        for (const auto& head : oracle::all_sequences(3, 4)) {
          Sentence probe = head;
          for (std::size_t i = 4 - (cert.ell - 2); i < 4; ++i) probe[i] = w.window[i];
          CHECK(m.deterministic_token(probe) != w.missing);
        }
      }
      const auto cert3 = check_thm1(s, 3);
      for (const auto& w : cert3.witnesses) {
        for (const auto& head : oracle::all_sequences(3, 3)) {
          Sentence probe = head;
          probe.push_back(w.window[3]);
          CHECK(m.deterministic_token(probe) != w.missing);
        }
      }
    }
  }
  SUBCASE("sampled fixings") {
    const auto m = make_modk(5, 6, 4, {1, 1, 1, 1, 1, 1});
    const auto cert = check_thm1(Skeleton(m), 4, Fixings::sample(10, 3));
    CHECK(cert.verdict);
    CHECK(cert.fixings_checked == 10);
    CHECK(cert.coverage.find("sampled") == 0);
  }
}

TEST_CASE("bijectivity certificates") {
  const auto modk = make_modk(5, 6, 4, {1, 1, 1, 2, 1, 1});
  const auto cert = check_thm2(Skeleton(modk), 4);
  CHECK(cert.verdict);
  CHECK(cert.varied_from == 4);
  CHECK(cert.fixings_checked == 3125);

  // Pivot values 0 and 1 collide when the first coordinate is 0.
  auto a = synth(4);
  const FunctionModel collide(
      a, 4,
      [](std::span<const TokenId> w) {
        TokenId p = w[3];
        if (w[0] == 0 && p == 1) p = 0;
        Vector l = Vector::Zero(4);
        l((p + w[1]) % 4) = 1.0;
        return l;
      },
      "collide");
  const Skeleton s(collide);
  const auto bad = check_thm2(s, 2);
  CHECK_FALSE(bad.verdict);
  REQUIRE_FALSE(bad.witnesses.empty());
  for (const auto& w : bad.witnesses) {
    CHECK(w.first != w.second);
    Sentence x = w.window, y = w.window;
    x[3] = w.first;
    y[3] = w.second;
    CHECK(collide.deterministic_token(x) == w.output);
    CHECK(collide.deterministic_token(y) == w.output);
  }
  CHECK(bad.failing_fixings == 16);

  try {
    (void)check_thm2(s, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "ℓ must be ≥ 2");
  }

  std::stringstream out;
  write_certificate(out, bad, *a);
  CHECK(out.str().find(collide.hash()) != std::string::npos);
}

TEST_CASE("synthesis reaches every target of the worked case") {
  const auto m = make_modk(5, 6, 4, {1, 1, 1, 1, 1, 1});
  const Skeleton s(m);
  REQUIRE(check_thm2(s, 4).verdict);
  const Sentence start = {3, 1, 4, 1, 0, 2};
  const BfsTree tree = bfs_tree(s, s.encode(start));
  const auto dist = block_distances(s, tree, 4);
  std::map<std::size_t, std::size_t> lengths;
  for (const auto& target : oracle::all_sequences(5, 4)) {
    const ControlPlan plan = synthesize(s, start, target);
    CHECK(plan.method == ControlPlan::Method::kPhiU);
    // Independent simulation through the raw model.
    Sentence w = start;
    for (TokenId u : plan.inputs) w = raw_step(m, w, u);
    CHECK(last(w, 4) == target);
    CHECK(plan.trajectory.back() == w);
    ++lengths[plan.length()];
    const auto bfs = bfs_oracle(s, start, target, plan.length());
    REQUIRE(bfs.has_value());
    CHECK(bfs->length() <= plan.length());
    CHECK(static_cast<int>(bfs->length()) == dist[s.encode_block(target)]);
  }
  // Two settle-free steps (one free input, one pivot) plus the two typed tokens.
  CHECK(lengths.begin()->first >= 2);
  for (const auto& [len, n] : lengths) CHECK(len <= 4 + 4);
}

TEST_CASE("synthesis on the natural continuation") {
  const auto m = make_modk(5, 6, 4, {1, 2, 1, 3, 4, 1});
  const Skeleton s(m);
  const Sentence start = {0, 1, 2, 3, 4, 0};
  const std::vector<TokenId> natural = {2, 2, 2, 2};
  const auto traj = simulate(s, start, natural);
  const Sentence target = last(traj.back(), 4);
  const ControlPlan plan = synthesize(s, start, target);
  CHECK(last(plan.trajectory.back(), 4) == target);
  // The typed tokens of the plan are the target's user positions.
  REQUIRE(plan.inputs.size() >= 2);
  CHECK(plan.inputs[plan.inputs.size() - 1] == target[3]);
  CHECK(plan.inputs[plan.inputs.size() - 2] == target[1]);
  CHECK(target[1] == 2);
  CHECK(target[3] == 2);

  CHECK(plan_success_rate(m, plan, Temperature::zero(), 10, 1) == 1.0);
  const Transcript t = plan_transcript(plan, s);
  CHECK(replay(m, t).window() == plan.trajectory.back());
  std::stringstream out;
  write_plan(out, plan, m.alphabet());
  CHECK(out.str().find(m.hash()) != std::string::npos);
}

TEST_CASE("synthesis fails loudly without the hypothesis") {
  auto a = synth(4);
  const auto m = constant_model(a, 4, 1);
  const Skeleton s(*m);
  try {
    (void)synthesize(s, Sentence(4, 0), {2, 3});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kHypothesisViolated);
    CHECK(std::string(e.what()).find("bijectivity hypothesis violated at runtime") != std::string::npos);
  }
}

TEST_CASE("breadth-first oracle") {
  auto a = synth(4);
  const auto m = constant_model(a, 4, 1);
  const Skeleton s(*m);
  // The bot-written slot of the last pair always holds token 1.
  CHECK_FALSE(bfs_oracle(s, Sentence(4, 0), {2, 0}, 10).has_value());
  const auto ok = bfs_oracle(s, Sentence(4, 0), {1, 3}, 10);
  REQUIRE(ok.has_value());
  CHECK(ok->length() == 1);
  CHECK(ok->inputs == std::vector<TokenId>{3});

  const Sentence start = {0, 1, 2, 3};
  const auto none = bfs_oracle(s, start, {2, 3}, 0);
  REQUIRE(none.has_value());
  CHECK(none->length() == 0);
  CHECK_FALSE(bfs_oracle(s, start, {1, 2}, 0).has_value());

  // Reachable blocks agree with plain set iteration.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto t = random_tabular(synth(3), 4, seed, {.deterministic = true, .range = 2});
    const Skeleton sk(t);
    const Sentence st = {0, 1, 2, 0};
    const auto blocks = reachable_blocks(t, st, 2);
    const auto dist = block_distances(sk, bfs_tree(sk, sk.encode(st)), 2);
    for (const auto& b : oracle::all_sequences(3, 2)) {
      CHECK((dist[sk.encode_block(b)] >= 0) == (blocks.count(b) == 1));
    }
  }
}

TEST_CASE("surjectivity is necessary for full controllability") {
  std::mt19937_64 rng(4);
  std::size_t controllable = 0, failing = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_tabular(synth(3), 4, rng(), {.deterministic = true, .range = std::size_t{2} + static_cast<std::size_t>(trial % 2)});
    const Skeleton s(m);
    const bool full = fully_controllable(s, 2);
    const auto cert = check_thm1(s, 2);
    if (full) {
      ++controllable;
      CHECK(cert.verdict);
    }
    if (!cert.verdict) {
      ++failing;
      // A missing bot token makes every block with it in the bot slot unreachable.
      const TokenId y = cert.witnesses[0].missing;
      // Start from a window whose own bot slot differs from y.
      const Sentence start = {0, 0, (y + 1) % 3, 0};
      CHECK_FALSE(bfs_oracle(s, start, {y, 0}, s.states()).has_value());
    }
  }
  CHECK(controllable > 0);
  CHECK(failing > 0);
}

TEST_CASE("bijectivity suffices at small sizes") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<std::uint64_t> w(6);
    for (auto& x : w) x = rng() % 5;
    w[3] = 1 + rng() % 4;
    const auto m = make_modk(5, 6, 4, w);
    const Skeleton s(m);
    REQUIRE(check_thm2(s, 4).verdict);
    Sentence start(6);
    for (auto& t : start) t = static_cast<TokenId>(rng() % 5);
    for (const auto& target : oracle::all_sequences(5, 4)) {
      const auto plan = synthesize(s, start, target);
      CHECK(last(simulate(s, start, plan.inputs).back(), 4) == target);
    }
  }
}

TEST_CASE("odd block length is cross-checked against search") {
  const auto m = make_modk(5, 6, 3, {1, 1, 1, 1, 1, 1});
  const Skeleton s(m);
  REQUIRE(check_thm2(s, 3).verdict);
  const Sentence start = {1, 2, 3, 4, 0, 1};
  std::size_t planned = 0;
  for (const auto& target : oracle::all_sequences(5, 3)) {
    const auto bfs = bfs_oracle(s, start, target, 12);
    try {
      const auto plan = synthesize(s, start, target);
      ++planned;
      CHECK(last(plan.trajectory.back(), 3) == target);
      REQUIRE(bfs.has_value());
      CHECK(bfs->length() <= plan.length());
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kValidation);
    }
  }
  CHECK(planned == 125);
}

TEST_CASE("class map probe") {
  auto a = std::make_shared<const Alphabet>(
      std::vector<std::string>{"a", "b", "c", "EOS", "PAD"}, 3, 4);
  const std::size_t c = 8;
  // Echo: after «s EOS r», emit the next token of s, then EOS.
  const auto echo = std::make_shared<FunctionModel>(
      a, c,
      [](std::span<const TokenId> w) {
        std::size_t i = 0;
        while (i < w.size() && w[i] == 4) ++i;
        std::size_t eos = i;
        while (eos < w.size() && w[eos] != 3) ++eos;
        Vector l = Vector::Zero(5);
        if (eos == w.size()) {
          l(3) = 5.0;
          return l;
        }
        const std::size_t src = eos - i, produced = w.size() - eos - 1;
        l(produced < src ? w[i + produced] : 3) = 5.0;
        return l;
      },
      "echo");
  const auto first_token = MeaningClassifier::argmax(echo, {0, 1, 2});
  const Corpus base("p", a, {S(*a, "a b EOS"), S(*a, "b c EOS"), S(*a, "c a EOS")});
  const auto ms = build_sigma(base, 4);

  const auto id = postulate_probe(*echo, first_token, ms);
  CHECK(id.sentences == ms.size());
  CHECK(id.open_replies == 0);
  CHECK(id.injective());
  CHECK(id.surjective());
  for (const auto& [in, out, n] : id.edges) CHECK(in == out);

  const auto reply_a = std::make_shared<FunctionModel>(
      a, c,
      [](std::span<const TokenId> w) {
        Vector l = Vector::Zero(5);
        l(w.back() == 3 ? 0 : 3) = 5.0;
        return l;
      },
      "reply-a");
  const auto flat = postulate_probe(*reply_a, first_token, ms);
  CHECK(flat.output_classes == 1);
  CHECK(flat.collisions == 1);
  CHECK(flat.unhit == 2);
  CHECK_FALSE(flat.injective());
  CHECK_FALSE(flat.witnesses.empty());

  // n-gram replies under a parity head: every sentence is accounted for.
  auto toy = std::make_shared<const Alphabet>(load_alphabet(oracle::data("toy.alphabet")));
  const Corpus corpus = load_corpus(oracle::data("toy.corpus"), toy);
  std::vector<std::pair<Sentence, TokenId>> labeled;
  for (const auto& s : corpus.sentences) {
    const auto na = std::count(s.begin(), s.end(), *toy->find("a"));
    labeled.emplace_back(s, *toy->find(na % 2 ? "odd" : "even"));
  }
  const auto ngram = train_ngram(corpus, 1, 0.0, 4);
  const DiscriminantPtr head = std::make_shared<MeaningHead>(train_meaning_head(ngram, labeled));
  const auto parity = MeaningClassifier::argmax(head);
  const auto tms = build_sigma(corpus, 4);
  const auto r = postulate_probe(ngram, parity, tms, 4);
  std::size_t counted = r.open_replies;
  for (const auto& [in, out, n] : r.edges) counted += n;
  CHECK(counted == tms.size());
  CHECK(r.input_classes <= 2);
}
