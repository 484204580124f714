#include <doctest.h>

#include "botlab/dynamics.hpp"
#include "botlab/error.hpp"
#include "oracles.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

using namespace botlab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

AlphabetPtr synth(std::size_t k) { return std::make_shared<const Alphabet>(Alphabet::synthetic(k)); }

AlphabetPtr toy() { return std::make_shared<const Alphabet>(load_alphabet(oracle::data("toy.alphabet"))); }

Sentence S(const Alphabet& a, const std::string& text) { return parse_sentence(text, a); }

std::shared_ptr<FunctionModel> fixed_logits(const AlphabetPtr& a, std::size_t c, std::vector<double> l) {
  return std::make_shared<FunctionModel>(
      a, c, [l](std::span<const TokenId>) { return Vector(Eigen::Map<const Vector>(l.data(), l.size())); }, "fixed");
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("temperature softmax") {
  auto a = synth(4);
  const Sentence w(3, a->pad());
  {
    const Vector p = next_token_distribution(*fixed_logits(a, 3, {0, 0, 0, 0}), w, Temperature::finite(1));
    for (int i = 0; i < 4; ++i) CHECK(p(i) == 0.25);
  }
  {
    const Vector p = next_token_distribution(*fixed_logits(a, 3, {1, 0, 0, 0}), w, Temperature::zero());
    CHECK(to_std(p) == std::vector<double>{1, 0, 0, 0});
  }
  {
    const std::vector<double> l = {2, 1, 0, 0};
    const Vector p = next_token_distribution(*fixed_logits(a, 3, l), w, Temperature::finite(1));
    const auto ref = oracle::softmax(l, 1.0);
    for (int i = 0; i < 4; ++i) CHECK(p(i) == doctest::Approx(ref[i]).epsilon(1e-14));
    CHECK(p(0) == doctest::Approx(0.6103).epsilon(5e-5));
    CHECK(p(1) == doctest::Approx(0.2245).epsilon(5e-4));
    CHECK(p(2) == doctest::Approx(0.0826).epsilon(5e-4));
  }
  {
    // Ties at T = 0 go to the lowest id; the INF limit skips -inf tokens.
    const auto m = fixed_logits(a, 3, {0, 3, 3, -kInf});
    CHECK(to_std(next_token_distribution(*m, w, Temperature::zero())) == std::vector<double>{0, 1, 0, 0});
    const Vector u = next_token_distribution(*m, w, Temperature::infinite());
    CHECK(u(0) == doctest::Approx(1.0 / 3));
    CHECK(u(3) == 0.0);
  }
  CHECK(to_std(next_token_distribution(*fixed_logits(a, 3, {5, 1, 2, 3}), w, Temperature::infinite())) ==
        std::vector<double>{0.25, 0.25, 0.25, 0.25});

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& bad : std::vector<std::vector<double>>{{nan, 0, 0, 0}, {kInf, 0, 0, 0}, {-kInf, -kInf, -kInf, -kInf}}) {
    try {
      (void)next_token_distribution(*fixed_logits(a, 3, bad), w, Temperature::finite(1));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("invalid discriminant output") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(Temperature::finite(0), Error);
  CHECK_THROWS_AS(Temperature::finite(-1), Error);
  CHECK(Temperature::parse("zero") == Temperature::zero());
  CHECK(Temperature::parse("inf") == Temperature::infinite());
  CHECK(Temperature::parse("0.5") == Temperature::finite(0.5));
  CHECK_THROWS_AS(Temperature::parse("warm"), Error);
}

TEST_CASE("normalization, monotonicity and the two limits") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 15;
    auto a = synth(k);
    std::vector<double> l(k);
    for (auto& x : l) x = n01(rng);
    const auto m = fixed_logits(a, 2, l);
    const Sentence w(2, a->pad());
    const auto top = static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin());

    double last = 1.0;
    for (double t : {0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0}) {
      const Vector p = next_token_distribution(*m, w, Temperature::finite(t));
      CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
      CHECK(p(top) <= last);
      last = p(top);
    }

    const Vector cold = next_token_distribution(*m, w, Temperature::finite(1e-6));
    const Vector one_hot = next_token_distribution(*m, w, Temperature::zero());
    CHECK(total_variation(cold, one_hot) < 1e-9);

    // The hot limit agrees with the long-double reference; its distance to
    // uniform is a property of the logits, not of rounding.
    const Vector hot = next_token_distribution(*m, w, Temperature::finite(1e6));
    const auto ref = oracle::softmax(l, 1e6);
    for (std::size_t i = 0; i < k; ++i) CHECK(hot(i) == doctest::Approx(ref[i]).epsilon(1e-14));
  }
}

TEST_CASE("step shifts the sampled token in") {
  auto a = toy();
  const TokenId b = *a->find("b");
  const auto m = constant_model(a, 3, b);
  Sampler s(1);
  const Context ctx(S(*a, "PAD PAD a"), 1);
  const auto r = step(*m, ctx, Temperature::zero(), s);
  CHECK(r.token == b);
  CHECK(r.context.window() == S(*a, "PAD a b"));
  CHECK(r.context.clock() == 2);

  // A zero-temperature tabular model always emits the argmax.
  auto k4 = synth(4);
  const auto tab = random_tabular(k4, 3, 9);
  const Sentence w = S(*k4, "PAD PAD t0");
  const TokenId want = tab.deterministic_token(w);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Sampler si(seed);
    CHECK(step(tab, Context(w), Temperature::zero(), si).token == want);
  }

  // Same seed, same sequence.
  auto run = [&](std::uint64_t seed) {
    Sampler sm(seed);
    return rollout(tab, S(*k4, "t0"), Temperature::finite(1), sm, 50).tokens;
  };
  CHECK(run(42) == run(42));

  CHECK_THROWS_AS(Context::from_prompt(S(*a, "a b c d"), 3, a->pad()), Error);
  CHECK(Context::from_prompt(S(*a, "a"), 3, a->pad()).window() == S(*a, "PAD PAD a"));
}

TEST_CASE("rollouts") {
  auto a = toy();
  Sampler s(5);
  {
    const auto r = rollout(*constant_model(a, 4, a->eos()), S(*a, "a"), Temperature::finite(1), s, 10);
    CHECK(r.halted);
    CHECK(r.window == S(*a, "PAD PAD a EOS"));
    CHECK(r.tokens == S(*a, "a EOS"));
  }
  {
    std::vector<double> l(a->size(), 0.0);
    l[a->eos()] = -kInf;
    const auto r = rollout(*fixed_logits(a, 4, l), S(*a, "a"), Temperature::finite(1), s, 10);
    CHECK_FALSE(r.halted);
    CHECK(r.steps == 10);
    CHECK(r.tokens.size() == 11);
  }
  CHECK_THROWS_AS(rollout(*constant_model(a, 4, 0), Sentence{}, Temperature::finite(1), s, 10), Error);

  // Uniform law over four tokens: P(EOS within 10) = 1 - (3/4)^10.
  auto k4 = synth(4);
  const auto u = uniform_model(k4, 3);
  const double expected = 1 - std::pow(0.75, 10);
  CHECK(expected == doctest::Approx(0.9437).epsilon(1e-4));
  Sampler mc(2024);
  const std::size_t n = 100000;
  std::size_t halted = 0;
  for (std::size_t i = 0; i < n; ++i) halted += rollout(*u, S(*k4, "t0"), Temperature::finite(1), mc, 10).halted;
  CHECK(wilson_interval(halted, n, 4.0).contains(expected));
}

TEST_CASE("sentence probability factorizes") {
  auto k4 = synth(4);
  const auto u = uniform_model(k4, 3);
  CHECK(sentence_probability(*u, S(*k4, "t0 EOS"), Temperature::finite(1), FirstTokenPrior::uniform_all(*k4)) ==
        0.0625);
  CHECK_THROWS_AS(sentence_probability(*u, S(*k4, "t0 t1"), Temperature::finite(1), FirstTokenPrior::uniform_all(*k4)),
                  Error);

  std::vector<double> l = {0, 0, 0, 0};
  l[1] = -kInf;
  CHECK(sentence_probability(*fixed_logits(k4, 3, l), S(*k4, "t0 t1 EOS"), Temperature::finite(1),
                             FirstTokenPrior::uniform_words(*k4)) == 0.0);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = random_tabular(k4, 4, seed);
    const auto prior = FirstTokenPrior::uniform_words(*k4);
    // Conditional of `next` after `prefix`, straight from the table.
    auto cond = [&](const Sentence& prefix, TokenId next) {
      Sentence w(4, k4->pad());
      std::copy(prefix.end() - std::min<std::size_t>(prefix.size(), 4), prefix.end(), w.end() - std::min<std::size_t>(prefix.size(), 4));
      std::size_t row = 0;
      for (TokenId x : w) row = row * 4 + x;
      std::vector<double> logits(4);
      for (int j = 0; j < 4; ++j) logits[j] = m.table()(row, j);
      return oracle::softmax(logits, 1.0)[next];
    };
    auto path = [&](const Sentence& s) {
      long double p = prior(s[0]);
      for (std::size_t t = 1; t < s.size(); ++t) p *= cond(Sentence(s.begin(), s.begin() + t), s[t]);
      return static_cast<double>(p);
    };
    long double total = 0;
    for (std::size_t len = 2; len <= 4; ++len) {
      for (const auto& s : oracle::all_sequences(4, len)) {
        if (!is_complete(s, k4->eos())) continue;
        const double p = sentence_probability(m, s, Temperature::finite(1), prior);
        CHECK(p == doctest::Approx(path(s)).epsilon(1e-13));
        total += p;
      }
    }
    // Paths of four tokens with no EOS are still running.
    for (const auto& s : oracle::all_sequences(4, 4)) {
      if (std::find(s.begin(), s.end(), k4->eos()) == s.end()) total += path(s);
    }
    CHECK(std::abs(static_cast<double>(total) - 1.0) < 1e-12);
  }
}

TEST_CASE("compressed conversation step") {
  auto a = toy();
  const auto m = constant_model(a, 4, *a->find("e"));
  Sampler s(0);
  const auto r = conversation_step(*m, Context(S(*a, "a b c d")), *a->find("f"), Temperature::zero(), s);
  CHECK(r.context.window() == S(*a, "c d e f"));
  CHECK(r.bot == *a->find("e"));
  const auto silent = conversation_step(*m, r.context, a->pad(), Temperature::zero(), s);
  CHECK(silent.context.window() == S(*a, "e f e PAD"));
  CHECK_THROWS_AS(conversation_step(*m, r.context, 99, Temperature::zero(), s), Error);
}

TEST_CASE("transcripts replay bit-exactly") {
  auto a = toy();
  const Corpus c = load_corpus(oracle::data("toy.corpus"), a);
  const DiscriminantPtr m = std::make_shared<NGramModel>(train_ngram(c, 1, 0.1, 4));
  Conversation conv(m, Context::empty(4, a->pad()), Temperature::finite(1.0), 77);
  const TokenId h = *a->find("h");
  auto deny_h = [&](std::span<const TokenId> w) { return w.back() == h; };
  for (int k = 0; k < 12; ++k) {
    conv.user_turn(static_cast<TokenId>(k % 8));
    if (k % 4 == 3) conv.silent_turn();
    const Sentence v = k % 3 == 0 ? S(*a, "a") : Sentence{};
    conv.bot_turn(v, deny_h);
  }
  const Transcript& t = conv.transcript();
  CHECK(t.contexts(a->pad()).back() == conv.context().window());

  std::stringstream buf;
  write_transcript(buf, t, *a);
  const Transcript back = read_transcript(buf, *a);
  CHECK(back == t);
  const Context final = replay(*m, back);
  CHECK(final.window() == conv.context().window());

  // A second conversation with the same seed and inputs is identical.
  Conversation again(m, Context::empty(4, a->pad()), Temperature::finite(1.0), 77);
  for (int k = 0; k < 12; ++k) {
    again.user_turn(static_cast<TokenId>(k % 8));
    if (k % 4 == 3) again.silent_turn();
    const Sentence v = k % 3 == 0 ? S(*a, "a") : Sentence{};
    again.bot_turn(v, deny_h);
  }
  CHECK(again.transcript() == t);

  Transcript tampered = t;
  for (auto& turn : tampered.turns) {
    if (turn.speaker == Speaker::kBot) {
      turn.token = turn.token == 0 ? 1 : 0;
      break;
    }
  }
  CHECK_THROWS_AS(replay(*m, tampered), Error);

  std::stringstream garbage("not a transcript\n");
  CHECK_THROWS_AS(read_transcript(garbage, *a), Error);
}

TEST_CASE("attention sensitivity") {
  auto k5 = synth(5);
  // Logits depend on every position except the second.
  const FunctionModel ignores2(
      k5, 4,
      [](std::span<const TokenId> w) {
        Vector l = Vector::Zero(5);
        l(w[0]) += 1.0;
        l(w[2]) += 0.5;
        l(w[3]) += 2.0;
        return l;
      },
      "ignores-second");
  const auto modk = make_modk(5, 6, 4, {1, 1, 1, 1, 1, 1});
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Sentence w(4), x(6);
    for (auto& t : w) t = static_cast<TokenId>(rng() % 5);
    for (auto& t : x) t = static_cast<TokenId>(rng() % 5);
    CHECK(attention_sensitivity(ignores2, w, 2) == 0.0);
    CHECK(attention_sensitivity(ignores2, w, 1) > 0.0);
    CHECK(attention_sensitivity(ignores2, w, 4) > 0.0);
    for (std::size_t i = 1; i <= 6; ++i) {
      // Substituting any coordinate moves the one-hot output elsewhere.
      const double s = attention_sensitivity(modk, x, i);
      CHECK(s > 0.0);
      double worst = 0;
      Sentence probe = x;
      const auto base = to_std(next_token_distribution(modk, x, Temperature::finite(1)));
      for (TokenId v = 0; v < 5; ++v) {
        probe[i - 1] = v;
        const auto q = to_std(next_token_distribution(modk, probe, Temperature::finite(1)));
        double tv = 0;
        for (int j = 0; j < 5; ++j) tv += std::abs(base[j] - q[j]) / 2;
        worst = std::max(worst, tv);
      }
      CHECK(s == doctest::Approx(worst).epsilon(1e-14));
    }
  }
  CHECK_FALSE(is_attentive(0.3, 0.5));
  CHECK(is_attentive(0.6, 0.5));
  CHECK_FALSE(is_attentive(0.0, 0.0));
  CHECK_THROWS_AS(attention_sensitivity(ignores2, Sentence(4, 0), 0), Error);
  CHECK_THROWS_AS(attention_sensitivity(ignores2, Sentence(4, 0), 5), Error);
}
