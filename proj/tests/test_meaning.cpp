#include <doctest.h>

#include "botlab/error.hpp"
#include "botlab/meaning.hpp"
#include "oracles.hpp"

#include <map>
#include <random>
#include <set>

using namespace botlab;

namespace {

AlphabetPtr toy() { return std::make_shared<const Alphabet>(load_alphabet(oracle::data("toy.alphabet"))); }

Sentence S(const Alphabet& a, const std::string& text) { return parse_sentence(text, a); }

std::size_t count_a(const Alphabet& a, const Sentence& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), *a.find("a")));
}

struct ParityFixture {
  AlphabetPtr a = toy();
  Corpus corpus = load_corpus(oracle::data("toy.corpus"), a);
  std::vector<std::pair<Sentence, TokenId>> labeled;
  DiscriminantPtr head;

  ParityFixture() {
    std::vector<Sentence> extra = {S(*a, "b a EOS"), S(*a, "a a EOS"), S(*a, "b b EOS")};
    std::vector<Sentence> all = corpus.sentences;
    all.insert(all.end(), extra.begin(), extra.end());
    for (const auto& s : all) labeled.emplace_back(s, label_of(s));
    head = std::make_shared<MeaningHead>(train_meaning_head(train_ngram(corpus, 1, 0.0, 4), labeled));
  }

  TokenId label_of(const Sentence& s) const { return *a->find(count_a(*a, s) % 2 == 0 ? "even" : "odd"); }
};

// Sentence probabilities of a bigram model straight from corpus counts.
std::map<Sentence, double> bigram_high_probability(const Corpus& c, double theta, std::size_t max_len) {
  const Alphabet& a = *c.alphabet;
  std::map<std::pair<TokenId, TokenId>, double> pair;
  std::map<TokenId, double> from;
  for (const auto& s : c.sentences) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      pair[{s[t - 1], s[t]}] += 1;
      from[s[t - 1]] += 1;
    }
  }
  const double words = static_cast<double>(a.words().size());
  std::map<Sentence, double> out;
  for (std::size_t len = 2; len <= max_len; ++len) {
    for (const auto& s : oracle::all_sequences(a.size(), len)) {
      if (!is_complete(s, a.eos()) || !a.is_word(s[0])) continue;
      double p = 1.0 / words;
      for (std::size_t t = 1; t < s.size() && p > 0; ++t) {
        p = from.count(s[t - 1]) ? p * pair[{s[t - 1], s[t]}] / from[s[t - 1]] : p / static_cast<double>(a.size());
      }
      if (p >= theta) out[s] = p;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("argmax classes under a parity head") {
  ParityFixture f;
  const auto mc = MeaningClassifier::argmax(f.head);
  CHECK(mc.num_classes() == 2);
  for (const auto& [s, label] : f.labeled) {
    const MeaningClass c = mc.classify(s);
    CHECK(c.name == f.a->symbol(label));
  }
  CHECK(mc.classify(S(*f.a, "a a EOS")).name == "even");
  CHECK(equivalent(mc, S(*f.a, "a b EOS"), S(*f.a, "b a EOS")));
  CHECK_FALSE(equivalent(mc, S(*f.a, "a b EOS"), S(*f.a, "b c EOS")));
  CHECK(equivalent(mc, S(*f.a, "c d EOS"), S(*f.a, "c d EOS")));
  // Re-padding does not change the class.
  CHECK(mc.classify(S(*f.a, "PAD PAD a b EOS")) == mc.classify(S(*f.a, "a b EOS")));
  try {
    (void)mc.classify(S(*f.a, "a b"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()) == "meaning undefined for incomplete sentences");
  }
  CHECK(mc.describe().find("argmax") == 0);
}

TEST_CASE("equivalence is reflexive, symmetric and transitive") {
  ParityFixture f;
  const auto mc = MeaningClassifier::argmax(f.head);
  std::vector<Sentence> pool;
  for (const auto& [s, label] : f.labeled) pool.push_back(s);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 500; ++i) {
    const Sentence& x = pool[rng() % pool.size()];
    const Sentence& y = pool[rng() % pool.size()];
    const Sentence& z = pool[rng() % pool.size()];
    CHECK(equivalent(mc, x, x));
    CHECK(equivalent(mc, x, y) == equivalent(mc, y, x));
    if (equivalent(mc, x, y) && equivalent(mc, y, z)) CHECK(equivalent(mc, x, z));
  }
}

TEST_CASE("quotient cells are the fibers of classify") {
  ParityFixture f;
  const auto mc = MeaningClassifier::argmax(f.head);
  std::vector<Sentence> ten;
  for (std::size_t i = 0; i < 10; ++i) ten.push_back(f.labeled[i].first);
  std::size_t even = 0;
  for (const auto& s : ten) even += count_a(*f.a, s) % 2 == 0;
  const auto cells = quotient(mc, ten);
  REQUIRE(cells.size() == 2);
  std::size_t covered = 0;
  for (const auto& cell : cells) {
    covered += cell.members.size();
    CHECK(cell.members.size() == (cell.cls.name == "even" ? even : 10 - even));
    for (const auto& s : cell.members) CHECK(mc.classify(s) == cell.cls);
  }
  CHECK(covered == 10);
  CHECK(quotient(mc, {ten[0]}).size() == 1);
  CHECK(quotient(mc, {}).empty());
}

TEST_CASE("threshold and prototype classifiers") {
  ParityFixture f;
  const auto none = MeaningClassifier::threshold(f.head, 1.1);
  CHECK(none.classify_set(S(*f.a, "a b EOS")).empty());
  CHECK_THROWS_AS((void)none.classify(S(*f.a, "a b EOS")), Error);
  const auto all = MeaningClassifier::threshold(f.head, 0.0);
  CHECK(all.classify_set(S(*f.a, "a b EOS")).size() == 2);

  const auto k4 = std::make_shared<const Alphabet>(Alphabet::synthetic(4));
  const Corpus c("p", k4, {S(*k4, "t0 EOS"), S(*k4, "t1 EOS"), S(*k4, "t0 t1 EOS")});
  // After EOS the n-gram law is the empirical next-token law from (EOS) keys,
  // which no training window has, so every complete sentence looks alike.
  const DiscriminantPtr m = std::make_shared<NGramModel>(train_ngram(c, 2, 0.0, 3));
  const auto protos = MeaningClassifier::prototypes(m, {S(*k4, "t0 EOS"), S(*k4, "t1 EOS")}, {"zero", "one"});
  CHECK(protos.classify(S(*k4, "t0 EOS")).name == "zero");
  CHECK(protos.classify(S(*k4, "t1 EOS")).id == 0);
  CHECK_THROWS_AS(MeaningClassifier::prototypes(m, {}), Error);
}

TEST_CASE("well-trained check against the closure") {
  auto a = toy();
  const Corpus c = load_corpus(oracle::data("toy.corpus"), a);
  const auto m = train_ngram(c, 1, 0.0, 4);
  const auto ms = build_sigma(c, 4);

  const std::set<Sentence> closure = oracle::closure(c.sentences, 4, a->eos());
  const auto high = bigram_high_probability(c, 1e-3, 4);
  std::set<Sentence> outside;
  for (const auto& [s, p] : high) {
    if (!closure.count(s)) outside.insert(s);
  }

  const auto r = well_trained_check(m, ms, 1e-3, 4);
  CHECK(r.high_probability == high.size());
  std::set<Sentence> reported;
  for (const auto& [s, p] : r.violations) {
    reported.insert(s);
    CHECK(p == doctest::Approx(high.at(s)).epsilon(1e-12));
  }
  CHECK(reported == outside);
  CHECK(r.pass == outside.empty());
  CHECK(r.pass);

  // Monotone in theta.
  bool passed = false;
  std::size_t last = r.violations.size();
  for (double theta : {1e-4, 1e-3, 1e-2, 0.05, 0.2}) {
    const auto rt = well_trained_check(m, ms, theta, 4);
    if (passed) CHECK(rt.pass);
    passed = passed || rt.pass;
    if (theta > 1e-4) CHECK(rt.violations.size() <= last);
    last = rt.violations.size();
  }

  const auto vacuous = well_trained_check(m, ms, 1.5, 4);
  CHECK(vacuous.pass);
  CHECK(vacuous.high_probability == 0);

  CHECK_THROWS_AS(well_trained_check(m, ms, 0.0, 4), Error);
  CHECK_THROWS_AS(well_trained_check(m, ms, 1e-3, 4, {.budget = 1000}), Error);
}

TEST_CASE("uniform model is not well-trained") {
  const auto k4 = std::make_shared<const Alphabet>(Alphabet::synthetic(4));
  const Corpus c("u", k4, {S(*k4, "t0 t1 EOS")});
  const auto ms = build_sigma(c, 3);
  const auto u = uniform_model(k4, 3);
  const double theta = 1.0 / 16;
  const auto r = well_trained_check(*u, ms, theta, 3);
  CHECK_FALSE(r.pass);
  // Two ordinary first tokens, then EOS with probability 1/4: 1/8 each.
  // Three-token sentences have probability 1/32 and fall below theta.
  std::set<Sentence> expected;
  for (TokenId first : {0u, 1u}) {
    const Sentence s = {first, k4->eos()};
    if (!oracle::closure(c.sentences, 3, k4->eos()).count(s)) expected.insert(s);
  }
  std::set<Sentence> got;
  for (const auto& [s, p] : r.violations) {
    got.insert(s);
    CHECK(p == 0.125);
  }
  CHECK(got == expected);
  CHECK(got.count(S(*k4, "t0 EOS")) == 1);
  CHECK(r.high_probability == 2);
}

TEST_CASE("annotation entropy") {
  CHECK(annotation_entropy({{5, 5}}).per_example[0] == 1.0);
  CHECK(annotation_entropy({{10, 0}}).per_example[0] == 0.0);
  const double h31 = annotation_entropy({{3, 1}}).per_example[0];
  CHECK(h31 == doctest::Approx(oracle::entropy({3, 1})).epsilon(1e-15));
  CHECK(h31 == doctest::Approx(0.8113).epsilon(1e-4));

  auto a = toy();
  const auto labeled = load_labeled(oracle::data("toy.labeled"), *a);
  const auto r = annotation_entropy(labeled);
  REQUIRE(r.per_example.size() == labeled.size());
  std::vector<double> hs;
  for (const auto& ex : labeled) {
    std::vector<double> v;
    for (const auto& [l, n] : ex.votes) v.push_back(static_cast<double>(n));
    hs.push_back(oracle::entropy(v));
  }
  double mean = 0;
  for (double h : hs) mean += h / static_cast<double>(hs.size());
  double ss = 0;
  for (double h : hs) ss += (h - mean) * (h - mean);
  CHECK(r.mean == doctest::Approx(mean).epsilon(1e-14));
  CHECK(r.sd == doctest::Approx(std::sqrt(ss / static_cast<double>(hs.size() - 1))).epsilon(1e-14));

  CHECK_THROWS_AS(annotation_entropy({{0, 0}}), Error);
  CHECK_THROWS_AS(annotation_entropy({{-1, 2}}), Error);
}
