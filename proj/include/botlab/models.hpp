#pragma once

// Concrete next-token discriminants: dense logit tables, smoothed n-gram
// counts, the modular-sum family, and a post-EOS meaning head layered on an
// n-gram model.

#include "botlab/numeric.hpp"
#include "botlab/token_system.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace botlab {

/// A map from context windows of C tokens to K logits. Implementations are
/// pure functions of the window and safe to share across threads.
class Discriminant {
 public:
  virtual ~Discriminant() = default;

  const Alphabet& alphabet() const { return *alphabet_; }
  const AlphabetPtr& alphabet_ptr() const { return alphabet_; }
  std::size_t vocab_size() const { return alphabet_->size(); }
  std::size_t context_length() const { return context_length_; }

  /// Logits for a window of exactly context_length() tokens. Entries may be
  /// -inf (probability zero).
  virtual Vector logits(std::span<const TokenId> window) const = 0;

  /// Argmax of the logits, lowest id on ties.
  virtual TokenId deterministic_token(std::span<const TokenId> window) const;

  virtual std::string kind() const = 0;

  /// Versioned model file. Kinds without a file form throw.
  virtual void write(std::ostream& out) const;

  /// Fingerprint recorded in transcripts and reports.
  virtual std::string hash() const;

 protected:
  Discriminant(AlphabetPtr alphabet, std::size_t context_length);

  void check_window(std::span<const TokenId> window) const;
  void write_header(std::ostream& out) const;

 private:
  AlphabetPtr alphabet_;
  std::size_t context_length_;
};

using DiscriminantPtr = std::shared_ptr<const Discriminant>;

/// Base-K index of a window (first token most significant).
std::size_t window_index(std::span<const TokenId> window, std::size_t k);
Sentence window_from_index(std::size_t index, std::size_t k, std::size_t context_length);

/// Dense table of K^C logit rows.
class TabularModel final : public Discriminant {
 public:
  TabularModel(AlphabetPtr alphabet, std::size_t context_length, Matrix table);

  Vector logits(std::span<const TokenId> window) const override;
  std::string kind() const override { return "tabular"; }
  void write(std::ostream& out) const override;

  const Matrix& table() const { return table_; }

 private:
  Matrix table_;
};

struct RandomTabularOptions {
  double scale = 1.0;
  /// Probability that a (window, token) entry is allowed; disallowed entries
  /// get -inf. Every row keeps at least one allowed entry.
  double support = 1.0;
  /// One-hot rows: logit `sharpness` at a single token, zero elsewhere.
  bool deterministic = false;
  double sharpness = 8.0;
  /// Restrict outputs (deterministic rows) to the first `range` tokens of a
  /// random permutation. Zero means no restriction.
  std::size_t range = 0;
};

TabularModel random_tabular(AlphabetPtr alphabet, std::size_t context_length, std::uint64_t seed,
                            const RandomTabularOptions& options = {});

/// Wraps an arbitrary window -> logits function. Used for constructed
/// instances; has no file form.
class FunctionModel final : public Discriminant {
 public:
  using Fn = std::function<Vector(std::span<const TokenId>)>;

  FunctionModel(AlphabetPtr alphabet, std::size_t context_length, Fn fn, std::string name);

  Vector logits(std::span<const TokenId> window) const override;
  std::string kind() const override { return "function:" + name_; }
  std::string hash() const override;

 private:
  Fn fn_;
  std::string name_;
};

/// All logits zero: the uniform next-token law.
std::shared_ptr<FunctionModel> uniform_model(AlphabetPtr alphabet, std::size_t context_length);

/// Always emits `token` (logit `sharpness` there, zero elsewhere).
std::shared_ptr<FunctionModel> constant_model(AlphabetPtr alphabet, std::size_t context_length, TokenId token,
                                              double sharpness = 8.0);

/// Conditional frequencies of the next token given the last `order` tokens
/// of the window, with additive smoothing alpha. Logits are log conditionals.
/// Unseen contexts fall back to the uniform law.
class NGramModel final : public Discriminant {
 public:
  NGramModel(AlphabetPtr alphabet, std::size_t context_length, std::size_t order, double alpha);

  void add_count(std::span<const TokenId> key, TokenId next, double count = 1.0);

  Vector probabilities(std::span<const TokenId> window) const;
  Vector logits(std::span<const TokenId> window) const override;
  std::string kind() const override { return "ngram"; }
  void write(std::ostream& out) const override;

  std::size_t order() const { return order_; }
  double alpha() const { return alpha_; }
  /// Count rows keyed by the last `order` tokens.
  const std::map<Sentence, Vector>& counts() const { return counts_; }
  Sentence key_of(std::span<const TokenId> window) const;

 private:
  std::size_t order_;
  double alpha_;
  std::map<Sentence, Vector> counts_;
};

/// Trains on every (left-padded prefix window, next token) pair of the corpus.
/// At alpha = 0 the conditionals are the empirical frequencies, which minimise
/// the corpus cross-entropy within the family.
NGramModel train_ngram(const Corpus& corpus, std::size_t order, double alpha, std::size_t context_length);

/// Deterministic map (sum_j weight_j * x_j) mod K, realised as logits with
/// `sharpness` at that token and zero elsewhere.
class ModKModel final : public Discriminant {
 public:
  ModKModel(std::size_t k, std::size_t context_length, std::size_t ell, std::vector<std::uint64_t> weights,
            double sharpness = 8.0);

  Vector logits(std::span<const TokenId> window) const override;
  TokenId deterministic_token(std::span<const TokenId> window) const override;
  std::string kind() const override { return "modk"; }
  void write(std::ostream& out) const override;

  std::size_t ell() const { return ell_; }
  /// 1-based pivot coordinate.
  std::size_t pivot() const { return pivot_; }
  const std::vector<std::uint64_t>& weights() const { return weights_; }
  double sharpness() const { return sharpness_; }

 private:
  std::size_t ell_;
  std::size_t pivot_;
  std::vector<std::uint64_t> weights_;
  double sharpness_;
};

/// 1-based coordinate whose single-variable restriction the controllability
/// test inspects: C - l + 2 for even l, C - l + 1 for odd l.
std::size_t pivot_position(std::size_t context_length, std::size_t ell);

/// Builds a ModKModel after checking that the pivot restriction is a
/// permutation for every fixing of the other coordinates.
ModKModel make_modk(std::size_t k, std::size_t context_length, std::size_t ell, std::vector<std::uint64_t> weights);

/// An n-gram model plus a count table over whole EOS-terminated windows whose
/// next-token law lives on the label sub-alphabet. Windows whose last non-pad
/// token is not EOS are answered by the n-gram model unchanged.
class MeaningHead final : public Discriminant {
 public:
  explicit MeaningHead(NGramModel base);

  void add_label(std::span<const TokenId> window, TokenId label, double count = 1.0);

  Vector logits(std::span<const TokenId> window) const override;
  std::string kind() const override { return "meaning-head"; }
  void write(std::ostream& out) const override;

  const NGramModel& base() const { return base_; }
  bool routes_to_head(std::span<const TokenId> window) const;
  const std::map<Sentence, Vector>& head_counts() const { return head_; }

 private:
  std::size_t label_slot(TokenId label) const;

  NGramModel base_;
  std::map<Sentence, Vector> head_;
  Vector prior_;
};

/// Fine-tunes `model` so that the token after a complete sentence predicts
/// its label. Sentences longer than the context keep their last C tokens.
MeaningHead train_meaning_head(const NGramModel& model, const std::vector<std::pair<Sentence, TokenId>>& labeled);

struct AxisAlignment {
  double mean = 0;
  /// Softmax mass on the observed next token, one entry per corpus prefix in
  /// corpus order.
  std::vector<double> per_prefix;
};

/// Mean softmax mass (T = 1) the model assigns to the true next token over
/// every proper prefix of every corpus sentence.
AxisAlignment axis_alignment(const Discriminant& model, const Corpus& corpus);

// ---------------------------------------------------------------------------
// Model files

DiscriminantPtr read_model(std::istream& in);
DiscriminantPtr load_model(const std::string& path);
void save_model(const Discriminant& model, const std::string& path);

}  // namespace botlab
