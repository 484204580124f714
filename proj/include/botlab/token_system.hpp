#pragma once

// Alphabets, sentences, corpora and the truncated meaningful-set closure,
// plus the text formats they are persisted in.

#include "botlab/numeric.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace botlab {

using TokenId = std::uint32_t;

/// A token sequence. Sentences, prompts and context windows all use it.
using Sentence = std::vector<TokenId>;

struct SentenceHash {
  std::size_t operator()(const Sentence& s) const noexcept;
};

using SentenceSet = std::unordered_set<Sentence, SentenceHash>;

/// Finite token dictionary with distinguished end-of-sentence and pad
/// tokens. Optional label tokens form a sub-alphabet used for meaning
/// attribution; optional encodings give each token a vector in R^M.
class Alphabet {
 public:
  Alphabet(std::vector<std::string> symbols, TokenId eos, TokenId pad,
           std::vector<TokenId> labels = {}, std::optional<Matrix> encodings = std::nullopt);

  /// K tokens named t0..t{K-3}, then EOS and PAD.
  static Alphabet synthetic(std::size_t size);

  std::size_t size() const { return symbols_.size(); }
  TokenId eos() const { return eos_; }
  TokenId pad() const { return pad_; }
  const std::vector<TokenId>& labels() const { return labels_; }
  bool is_label(TokenId t) const;
  /// Ordinary tokens: neither EOS, pad, nor a label.
  bool is_word(TokenId t) const;
  std::vector<TokenId> words() const;

  std::size_t encoding_dim() const { return encodings_ ? static_cast<std::size_t>(encodings_->cols()) : 0; }
  const std::optional<Matrix>& encodings() const { return encodings_; }

  const std::string& symbol(TokenId t) const;
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::optional<TokenId> find(std::string_view symbol) const;

  std::string render(std::span<const TokenId> tokens) const;

  bool operator==(const Alphabet& other) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId eos_;
  TokenId pad_;
  std::vector<TokenId> labels_;
  std::optional<Matrix> encodings_;
};

using AlphabetPtr = std::shared_ptr<const Alphabet>;

/// Complete iff the last token is EOS and EOS occurs exactly once.
bool is_complete(std::span<const TokenId> s, TokenId eos);

/// The last `context_length` tokens of `s`, left-padded with `pad`.
Sentence left_pad(std::span<const TokenId> s, std::size_t context_length, TokenId pad);

/// Drops the leading run of pad tokens.
Sentence strip_padding(std::span<const TokenId> window, TokenId pad);

struct Corpus {
  Corpus(std::string name, AlphabetPtr alphabet, std::vector<Sentence> sentences);

  std::string name;
  AlphabetPtr alphabet;
  std::vector<Sentence> sentences;

  /// Same alphabet and sentences; the name is not part of the file format.
  bool operator==(const Corpus& other) const;
};

/// The closure of a base corpus under segmentation and composition,
/// truncated at `max_len` tokens (EOS included).
class MeaningfulSet {
 public:
  MeaningfulSet(Corpus base, std::size_t max_len, SentenceSet members);

  const Corpus& base() const { return base_; }
  std::size_t max_len() const { return max_len_; }
  const SentenceSet& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool contains(const Sentence& s) const { return members_.count(s) != 0; }
  /// Members in lexicographic order, for stable output.
  std::vector<Sentence> sorted_members() const;

 private:
  Corpus base_;
  std::size_t max_len_;
  SentenceSet members_;
};

/// Closure of `base` under
///   segmentation: any contiguous run of >= 2 tokens of a member, EOS-terminated;
///   composition:  a member with its EOS stripped, followed by another member;
/// keeping only sentences of length <= max_len. Base sentences must carry at
/// least two ordinary tokens; longer-than-bound base sentences contribute
/// their segments only.
MeaningfulSet build_sigma(const Corpus& base, std::size_t max_len,
                          std::optional<std::size_t> context_length = std::nullopt);

/// Membership test. Throws for incomplete sentences.
bool is_member(const Sentence& s, const MeaningfulSet& ms);

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

/// Alphabet file: one symbol per line, `#eos <sym>`, `#pad <sym>`,
/// `#label <sym>`, and optionally `#dim <M>` followed by K rows of M decimals.
Alphabet parse_alphabet(std::istream& in);
Alphabet load_alphabet(const std::string& path);
void write_alphabet(std::ostream& out, const Alphabet& a);

/// Parses one whitespace-separated line of symbols. `line_no` only feeds
/// error messages.
Sentence parse_sentence(std::string_view line, const Alphabet& a, std::size_t line_no = 1);

/// Corpus file: one EOS-terminated sentence per line.
Corpus parse_corpus(std::istream& in, AlphabetPtr alphabet, std::string name = "corpus");
Corpus load_corpus(const std::string& path, AlphabetPtr alphabet);
void write_corpus(std::ostream& out, const Corpus& c);
void save_corpus(const Corpus& c, const std::string& path);

/// One line of a labeled-data file: `tokens | label:count label:count`.
struct LabeledExample {
  Sentence sentence;
  std::vector<std::pair<std::string, std::size_t>> votes;

  /// Label with the most votes, lowest position on ties.
  const std::string& majority() const;
};

std::vector<LabeledExample> parse_labeled(std::istream& in, const Alphabet& a);
std::vector<LabeledExample> load_labeled(const std::string& path, const Alphabet& a);
void write_labeled(std::ostream& out, const std::vector<LabeledExample>& data, const Alphabet& a);

}  // namespace botlab
