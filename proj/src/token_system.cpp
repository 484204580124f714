#include "botlab/token_system.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace botlab {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open '" + path + "'");
  return in;
}

}  // namespace

std::size_t SentenceHash::operator()(const Sentence& s) const noexcept {
  std::size_t h = s.size();
  for (TokenId t : s) h ^= t + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

// ---------------------------------------------------------------------------
// Alphabet

Alphabet::Alphabet(std::vector<std::string> symbols, TokenId eos, TokenId pad,
                   std::vector<TokenId> labels, std::optional<Matrix> encodings)
    : symbols_(std::move(symbols)), eos_(eos), pad_(pad), labels_(std::move(labels)),
      encodings_(std::move(encodings)) {
  const std::size_t k = symbols_.size();
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "alphabet must not be empty");
  if (eos_ >= k || pad_ >= k) throw Error(ErrorCode::kInvalidArgument, "eos/pad id out of range");
  if (eos_ == pad_) throw Error(ErrorCode::kInvalidArgument, "eos and pad must differ");
  for (TokenId i = 0; i < k; ++i) {
    if (symbols_[i].empty() || symbols_[i].find_first_of(" \t\r\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "token symbols must be non-empty and whitespace-free");
    }
    if (!index_.emplace(symbols_[i], i).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate token symbol '" + symbols_[i] + "'");
    }
  }
  for (TokenId l : labels_) {
    if (l >= k || l == eos_ || l == pad_) {
      throw Error(ErrorCode::kInvalidArgument, "label ids must be ordinary tokens");
    }
  }
  if (encodings_) {
    if (static_cast<std::size_t>(encodings_->rows()) != k) {
      throw Error(ErrorCode::kInvalidArgument, "encodings must have exactly K rows");
    }
    for (Eigen::Index i = 0; i < encodings_->rows(); ++i) {
      for (Eigen::Index j = i + 1; j < encodings_->rows(); ++j) {
        if (encodings_->row(i) == encodings_->row(j)) {
          throw Error(ErrorCode::kInvalidArgument,
                      "encodings of '" + symbols_[i] + "' and '" + symbols_[j] + "' coincide");
        }
      }
    }
  }
}

Alphabet Alphabet::synthetic(std::size_t size) {
  if (size < 2) throw Error(ErrorCode::kInvalidArgument, "synthetic alphabet needs K >= 2");
  std::vector<std::string> symbols;
  for (std::size_t i = 0; i + 2 < size; ++i) symbols.push_back("t" + std::to_string(i));
  symbols.emplace_back("EOS");
  symbols.emplace_back("PAD");
  return Alphabet(std::move(symbols), static_cast<TokenId>(size - 2), static_cast<TokenId>(size - 1));
}

bool Alphabet::is_label(TokenId t) const {
  return std::find(labels_.begin(), labels_.end(), t) != labels_.end();
}

bool Alphabet::is_word(TokenId t) const {
  return t < size() && t != eos_ && t != pad_ && !is_label(t);
}

std::vector<TokenId> Alphabet::words() const {
  std::vector<TokenId> out;
  for (TokenId t = 0; t < size(); ++t) {
    if (is_word(t)) out.push_back(t);
  }
  return out;
}

const std::string& Alphabet::symbol(TokenId t) const {
  if (t >= size()) throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " out of range");
  return symbols_[t];
}

std::optional<TokenId> Alphabet::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::string Alphabet::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += symbol(tokens[i]);
  }
  return out;
}

bool Alphabet::operator==(const Alphabet& other) const {
  return symbols_ == other.symbols_ && eos_ == other.eos_ && pad_ == other.pad_ &&
         labels_ == other.labels_ && encodings_.has_value() == other.encodings_.has_value() &&
         (!encodings_ || *encodings_ == *other.encodings_);
}

// ---------------------------------------------------------------------------
// Sentences

bool is_complete(std::span<const TokenId> s, TokenId eos) {
  return !s.empty() && s.back() == eos && std::count(s.begin(), s.end(), eos) == 1;
}

Sentence left_pad(std::span<const TokenId> s, std::size_t context_length, TokenId pad) {
  Sentence w(context_length, pad);
  const std::size_t n = std::min(s.size(), context_length);
  std::copy(s.end() - static_cast<std::ptrdiff_t>(n), s.end(), w.end() - static_cast<std::ptrdiff_t>(n));
  return w;
}

Sentence strip_padding(std::span<const TokenId> window, TokenId pad) {
  auto it = std::find_if(window.begin(), window.end(), [pad](TokenId t) { return t != pad; });
  return Sentence(it, window.end());
}

Corpus::Corpus(std::string name_, AlphabetPtr alphabet_, std::vector<Sentence> sentences_)
    : name(std::move(name_)), alphabet(std::move(alphabet_)), sentences(std::move(sentences_)) {
  if (!alphabet) throw Error(ErrorCode::kInvalidArgument, "corpus needs an alphabet");
  for (const auto& s : sentences) {
    if (!is_complete(s, alphabet->eos())) {
      throw Error(ErrorCode::kInvalidArgument, "corpus sentences must be complete: '" + alphabet->render(s) + "'");
    }
    for (TokenId t : s) {
      if (t >= alphabet->size()) throw Error(ErrorCode::kInvalidArgument, "token id out of range in corpus");
    }
  }
}

bool Corpus::operator==(const Corpus& other) const {
  return *alphabet == *other.alphabet && sentences == other.sentences;
}

// ---------------------------------------------------------------------------
// Meaningful set

MeaningfulSet::MeaningfulSet(Corpus base, std::size_t max_len, SentenceSet members)
    : base_(std::move(base)), max_len_(max_len), members_(std::move(members)) {}

std::vector<Sentence> MeaningfulSet::sorted_members() const {
  std::vector<Sentence> out(members_.begin(), members_.end());
  std::sort(out.begin(), out.end());
  return out;
}

MeaningfulSet build_sigma(const Corpus& base, std::size_t max_len, std::optional<std::size_t> context_length) {
  if (base.sentences.empty()) throw Error(ErrorCode::kInvalidArgument, "empty base");
  if (max_len < 2) throw Error(ErrorCode::kInvalidArgument, "degenerate length bound");
  if (context_length && max_len > *context_length) {
    throw Error(ErrorCode::kInvalidArgument, "max_len exceeds the context length");
  }
  const TokenId eos = base.alphabet->eos();
  for (const auto& s : base.sentences) {
    if (s.size() < 3) {
      throw Error(ErrorCode::kInvalidArgument,
                  "single-token segment below granularity: '" + base.alphabet->render(s) + "'");
    }
  }

  SentenceSet members;
  std::vector<Sentence> frontier;
  auto add = [&](Sentence s) {
    if (s.size() <= max_len && members.insert(s).second) frontier.push_back(std::move(s));
  };
  auto add_segments = [&](const Sentence& m) {
    for (std::size_t b = 0; b < m.size(); ++b) {
      for (std::size_t e = b + 2; e <= m.size(); ++e) {
        Sentence seg(m.begin() + static_cast<std::ptrdiff_t>(b), m.begin() + static_cast<std::ptrdiff_t>(e));
        if (seg.back() != eos) seg.push_back(eos);
        add(std::move(seg));
      }
    }
  };

  for (const auto& s : base.sentences) {
    add(s);
    // Over-long base sentences still contribute their segments.
    if (s.size() > max_len) add_segments(s);
  }

  // Semi-naive fixpoint: every new member is segmented and composed with
  // every member (in both orders) exactly once.
  std::vector<Sentence> all;
  while (!frontier.empty()) {
    std::vector<Sentence> delta;
    delta.swap(frontier);
    for (const auto& d : delta) all.push_back(d);
    for (const auto& d : delta) {
      add_segments(d);
      for (std::size_t i = 0; i < all.size(); ++i) {
        const Sentence& m = all[i];
        if (d.size() - 1 + m.size() <= max_len) {
          Sentence c(d.begin(), d.end() - 1);
          c.insert(c.end(), m.begin(), m.end());
          add(std::move(c));
        }
        if (m.size() - 1 + d.size() <= max_len) {
          Sentence c(m.begin(), m.end() - 1);
          c.insert(c.end(), d.begin(), d.end());
          add(std::move(c));
        }
      }
    }
  }
  return MeaningfulSet(base, max_len, std::move(members));
}

bool is_member(const Sentence& s, const MeaningfulSet& ms) {
  if (!is_complete(s, ms.base().alphabet->eos())) {
    throw Error(ErrorCode::kInvalidArgument, "meaning undefined for incomplete sentences");
  }
  return ms.contains(s);
}

// ---------------------------------------------------------------------------
// Alphabet file

Alphabet parse_alphabet(std::istream& in) {
  std::vector<std::string> symbols;
  std::unordered_map<std::string, TokenId> ids;
  std::optional<TokenId> eos, pad;
  std::vector<TokenId> labels;
  std::optional<std::size_t> dim;
  std::vector<std::vector<double>> rows;

  auto intern = [&](const std::string& sym) {
    auto [it, fresh] = ids.emplace(sym, static_cast<TokenId>(symbols.size()));
    if (fresh) symbols.push_back(sym);
    return it->second;
  };

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto parts = split_ws(line);
    const auto where = "alphabet line " + std::to_string(line_no) + ": ";
    if (parts[0][0] == '#') {
      const auto& d = parts[0];
      if (parts.size() != 2) throw Error(ErrorCode::kParse, where + "directive takes one argument");
      if (d == "#eos") {
        eos = intern(parts[1]);
      } else if (d == "#pad") {
        pad = intern(parts[1]);
      } else if (d == "#label") {
        labels.push_back(intern(parts[1]));
      } else if (d == "#dim") {
        dim = std::stoul(parts[1]);
      } else {
        throw Error(ErrorCode::kParse, where + "unknown directive '" + d + "'");
      }
      continue;
    }
    if (dim) {
      if (parts.size() != *dim) throw Error(ErrorCode::kParse, where + "encoding row has wrong length");
      std::vector<double> row;
      for (const auto& p : parts) row.push_back(std::stod(p));
      rows.push_back(std::move(row));
      continue;
    }
    if (parts.size() != 1) throw Error(ErrorCode::kParse, where + "expected a single symbol");
    intern(parts[0]);
  }
  if (!eos) throw Error(ErrorCode::kParse, "alphabet lacks an #eos directive");
  if (!pad) throw Error(ErrorCode::kParse, "alphabet lacks a #pad directive");
  std::optional<Matrix> enc;
  if (dim) {
    if (rows.size() != symbols.size()) {
      throw Error(ErrorCode::kParse, "expected " + std::to_string(symbols.size()) + " encoding rows, got " +
                                         std::to_string(rows.size()));
    }
    enc = Matrix(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(*dim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < *dim; ++j) {
        (*enc)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
      }
    }
  }
  return Alphabet(std::move(symbols), *eos, *pad, std::move(labels), std::move(enc));
}

Alphabet load_alphabet(const std::string& path) {
  auto in = open_in(path);
  return parse_alphabet(in);
}

void write_alphabet(std::ostream& out, const Alphabet& a) {
  for (const auto& s : a.symbols()) out << s << '\n';
  out << "#eos " << a.symbol(a.eos()) << '\n';
  out << "#pad " << a.symbol(a.pad()) << '\n';
  for (TokenId l : a.labels()) out << "#label " << a.symbol(l) << '\n';
  if (a.encodings()) {
    const Matrix& e = *a.encodings();
    out << "#dim " << e.cols() << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < e.rows(); ++i) {
      for (Eigen::Index j = 0; j < e.cols(); ++j) out << (j ? " " : "") << e(i, j);
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Corpus file

Sentence parse_sentence(std::string_view line, const Alphabet& a, std::size_t line_no) {
  Sentence s;
  std::size_t col = 0;
  for (const auto& sym : split_ws(line)) {
    ++col;
    auto id = a.find(sym);
    if (!id) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ", token " + std::to_string(col) +
                                         ": unknown token '" + sym + "'");
    }
    s.push_back(*id);
  }
  return s;
}

Corpus parse_corpus(std::istream& in, AlphabetPtr alphabet, std::string name) {
  std::vector<Sentence> sentences;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    Sentence s = parse_sentence(line, *alphabet, line_no);
    if (s.back() != alphabet->eos()) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": missing EOS at end of sentence");
    }
    if (!is_complete(s, alphabet->eos())) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": EOS inside sentence");
    }
    sentences.push_back(std::move(s));
  }
  return Corpus(std::move(name), std::move(alphabet), std::move(sentences));
}

Corpus load_corpus(const std::string& path, AlphabetPtr alphabet) {
  auto in = open_in(path);
  auto name = path.substr(path.find_last_of('/') + 1);
  return parse_corpus(in, std::move(alphabet), name);
}

void write_corpus(std::ostream& out, const Corpus& c) {
  for (const auto& s : c.sentences) out << c.alphabet->render(s) << '\n';
}

void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kNotFound, "cannot write '" + path + "'");
  write_corpus(out, c);
}

// ---------------------------------------------------------------------------
// Labeled data

const std::string& LabeledExample::majority() const {
  if (votes.empty()) throw Error(ErrorCode::kInvalidArgument, "example has no votes");
  std::size_t best = 0;
  for (std::size_t i = 1; i < votes.size(); ++i) {
    if (votes[i].second > votes[best].second) best = i;
  }
  return votes[best].first;
}

std::vector<LabeledExample> parse_labeled(std::istream& in, const Alphabet& a) {
  std::vector<LabeledExample> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    const auto bar = line.find('|');
    if (bar == std::string_view::npos) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": missing '|' separator");
    }
    LabeledExample ex;
    ex.sentence = parse_sentence(line.substr(0, bar), a, line_no);
    for (const auto& pair : split_ws(line.substr(bar + 1))) {
      const auto colon = pair.rfind(':');
      if (colon == std::string::npos || colon == 0) {
        throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": expected label:count, got '" + pair + "'");
      }
      std::size_t count = 0;
      try {
        std::size_t used = 0;
        const long long v = std::stoll(pair.substr(colon + 1), &used);
        if (used != pair.size() - colon - 1 || v < 0) throw std::invalid_argument("count");
        count = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": bad vote count in '" + pair + "'");
      }
      ex.votes.emplace_back(pair.substr(0, colon), count);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<LabeledExample> load_labeled(const std::string& path, const Alphabet& a) {
  auto in = open_in(path);
  return parse_labeled(in, a);
}

void write_labeled(std::ostream& out, const std::vector<LabeledExample>& data, const Alphabet& a) {
  for (const auto& ex : data) {
    out << a.render(ex.sentence) << " |";
    for (const auto& [label, count] : ex.votes) out << ' ' << label << ':' << count;
    out << '\n';
  }
}

}  // namespace botlab
