#include "botlab/models.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace botlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxTableRows = std::size_t{1} << 22;

std::string join_ids(std::span<const TokenId> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

Sentence split_ids(const std::string& text) {
  Sentence out;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty()) continue;
    out.push_back(static_cast<TokenId>(std::stoul(part)));
  }
  return out;
}

void write_double(std::ostream& out, double v) {
  out << std::setprecision(17) << v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Discriminant

Discriminant::Discriminant(AlphabetPtr alphabet, std::size_t context_length)
    : alphabet_(std::move(alphabet)), context_length_(context_length) {
  if (!alphabet_) throw Error(ErrorCode::kInvalidArgument, "model needs an alphabet");
  if (context_length_ == 0) throw Error(ErrorCode::kInvalidArgument, "context length must be positive");
}

TokenId Discriminant::deterministic_token(std::span<const TokenId> window) const {
  return static_cast<TokenId>(argmax_lowest(logits(window)));
}

void Discriminant::check_window(std::span<const TokenId> window) const {
  if (window.size() != context_length_) {
    throw Error(ErrorCode::kInvalidArgument, "window has " + std::to_string(window.size()) + " tokens, model expects " +
                                                 std::to_string(context_length_));
  }
  for (TokenId t : window) {
    if (t >= vocab_size()) throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " out of range");
  }
}

void Discriminant::write(std::ostream&) const {
  throw Error(ErrorCode::kInvalidArgument, "model kind '" + kind() + "' has no file form");
}

void Discriminant::write_header(std::ostream& out) const {
  const Alphabet& a = alphabet();
  out << "botlab-model 1\n";
  out << "kind " << kind() << "\n";
  out << "context " << context_length_ << "\n";
  out << "symbols";
  for (const auto& s : a.symbols()) out << ' ' << s;
  out << "\n";
  out << "eos " << a.symbol(a.eos()) << "\n";
  out << "pad " << a.symbol(a.pad()) << "\n";
  out << "labels";
  for (TokenId l : a.labels()) out << ' ' << a.symbol(l);
  out << "\n";
}

std::string Discriminant::hash() const {
  std::ostringstream out;
  write(out);
  return fnv1a_hex(out.str());
}

std::size_t window_index(std::span<const TokenId> window, std::size_t k) {
  std::size_t idx = 0;
  for (TokenId t : window) idx = idx * k + t;
  return idx;
}

Sentence window_from_index(std::size_t index, std::size_t k, std::size_t context_length) {
  Sentence w(context_length);
  for (std::size_t i = context_length; i-- > 0;) {
    w[i] = static_cast<TokenId>(index % k);
    index /= k;
  }
  return w;
}

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(AlphabetPtr alphabet, std::size_t context_length, Matrix table)
    : Discriminant(std::move(alphabet), context_length), table_(std::move(table)) {
  const std::size_t rows = checked_pow(vocab_size(), context_length);
  if (static_cast<std::size_t>(table_.rows()) != rows || static_cast<std::size_t>(table_.cols()) != vocab_size()) {
    throw Error(ErrorCode::kInvalidArgument, "tabular model needs a K^C x K table");
  }
}

Vector TabularModel::logits(std::span<const TokenId> window) const {
  check_window(window);
  return table_.row(static_cast<Eigen::Index>(window_index(window, vocab_size()))).transpose();
}

void TabularModel::write(std::ostream& out) const {
  write_header(out);
  const std::size_t k = vocab_size();
  for (Eigen::Index r = 0; r < table_.rows(); ++r) {
    const Sentence key = window_from_index(static_cast<std::size_t>(r), k, context_length());
    for (Eigen::Index c = 0; c < table_.cols(); ++c) {
      if (table_(r, c) == kNegInf) continue;
      out << "logit " << join_ids(key) << ' ' << c << ' ';
      write_double(out, table_(r, c));
      out << "\n";
    }
  }
  out << "end\n";
}

TabularModel random_tabular(AlphabetPtr alphabet, std::size_t context_length, std::uint64_t seed,
                            const RandomTabularOptions& options) {
  const std::size_t k = alphabet->size();
  const std::size_t rows = checked_pow(k, context_length);
  if (rows > kMaxTableRows) {
    throw Error(ErrorCode::kBudgetExceeded, "tabular model with K^C = " + std::to_string(rows) + " rows exceeds " +
                                                std::to_string(kMaxTableRows));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, options.scale);
  Matrix table(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));

  std::vector<TokenId> range(k);
  std::iota(range.begin(), range.end(), TokenId{0});
  std::shuffle(range.begin(), range.end(), rng);
  const std::size_t range_size = options.range == 0 ? k : std::min(options.range, k);

  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (options.deterministic) {
      table.row(row).setZero();
      const TokenId pick = range[static_cast<std::size_t>(unit_draw(rng()) * static_cast<double>(range_size))];
      table(row, pick) = options.sharpness;
      continue;
    }
    bool any = false;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = normal(rng);
      const bool allowed = options.support >= 1.0 || unit_draw(rng()) < options.support;
      table(row, static_cast<Eigen::Index>(c)) = allowed ? v : kNegInf;
      any = any || allowed;
    }
    if (!any) table(row, static_cast<Eigen::Index>(rng() % k)) = normal(rng);
  }
  return TabularModel(std::move(alphabet), context_length, std::move(table));
}

// ---------------------------------------------------------------------------
// FunctionModel

FunctionModel::FunctionModel(AlphabetPtr alphabet, std::size_t context_length, Fn fn, std::string name)
    : Discriminant(std::move(alphabet), context_length), fn_(std::move(fn)), name_(std::move(name)) {}

Vector FunctionModel::logits(std::span<const TokenId> window) const {
  check_window(window);
  Vector v = fn_(window);
  if (static_cast<std::size_t>(v.size()) != vocab_size()) {
    throw Error(ErrorCode::kValidation, "invalid discriminant output: expected " + std::to_string(vocab_size()) +
                                            " logits, got " + std::to_string(v.size()));
  }
  return v;
}

std::string FunctionModel::hash() const {
  return fnv1a_hex(kind() + "/" + std::to_string(vocab_size()) + "/" + std::to_string(context_length()));
}

std::shared_ptr<FunctionModel> uniform_model(AlphabetPtr alphabet, std::size_t context_length) {
  const auto k = static_cast<Eigen::Index>(alphabet->size());
  return std::make_shared<FunctionModel>(
      std::move(alphabet), context_length, [k](std::span<const TokenId>) { return Vector(Vector::Zero(k)); },
      "uniform");
}

std::shared_ptr<FunctionModel> constant_model(AlphabetPtr alphabet, std::size_t context_length, TokenId token,
                                              double sharpness) {
  const auto k = static_cast<Eigen::Index>(alphabet->size());
  if (token >= alphabet->size()) throw Error(ErrorCode::kInvalidArgument, "constant token out of range");
  return std::make_shared<FunctionModel>(
      std::move(alphabet), context_length,
      [k, token, sharpness](std::span<const TokenId>) {
        Vector v = Vector::Zero(k);
        v(token) = sharpness;
        return v;
      },
      "constant-" + std::to_string(token));
}

// ---------------------------------------------------------------------------
// NGramModel

NGramModel::NGramModel(AlphabetPtr alphabet, std::size_t context_length, std::size_t order, double alpha)
    : Discriminant(std::move(alphabet), context_length), order_(order), alpha_(alpha) {
  if (order_ == 0) throw Error(ErrorCode::kInvalidArgument, "n-gram order must be >= 1");
  if (order_ > context_length) {
    throw Error(ErrorCode::kInvalidArgument, "n-gram order " + std::to_string(order_) + " exceeds context length " +
                                                 std::to_string(context_length));
  }
  if (!(alpha_ >= 0.0) || std::isinf(alpha_)) throw Error(ErrorCode::kInvalidArgument, "smoothing must be >= 0");
}

Sentence NGramModel::key_of(std::span<const TokenId> window) const {
  return Sentence(window.end() - static_cast<std::ptrdiff_t>(order_), window.end());
}

void NGramModel::add_count(std::span<const TokenId> key, TokenId next, double count) {
  if (key.size() != order_) throw Error(ErrorCode::kInvalidArgument, "n-gram key has the wrong length");
  if (next >= vocab_size()) throw Error(ErrorCode::kInvalidArgument, "token id out of range");
  if (!(count > 0)) throw Error(ErrorCode::kInvalidArgument, "counts must be positive");
  auto [it, fresh] = counts_.try_emplace(Sentence(key.begin(), key.end()));
  if (fresh) it->second = Vector::Zero(static_cast<Eigen::Index>(vocab_size()));
  it->second(next) += count;
}

Vector NGramModel::probabilities(std::span<const TokenId> window) const {
  check_window(window);
  const auto k = static_cast<Eigen::Index>(vocab_size());
  auto it = counts_.find(key_of(window));
  if (it == counts_.end()) return Vector::Constant(k, 1.0 / static_cast<double>(k));
  const Vector& c = it->second;
  return (c.array() + alpha_) / (c.sum() + alpha_ * static_cast<double>(k));
}

Vector NGramModel::logits(std::span<const TokenId> window) const {
  return probabilities(window).array().log();
}

void NGramModel::write(std::ostream& out) const {
  write_header(out);
  out << "order " << order_ << "\n";
  out << "alpha ";
  write_double(out, alpha_);
  out << "\n";
  for (const auto& [key, row] : counts_) {
    for (Eigen::Index c = 0; c < row.size(); ++c) {
      if (row(c) == 0) continue;
      out << "count " << join_ids(key) << ' ' << c << ' ';
      write_double(out, row(c));
      out << "\n";
    }
  }
  out << "end\n";
}

NGramModel train_ngram(const Corpus& corpus, std::size_t order, double alpha, std::size_t context_length) {
  if (corpus.sentences.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot train on an empty corpus");
  NGramModel model(corpus.alphabet, context_length, order, alpha);
  const TokenId pad = corpus.alphabet->pad();
  for (const Sentence& s : corpus.sentences) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      const Sentence window = left_pad(std::span(s).first(t), context_length, pad);
      model.add_count(model.key_of(window), s[t]);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// ModKModel

std::size_t pivot_position(std::size_t context_length, std::size_t ell) {
  if (ell < 2) throw Error(ErrorCode::kInvalidArgument, "ℓ must be ≥ 2");
  if (ell > context_length) throw Error(ErrorCode::kInvalidArgument, "ℓ must not exceed the context length");
  return ell % 2 == 0 ? context_length - ell + 2 : context_length - ell + 1;
}

ModKModel::ModKModel(std::size_t k, std::size_t context_length, std::size_t ell, std::vector<std::uint64_t> weights,
                     double sharpness)
    : Discriminant(std::make_shared<const Alphabet>(Alphabet::synthetic(k)), context_length),
      ell_(ell),
      pivot_(pivot_position(context_length, ell)),
      weights_(std::move(weights)),
      sharpness_(sharpness) {
  if (weights_.size() != context_length) {
    throw Error(ErrorCode::kInvalidArgument, "mod-K model needs one weight per context position");
  }
}

TokenId ModKModel::deterministic_token(std::span<const TokenId> window) const {
  check_window(window);
  const std::uint64_t k = vocab_size();
  std::uint64_t acc = 0;
  for (std::size_t j = 0; j < window.size(); ++j) acc = (acc + (weights_[j] % k) * window[j]) % k;
  return static_cast<TokenId>(acc);
}

Vector ModKModel::logits(std::span<const TokenId> window) const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(vocab_size()));
  v(deterministic_token(window)) = sharpness_;
  return v;
}

void ModKModel::write(std::ostream& out) const {
  write_header(out);
  out << "ell " << ell_ << "\n";
  out << "weights";
  for (auto w : weights_) out << ' ' << w;
  out << "\n";
  out << "sharpness ";
  write_double(out, sharpness_);
  out << "\n";
  out << "end\n";
}

ModKModel make_modk(std::size_t k, std::size_t context_length, std::size_t ell, std::vector<std::uint64_t> weights) {
  ModKModel model(k, context_length, ell, std::move(weights));
  // The restriction x_p -> (c + w_p x_p) mod K depends on the other
  // coordinates only through the offset c, so every fixing is covered by
  // checking all K offsets.
  const std::uint64_t wp = model.weights()[model.pivot() - 1] % k;
  for (std::uint64_t c = 0; c < k; ++c) {
    std::vector<bool> hit(k, false);
    for (std::uint64_t x = 0; x < k; ++x) {
      const std::uint64_t y = (c + wp * x) % k;
      if (hit[y]) {
        throw Error(ErrorCode::kHypothesisViolated,
                    "pivot restriction not bijective: weight " + std::to_string(wp) + " at position " +
                        std::to_string(model.pivot()) + " shares a factor with K=" + std::to_string(k));
      }
      hit[y] = true;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// MeaningHead

MeaningHead::MeaningHead(NGramModel base)
    : Discriminant(base.alphabet_ptr(), base.context_length()), base_(std::move(base)) {
  if (alphabet().labels().empty()) throw Error(ErrorCode::kInvalidArgument, "meaning head needs a non-empty label set");
  prior_ = Vector::Zero(static_cast<Eigen::Index>(alphabet().labels().size()));
}

std::size_t MeaningHead::label_slot(TokenId label) const {
  const auto& labels = alphabet().labels();
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw Error(ErrorCode::kInvalidArgument, "'" + alphabet().symbol(label) + "' is not a label token");
  }
  return static_cast<std::size_t>(it - labels.begin());
}

bool MeaningHead::routes_to_head(std::span<const TokenId> window) const {
  for (std::size_t i = window.size(); i-- > 0;) {
    if (window[i] == alphabet().pad()) continue;
    return window[i] == alphabet().eos();
  }
  return false;
}

void MeaningHead::add_label(std::span<const TokenId> window, TokenId label, double count) {
  check_window(window);
  if (!routes_to_head(window)) throw Error(ErrorCode::kInvalidArgument, "head windows must end in EOS");
  const std::size_t slot = label_slot(label);
  auto [it, fresh] = head_.try_emplace(Sentence(window.begin(), window.end()));
  if (fresh) it->second = Vector::Zero(prior_.size());
  it->second(static_cast<Eigen::Index>(slot)) += count;
  prior_(static_cast<Eigen::Index>(slot)) += count;
}

Vector MeaningHead::logits(std::span<const TokenId> window) const {
  check_window(window);
  if (!routes_to_head(window)) return base_.logits(window);
  auto it = head_.find(Sentence(window.begin(), window.end()));
  const Vector& counts = it == head_.end() ? prior_ : it->second;
  Vector v = Vector::Constant(static_cast<Eigen::Index>(vocab_size()), kNegInf);
  const double total = counts.sum();
  const auto& labels = alphabet().labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    v(labels[i]) = std::log(counts(static_cast<Eigen::Index>(i)) / total);
  }
  return v;
}

void MeaningHead::write(std::ostream& out) const {
  std::ostringstream base;
  base_.write(base);
  // Reuse the n-gram body, then append head rows before the terminator.
  std::string text = base.str();
  text.replace(text.find("kind ngram"), 10, "kind meaning-head");
  text.resize(text.size() - 4);
  out << text;
  const auto& labels = alphabet().labels();
  for (const auto& [key, row] : head_) {
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      if (row(i) == 0) continue;
      out << "head " << join_ids(key) << ' ' << labels[static_cast<std::size_t>(i)] << ' ';
      write_double(out, row(i));
      out << "\n";
    }
  }
  out << "end\n";
}

MeaningHead train_meaning_head(const NGramModel& model, const std::vector<std::pair<Sentence, TokenId>>& labeled) {
  if (labeled.empty()) throw Error(ErrorCode::kInvalidArgument, "empty label set");
  MeaningHead head(model);
  const Alphabet& a = model.alphabet();
  for (const auto& [s, label] : labeled) {
    if (!is_complete(s, a.eos())) throw Error(ErrorCode::kInvalidArgument, "meaning undefined for incomplete sentences");
    head.add_label(left_pad(s, model.context_length(), a.pad()), label);
  }
  return head;
}

// ---------------------------------------------------------------------------
// Axis alignment

AxisAlignment axis_alignment(const Discriminant& model, const Corpus& corpus) {
  if (corpus.sentences.empty()) throw Error(ErrorCode::kInvalidArgument, "empty corpus");
  AxisAlignment out;
  const TokenId pad = model.alphabet().pad();
  for (const Sentence& s : corpus.sentences) {
    for (std::size_t t = 1; t < s.size(); ++t) {
      const Sentence window = left_pad(std::span(s).first(t), model.context_length(), pad);
      const Vector p = softmax(model.logits(window), 1.0);
      out.per_prefix.push_back(p(s[t]));
    }
  }
  double sum = 0;
  for (double v : out.per_prefix) sum += v;
  out.mean = out.per_prefix.empty() ? 0.0 : sum / static_cast<double>(out.per_prefix.size());
  return out;
}

// ---------------------------------------------------------------------------
// Model files

DiscriminantPtr read_model(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& msg) -> Error {
    return Error(ErrorCode::kParse, "model file line " + std::to_string(line_no) + ": " + msg);
  };
  auto next = [&](std::istringstream& fields, std::string& head) {
    while (std::getline(in, line)) {
      ++line_no;
      fields = std::istringstream(line);
      if (fields >> head) return true;
    }
    return false;
  };

  std::istringstream fields;
  std::string head;
  if (!next(fields, head) || head != "botlab-model") throw fail("missing 'botlab-model' header");
  int version = 0;
  fields >> version;
  if (version != 1) throw fail("unsupported model file version " + std::to_string(version));

  std::string kind, eos, pad;
  std::size_t context = 0, order = 0, ell = 0;
  double alpha = 0, sharpness = 8.0;
  std::vector<std::string> symbols, labels;
  std::vector<std::uint64_t> weights;
  struct Row {
    Sentence key;
    TokenId token;
    double value;
  };
  std::vector<Row> logit_rows, count_rows, head_rows;
  bool ended = false;

  while (!ended && next(fields, head)) {
    if (head == "kind") {
      fields >> kind;
    } else if (head == "context") {
      fields >> context;
    } else if (head == "symbols") {
      for (std::string s; fields >> s;) symbols.push_back(s);
    } else if (head == "eos") {
      fields >> eos;
    } else if (head == "pad") {
      fields >> pad;
    } else if (head == "labels") {
      for (std::string s; fields >> s;) labels.push_back(s);
    } else if (head == "order") {
      fields >> order;
    } else if (head == "alpha") {
      std::string v;
      fields >> v;
      alpha = std::stod(v);
    } else if (head == "ell") {
      fields >> ell;
    } else if (head == "weights") {
      for (std::uint64_t w; fields >> w;) weights.push_back(w);
    } else if (head == "sharpness") {
      std::string v;
      fields >> v;
      sharpness = std::stod(v);
    } else if (head == "logit" || head == "count" || head == "head") {
      std::string key, value;
      TokenId token = 0;
      if (!(fields >> key >> token >> value)) throw fail("malformed " + head + " row");
      Row row{split_ids(key), token, std::stod(value)};
      (head == "logit" ? logit_rows : head == "count" ? count_rows : head_rows).push_back(std::move(row));
    } else if (head == "end") {
      ended = true;
    } else {
      throw fail("unknown field '" + head + "'");
    }
  }
  if (!ended) throw fail("missing 'end'");
  if (symbols.empty()) throw fail("missing symbols");

  auto index_of = [&](const std::string& s) -> TokenId {
    auto it = std::find(symbols.begin(), symbols.end(), s);
    if (it == symbols.end()) throw fail("unknown symbol '" + s + "'");
    return static_cast<TokenId>(it - symbols.begin());
  };
  std::vector<TokenId> label_ids;
  for (const auto& l : labels) label_ids.push_back(index_of(l));
  const TokenId eos_id = index_of(eos);
  const TokenId pad_id = index_of(pad);

  if (kind == "modk") {
    const std::size_t k = symbols.size();
    ModKModel m(k, context, ell, weights, sharpness);
    if (!(m.alphabet() == Alphabet(symbols, eos_id, pad_id, label_ids))) {
      throw fail("mod-K models use the synthetic alphabet");
    }
    return std::make_shared<ModKModel>(std::move(m));
  }

  auto alphabet = std::make_shared<const Alphabet>(symbols, eos_id, pad_id, label_ids);
  if (kind == "tabular") {
    const std::size_t k = alphabet->size();
    const std::size_t rows = checked_pow(k, context);
    if (rows > kMaxTableRows) throw fail("tabular model too large");
    Matrix table = Matrix::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k), kNegInf);
    for (const auto& r : logit_rows) {
      if (r.key.size() != context || r.token >= k) throw fail("logit row does not match the header");
      table(static_cast<Eigen::Index>(window_index(r.key, k)), r.token) = r.value;
    }
    return std::make_shared<TabularModel>(alphabet, context, std::move(table));
  }
  if (kind == "ngram" || kind == "meaning-head") {
    NGramModel base(alphabet, context, order, alpha);
    for (const auto& r : count_rows) base.add_count(r.key, r.token, r.value);
    if (kind == "ngram") return std::make_shared<NGramModel>(std::move(base));
    auto headed = std::make_shared<MeaningHead>(std::move(base));
    for (const auto& r : head_rows) headed->add_label(r.key, r.token, r.value);
    return headed;
  }
  throw fail("unknown model kind '" + kind + "'");
}

DiscriminantPtr load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kNotFound, "cannot open model '" + path + "'");
  return read_model(in);
}

void save_model(const Discriminant& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write model '" + path + "'");
  model.write(out);
}

}  // namespace botlab
