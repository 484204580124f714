#include "botlab/meaning.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace botlab {

MeaningClassifier::MeaningClassifier(Mode mode, DiscriminantPtr model) : mode_(mode), model_(std::move(model)) {
  if (!model_) throw Error(ErrorCode::kInvalidArgument, "classifier needs a model");
}

MeaningClassifier MeaningClassifier::argmax(DiscriminantPtr model, std::vector<TokenId> class_tokens) {
  MeaningClassifier mc(Mode::kArgmax, std::move(model));
  const Alphabet& a = mc.model_->alphabet();
  if (class_tokens.empty()) class_tokens = a.labels();
  if (class_tokens.empty()) {
    for (TokenId t = 0; t < a.size(); ++t) class_tokens.push_back(t);
  }
  for (TokenId t : class_tokens) {
    if (t >= a.size()) throw Error(ErrorCode::kInvalidArgument, "class token out of range");
    mc.names_.push_back(a.symbol(t));
  }
  mc.class_tokens_ = std::move(class_tokens);
  return mc;
}

MeaningClassifier MeaningClassifier::prototypes(DiscriminantPtr model, std::vector<Sentence> prototypes,
                                                std::vector<std::string> names) {
  MeaningClassifier mc(Mode::kPrototype, std::move(model));
  if (prototypes.empty()) throw Error(ErrorCode::kInvalidArgument, "prototype mode needs at least one prototype");
  if (!names.empty() && names.size() != prototypes.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one name per prototype");
  }
  for (std::size_t i = 0; i < prototypes.size(); ++i) {
    mc.prototype_phi_.push_back(mc.phi(strip_padding(prototypes[i], mc.model_->alphabet().pad())));
    mc.names_.push_back(names.empty() ? mc.model_->alphabet().render(prototypes[i]) : names[i]);
  }
  return mc;
}

MeaningClassifier MeaningClassifier::threshold(DiscriminantPtr model, double tau, std::vector<Sentence> prototypes,
                                               std::vector<std::string> names) {
  MeaningClassifier mc = prototypes.empty() ? argmax(std::move(model))
                                            : MeaningClassifier::prototypes(std::move(model), std::move(prototypes),
                                                                            std::move(names));
  mc.mode_ = Mode::kThreshold;
  mc.tau_ = tau;
  return mc;
}

std::string MeaningClassifier::describe() const {
  std::string mode = mode_ == Mode::kArgmax ? "argmax" : mode_ == Mode::kPrototype ? "prototype" : "threshold";
  return mode + " over " + model_->kind() + " " + model_->hash();
}

Vector MeaningClassifier::phi(const Sentence& complete) const {
  const Alphabet& a = model_->alphabet();
  if (!is_complete(complete, a.eos())) {
    throw Error(ErrorCode::kInvalidArgument, "meaning undefined for incomplete sentences");
  }
  const Sentence window = left_pad(complete, model_->context_length(), a.pad());
  return next_token_distribution(*model_, window, Temperature::finite(1.0));
}

Vector MeaningClassifier::scores(const Sentence& s) const {
  const Alphabet& a = model_->alphabet();
  const Sentence core = strip_padding(s, a.pad());
  if (!is_complete(core, a.eos())) {
    throw Error(ErrorCode::kInvalidArgument, "meaning undefined for incomplete sentences");
  }
  Vector out(static_cast<Eigen::Index>(names_.size()));
  if (!prototype_phi_.empty()) {
    const Vector p = phi(core);
    for (std::size_t k = 0; k < prototype_phi_.size(); ++k) out(static_cast<Eigen::Index>(k)) = p.dot(prototype_phi_[k]);
    return out;
  }
  const Sentence window = left_pad(core, model_->context_length(), a.pad());
  if (mode_ == Mode::kThreshold) {
    const Vector p = next_token_distribution(*model_, window, Temperature::finite(1.0));
    for (std::size_t k = 0; k < class_tokens_.size(); ++k) out(static_cast<Eigen::Index>(k)) = p(class_tokens_[k]);
    return out;
  }
  const Vector logits = model_->logits(window);
  for (std::size_t k = 0; k < class_tokens_.size(); ++k) out(static_cast<Eigen::Index>(k)) = logits(class_tokens_[k]);
  return out;
}

MeaningClass MeaningClassifier::classify(const Sentence& s) const {
  if (mode_ == Mode::kThreshold) {
    throw Error(ErrorCode::kInvalidArgument, "threshold classifiers return class sets; use classify_set");
  }
  const auto id = static_cast<std::size_t>(argmax_lowest(scores(s)));
  return {id, names_[id]};
}

std::vector<MeaningClass> MeaningClassifier::classify_set(const Sentence& s) const {
  if (mode_ != Mode::kThreshold) return {classify(s)};
  const Vector sc = scores(s);
  std::vector<MeaningClass> out;
  for (Eigen::Index k = 0; k < sc.size(); ++k) {
    if (sc(k) >= tau_) out.push_back({static_cast<std::size_t>(k), names_[static_cast<std::size_t>(k)]});
  }
  return out;
}

bool equivalent(const MeaningClassifier& mc, const Sentence& s1, const Sentence& s2) {
  return mc.classify(s1).id == mc.classify(s2).id;
}

std::vector<QuotientCell> quotient(const MeaningClassifier& mc, const std::vector<Sentence>& sentences) {
  std::map<std::size_t, QuotientCell> cells;
  for (const auto& s : sentences) {
    const MeaningClass c = mc.classify(s);
    auto& cell = cells[c.id];
    cell.cls = c;
    cell.members.push_back(s);
  }
  std::vector<QuotientCell> out;
  for (auto& [id, cell] : cells) out.push_back(std::move(cell));
  return out;
}

// ---------------------------------------------------------------------------
// Well-trained check

namespace {

struct Enumerator {
  const Discriminant& model;
  const MeaningfulSet& ms;
  const WellTrainedOptions& options;
  const FirstTokenPrior& prior;
  double theta;
  std::size_t max_len;
  WellTrainedReport& report;
  Sentence prefix;

  // Extends `prefix` (probability p so far). Factors are at most one, so a
  // prefix already below theta cannot yield a reported sentence.
  void visit(double p) {
    if (p <= 0 || p < theta) return;
    const Alphabet& a = model.alphabet();
    const Sentence window = left_pad(prefix, model.context_length(), a.pad());
    const Vector next = next_token_distribution(model, window, options.temperature);
    for (TokenId t = 0; t < a.size(); ++t) {
      const double q = p * next(t);
      if (t == a.eos()) {
        if (q >= theta && q > 0) {
          prefix.push_back(t);
          ++report.high_probability;
          if (!ms.contains(prefix)) report.violations.emplace_back(prefix, q);
          prefix.pop_back();
        }
        continue;
      }
      if (prefix.size() + 2 > max_len) continue;
      prefix.push_back(t);
      visit(q);
      prefix.pop_back();
    }
  }
};

}  // namespace

WellTrainedReport well_trained_check(const Discriminant& model, const MeaningfulSet& ms, double theta,
                                     std::size_t max_len, const WellTrainedOptions& options) {
  if (!(theta > 0)) throw Error(ErrorCode::kInvalidArgument, "theta must be positive");
  const std::size_t k = model.vocab_size();
  const std::size_t size = checked_pow(k, max_len);
  if (size > options.budget) {
    throw Error(ErrorCode::kBudgetExceeded, "enumeration of K^max_len = " + std::to_string(k) + "^" +
                                                std::to_string(max_len) + " sentences exceeds the budget of " +
                                                std::to_string(options.budget));
  }
  WellTrainedReport report;
  report.theta = theta;
  report.max_len = max_len;
  const FirstTokenPrior prior = options.prior ? *options.prior : FirstTokenPrior::uniform_words(model.alphabet());
  Enumerator e{model, ms, options, prior, theta, max_len, report, {}};
  if (max_len >= 2) {
    for (TokenId first = 0; first < k; ++first) {
      if (first == model.alphabet().eos()) continue;
      e.prefix = {first};
      e.visit(prior(first));
    }
  }
  std::stable_sort(report.violations.begin(), report.violations.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  report.pass = report.violations.empty();
  return report;
}

// ---------------------------------------------------------------------------
// Annotation entropy

EntropyReport annotation_entropy(const std::vector<std::vector<double>>& votes) {
  EntropyReport out;
  for (std::size_t i = 0; i < votes.size(); ++i) {
    Vector v = Eigen::Map<const Vector>(votes[i].data(), static_cast<Eigen::Index>(votes[i].size()));
    if ((v.array() < 0).any()) throw Error(ErrorCode::kInvalidArgument, "vote counts must be non-negative");
    const double total = v.sum();
    if (!(total > 0)) {
      throw Error(ErrorCode::kInvalidArgument, "example " + std::to_string(i + 1) + " has zero total votes");
    }
    out.per_example.push_back(entropy_bits(v / total));
  }
  const double n = static_cast<double>(out.per_example.size());
  if (out.per_example.empty()) return out;
  for (double h : out.per_example) out.mean += h / n;
  if (out.per_example.size() > 1) {
    double ss = 0;
    for (double h : out.per_example) ss += (h - out.mean) * (h - out.mean);
    out.sd = std::sqrt(ss / (n - 1));
  }
  return out;
}

EntropyReport annotation_entropy(const std::vector<LabeledExample>& labeled) {
  std::vector<std::vector<double>> votes;
  for (const auto& ex : labeled) {
    std::vector<double> v;
    for (const auto& [label, count] : ex.votes) v.push_back(static_cast<double>(count));
    votes.push_back(std::move(v));
  }
  return annotation_entropy(votes);
}

}  // namespace botlab
