#pragma once

// Meaning as an attributed equivalence class: classifiers built on a
// discriminant, quotients of sentence lists, the well-trained check and
// annotation entropy.

#include "botlab/dynamics.hpp"
#include "botlab/models.hpp"
#include "botlab/token_system.hpp"

#include <optional>
#include <string>
#include <vector>

namespace botlab {

struct MeaningClass {
  std::size_t id = 0;
  std::string name;

  bool operator==(const MeaningClass&) const = default;
};

/// Assigns classes to complete sentences through a discriminant.
///
/// argmax:    the logits after the sentence, restricted to a set of class
///            tokens (the label tokens by default), lowest id on ties.
/// prototype: argmax_k <phi(x), phi(x^k)> where phi is the T = 1 next-token
///            law after the sentence.
/// threshold: every class whose score reaches tau; scores are prototype
///            inner products when prototypes are given, otherwise class-token
///            probabilities. May return zero or several classes.
class MeaningClassifier {
 public:
  enum class Mode { kArgmax, kPrototype, kThreshold };

  static MeaningClassifier argmax(DiscriminantPtr model, std::vector<TokenId> class_tokens = {});
  static MeaningClassifier prototypes(DiscriminantPtr model, std::vector<Sentence> prototypes,
                                      std::vector<std::string> names = {});
  static MeaningClassifier threshold(DiscriminantPtr model, double tau, std::vector<Sentence> prototypes = {},
                                     std::vector<std::string> names = {});

  Mode mode() const { return mode_; }
  const Discriminant& model() const { return *model_; }
  std::size_t num_classes() const { return names_.size(); }
  const std::string& class_name(std::size_t id) const { return names_.at(id); }
  /// Short label for reports, naming the mode and the model.
  std::string describe() const;

  /// Per-class scores. Leading pad tokens are ignored; the remaining
  /// sentence must be complete.
  Vector scores(const Sentence& s) const;

  /// Single class (argmax and prototype modes).
  MeaningClass classify(const Sentence& s) const;
  /// Class set (threshold mode; a singleton in the other modes).
  std::vector<MeaningClass> classify_set(const Sentence& s) const;

 private:
  MeaningClassifier(Mode mode, DiscriminantPtr model);

  Vector phi(const Sentence& complete) const;

  Mode mode_;
  DiscriminantPtr model_;
  std::vector<TokenId> class_tokens_;
  std::vector<Vector> prototype_phi_;
  std::vector<std::string> names_;
  double tau_ = 0;
};

bool equivalent(const MeaningClassifier& mc, const Sentence& s1, const Sentence& s2);

struct QuotientCell {
  MeaningClass cls;
  std::vector<Sentence> members;
};

/// Fibers of classify, in class-id order; input order is kept within cells.
std::vector<QuotientCell> quotient(const MeaningClassifier& mc, const std::vector<Sentence>& sentences);

struct WellTrainedReport {
  bool pass = true;
  double theta = 0;
  std::size_t max_len = 0;
  /// Complete sentences of length <= max_len with P >= theta.
  std::size_t high_probability = 0;
  /// Members of that set outside the meaningful set, most probable first.
  std::vector<std::pair<Sentence, double>> violations;
};

struct WellTrainedOptions {
  Temperature temperature = Temperature::finite(1.0);
  std::optional<FirstTokenPrior> prior;
  /// Upper bound on K^max_len.
  std::size_t budget = std::size_t{1} << 24;
};

/// Enumerates every complete sentence of 2..max_len tokens, keeps those
/// with probability >= theta, and passes iff all of them are in `ms`.
WellTrainedReport well_trained_check(const Discriminant& model, const MeaningfulSet& ms, double theta,
                                     std::size_t max_len, const WellTrainedOptions& options = {});

struct EntropyReport {
  std::vector<double> per_example;
  double mean = 0;
  /// Sample standard deviation (zero for a single example).
  double sd = 0;
};

/// Shannon entropy in bits of each example's vote distribution.
EntropyReport annotation_entropy(const std::vector<std::vector<double>>& votes);
EntropyReport annotation_entropy(const std::vector<LabeledExample>& labeled);

}  // namespace botlab
