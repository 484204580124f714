// Batch front end: model training, closure and well-trained checks,
// rollouts, reachability, certificates, plans, games, annotation entropy
// and the HTTP service.

#include "botlab/error.hpp"
#include "botlab/service.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace botlab;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string model;
  std::string out = "-";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--model", c.model, "model file");
  cmd->add_option("--out", c.out, "output file ('-' for stdout)");
}

template <typename F>
void emit(const std::string& path, F&& write) {
  if (path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path);
  write(out);
}

DiscriminantPtr need_model(const Common& c) {
  if (c.model.empty()) throw Error(ErrorCode::kInvalidArgument, "--model is required");
  return load_model(c.model);
}

AlphabetPtr need_alphabet(const std::string& path) {
  if (path.empty()) throw Error(ErrorCode::kInvalidArgument, "--alphabet is required");
  return std::make_shared<const Alphabet>(load_alphabet(path));
}

std::vector<std::uint64_t> parse_weights(const std::string& text) {
  std::vector<std::uint64_t> w;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) w.push_back(std::stoull(item));
  return w;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"botlab: toy chatbots as controlled dynamical systems"};
  app.require_subcommand(1);

  // train
  Common train_c;
  std::string kind = "ngram", alphabet_path, corpus_path, labeled_path, weights = "";
  std::size_t order = 1, context = 4, k = 5, ell = 4;
  double alpha = 0.0, support = 1.0;
  bool deterministic = false;
  auto* train = app.add_subcommand("train", "train or construct a model file");
  add_common(train, train_c);
  train->add_option("--kind", kind, "ngram | head | modk | tabular")->check(CLI::IsMember({"ngram", "head", "modk", "tabular"}));
  train->add_option("--alphabet", alphabet_path);
  train->add_option("--corpus", corpus_path);
  train->add_option("--labeled", labeled_path, "labeled sentences for --kind head");
  train->add_option("--order", order);
  train->add_option("--alpha", alpha);
  train->add_option("--context", context);
  train->add_option("--k", k, "vocabulary size for synthetic alphabets");
  train->add_option("--ell", ell);
  train->add_option("--weights", weights, "comma-separated mod-K weights");
  train->add_option("--support", support);
  train->add_flag("--deterministic", deterministic);

  // sigma
  Common sigma_c;
  std::size_t max_len = 4;
  double theta = 1e-3;
  auto* sigma = app.add_subcommand("sigma", "meaningful-set closure; with --model, the well-trained check");
  add_common(sigma, sigma_c);
  sigma->add_option("--alphabet", alphabet_path)->required();
  sigma->add_option("--corpus", corpus_path)->required();
  sigma->add_option("--max-len", max_len);
  sigma->add_option("--theta", theta);

  // rollout
  Common roll_c;
  std::string prompt, temperature = "1";
  std::size_t max_steps = 16, n = 1;
  auto* roll = app.add_subcommand("rollout", "sample continuations");
  add_common(roll, roll_c);
  roll->add_option("--prompt", prompt);
  roll->add_option("--temperature", temperature);
  roll->add_option("--max-steps", max_steps);
  roll->add_option("-n", n);

  // reach
  Common reach_c;
  std::string origin, method = "exact";
  std::size_t horizon = 4, samples = 10000;
  auto* reach = app.add_subcommand("reach", "reachable complete sentences");
  add_common(reach, reach_c);
  reach->add_option("--origin", origin)->required();
  reach->add_option("--horizon", horizon);
  reach->add_option("--theta", theta);
  reach->add_option("--temperature", temperature);
  reach->add_option("--method", method)->check(CLI::IsMember({"exact", "mc", "prompt"}));
  reach->add_option("--samples", samples);

  // certify
  Common cert_c;
  int theorem = 2;
  std::size_t fixings = 0;
  auto* cert = app.add_subcommand("certify", "restriction-map certificate on the deterministic skeleton");
  add_common(cert, cert_c);
  cert->add_option("--ell", ell);
  cert->add_option("--theorem", theorem)->check(CLI::IsMember({1, 2}));
  cert->add_option("--fixings", fixings, "sample this many fixings instead of all");

  // synthesize
  Common syn_c;
  std::string start, target;
  bool bfs = false;
  auto* syn = app.add_subcommand("synthesize", "input plan driving the last l tokens to a target");
  add_common(syn, syn_c);
  syn->add_option("--start", start)->required();
  syn->add_option("--target", target)->required();
  syn->add_flag("--bfs", bfs, "shortest plan by breadth-first search");

  // game
  Common game_c;
  std::string spec_path, window;
  bool compare = false;
  auto* game = app.add_subcommand("game", "adversary value iteration and absorption estimates");
  add_common(game, game_c);
  game->add_option("--spec", spec_path)->required();
  game->add_option("--horizon", horizon);
  game->add_option("--temperature", temperature);
  game->add_option("--start", window, "estimate absorption from this window");
  game->add_option("--samples", samples);
  game->add_flag("--compare", compare, "tau* under both censoring scenarios");

  // entropy
  Common ent_c;
  auto* ent = app.add_subcommand("entropy", "annotation entropy of labeled data");
  add_common(ent, ent_c);
  ent->add_option("--alphabet", alphabet_path)->required();
  ent->add_option("--labeled", labeled_path)->required();

  // serve
  Common serve_c;
  std::vector<std::string> extra_models;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t workers = 2;
  auto* srv = app.add_subcommand("serve", "HTTP session service");
  add_common(srv, serve_c);
  srv->add_option("--models", extra_models, "more model files, registered by file stem");
  srv->add_option("--host", host);
  srv->add_option("--port", port);
  srv->add_option("--workers", workers);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      std::shared_ptr<Discriminant> model;
      if (kind == "modk") {
        model = std::make_shared<ModKModel>(make_modk(k, context, ell, parse_weights(weights)));
      } else if (kind == "tabular") {
        AlphabetPtr a = alphabet_path.empty() ? std::make_shared<const Alphabet>(Alphabet::synthetic(k))
                                              : need_alphabet(alphabet_path);
        model = std::make_shared<TabularModel>(
            random_tabular(a, context, train_c.seed, {.support = support, .deterministic = deterministic}));
      } else {
        AlphabetPtr a = need_alphabet(alphabet_path);
        NGramModel ng = train_ngram(load_corpus(corpus_path, a), order, alpha, context);
        if (kind == "ngram") {
          model = std::make_shared<NGramModel>(std::move(ng));
        } else {
          std::vector<std::pair<Sentence, TokenId>> labeled;
          for (const auto& ex : load_labeled(labeled_path, *a)) {
            const auto id = a->find(ex.majority());
            if (!id) throw Error(ErrorCode::kValidation, "label '" + ex.majority() + "' is not in the alphabet");
            labeled.emplace_back(ex.sentence, *id);
          }
          model = std::make_shared<MeaningHead>(train_meaning_head(ng, labeled));
        }
      }
      emit(train_c.out, [&](std::ostream& o) { model->write(o); });
    } else if (*sigma) {
      AlphabetPtr a = need_alphabet(alphabet_path);
      const MeaningfulSet ms = build_sigma(load_corpus(corpus_path, a), max_len);
      emit(sigma_c.out, [&](std::ostream& o) {
        if (sigma_c.model.empty()) {
          for (const auto& s : ms.sorted_members()) o << a->render(s) << "\n";
          return;
        }
        const auto model = need_model(sigma_c);
        const auto r = well_trained_check(*model, ms, theta, max_len);
        o << "# meaningful " << ms.size() << "\n# theta " << theta << "\n# max_len " << max_len << "\n";
        o << "# high_probability " << r.high_probability << "\n# verdict " << (r.pass ? "pass" : "fail") << "\n";
        o << std::setprecision(17);
        for (const auto& [s, p] : r.violations) o << model->alphabet().render(s) << "\t" << p << "\n";
      });
    } else if (*roll) {
      const auto model = need_model(roll_c);
      const Sentence init = parse_sentence(prompt, model->alphabet());
      Sampler sampler(roll_c.seed);
      emit(roll_c.out, [&](std::ostream& o) {
        for (std::size_t i = 0; i < n; ++i) {
          const auto r = rollout(*model, init, Temperature::parse(temperature), sampler, max_steps);
          o << model->alphabet().render(r.tokens) << (r.halted ? "" : "\t(open)") << "\n";
        }
      });
    } else if (*reach) {
      const auto model = need_model(reach_c);
      const Sentence o0 = parse_sentence(origin, model->alphabet());
      const ReachOptions opts{.temperature = Temperature::parse(temperature)};
      const ReachReport r = method == "mc"       ? reach_mc(*model, o0, horizon, theta, samples, reach_c.seed, opts)
                            : method == "prompt" ? prompt_reach(*model, o0, horizon, theta, opts)
                                                 : reach_exact(*model, o0, horizon, theta, opts);
      emit(reach_c.out, [&](std::ostream& o) { write_report(o, r, model->alphabet()); });
    } else if (*cert) {
      const auto model = need_model(cert_c);
      const Skeleton s(*model);
      const std::optional<Fixings> fx =
          fixings ? std::optional(Fixings::sample(fixings, cert_c.seed)) : std::nullopt;
      const Certificate c = theorem == 1 ? check_thm1(s, ell, fx.value_or(Fixings::all())) : check_thm2(s, ell, fx);
      emit(cert_c.out, [&](std::ostream& o) { write_certificate(o, c, model->alphabet()); });
      return c.verdict ? 0 : 1;
    } else if (*syn) {
      const auto model = need_model(syn_c);
      const Skeleton s(*model);
      const Sentence st = parse_sentence(start, model->alphabet());
      const Sentence tg = parse_sentence(target, model->alphabet());
      std::optional<ControlPlan> plan = bfs ? bfs_oracle(s, st, tg, 64) : std::optional(synthesize(s, st, tg));
      if (!plan) throw Error(ErrorCode::kHypothesisViolated, "target unreachable within 64 steps");
      emit(syn_c.out, [&](std::ostream& o) { write_plan(o, *plan, model->alphabet()); });
    } else if (*game) {
      const auto model = need_model(game_c);
      const GameSpec spec = load_game_spec(spec_path, model->alphabet_ptr());
      const Temperature t = Temperature::parse(temperature);
      const GameModel gm(*model, spec.toxic, t);
      emit(game_c.out, [&](std::ostream& o) {
        if (compare) {
          const ToxicSpec other =
              spec.toxic.with_scenario(spec.toxic.scenario() == Scenario::kPhi1 ? Scenario::kPhi2 : Scenario::kPhi1);
          std::vector<Sentence> starts;
          for (std::size_t x = 0; x < gm.states(); ++x) starts.push_back(gm.decode(x));
          const auto& [s1, s2] = spec.toxic.scenario() == Scenario::kPhi1 ? std::pair(&spec.toxic, &other)
                                                                           : std::pair(&other, &spec.toxic);
          const auto r = compare_scenarios(*model, *s1, *s2, starts, horizon, t);
          o << "# violations " << r.violations << "\n";
          for (const auto& row : r.rows) {
            o << model->alphabet().render(row.start) << "\t" << row.tau1 << "\t" << row.tau2 << "\n";
          }
        } else if (!window.empty()) {
          const Sentence w = parse_sentence(window, model->alphabet());
          const auto est = absorption_probability(gm, w, horizon, samples, game_c.seed);
          o << std::setprecision(17) << "probability " << est.probability << "\nci " << est.ci.low << " "
            << est.ci.high << "\nabsorbed " << est.absorbed << "\ntrials " << est.trials << "\n";
        } else {
          write_game_value(o, adversary_value_iteration(gm, horizon), gm, model->alphabet());
        }
      });
    } else if (*ent) {
      AlphabetPtr a = need_alphabet(alphabet_path);
      const auto labeled = load_labeled(labeled_path, *a);
      const auto r = annotation_entropy(labeled);
      emit(ent_c.out, [&](std::ostream& o) {
        o << std::setprecision(17) << "# mean " << r.mean << "\n# sd " << r.sd << "\n";
        for (std::size_t i = 0; i < labeled.size(); ++i) {
          o << a->render(labeled[i].sentence) << "\t" << r.per_example[i] << "\n";
        }
      });
    } else if (*srv) {
      service::Service svc(workers);
      if (!serve_c.model.empty()) extra_models.insert(extra_models.begin(), serve_c.model);
      for (const auto& path : extra_models) {
        svc.models().add(std::filesystem::path(path).stem().string(), load_model(path));
      }
      std::cerr << "serving " << svc.models().ids().size() << " model(s) on " << host << ":" << port << "\n";
      service::serve(svc, host, port);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
