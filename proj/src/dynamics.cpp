#include "botlab/dynamics.hpp"

#include "botlab/error.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace botlab {

// ---------------------------------------------------------------------------
// Temperature

Temperature Temperature::finite(double t) {
  if (!(t > 0) || std::isinf(t)) throw Error(ErrorCode::kInvalidArgument, "temperature must be positive and finite");
  return Temperature(Kind::kFinite, t);
}

Temperature Temperature::parse(const std::string& text) {
  if (text == "zero" || text == "ZERO" || text == "0") return zero();
  if (text == "inf" || text == "INF") return infinite();
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size()) throw Error(ErrorCode::kParse, "cannot parse temperature '" + text + "'");
  return finite(v);
}

std::string Temperature::to_string() const {
  switch (kind_) {
    case Kind::kZero: return "zero";
    case Kind::kInf: return "inf";
    case Kind::kFinite: break;
  }
  std::ostringstream out;
  out << std::setprecision(17) << value_;
  return out.str();
}

// ---------------------------------------------------------------------------
// Context

Context::Context(Sentence window, std::size_t clock) : window_(std::move(window)), clock_(clock) {
  if (window_.empty()) throw Error(ErrorCode::kInvalidArgument, "context window must not be empty");
}

Context Context::empty(std::size_t context_length, TokenId pad) { return Context(Sentence(context_length, pad)); }

Context Context::from_prompt(std::span<const TokenId> prompt, std::size_t context_length, TokenId pad) {
  if (prompt.size() > context_length) {
    throw Error(ErrorCode::kInvalidArgument, "prompt of " + std::to_string(prompt.size()) +
                                                 " tokens exceeds the context length " + std::to_string(context_length));
  }
  return Context(left_pad(prompt, context_length, pad), prompt.size());
}

Context Context::shifted(TokenId t) const {
  Sentence w(window_.begin() + 1, window_.end());
  w.push_back(t);
  return Context(std::move(w), clock_ + 1);
}

// ---------------------------------------------------------------------------
// Sampling

Vector next_token_distribution(const Discriminant& model, std::span<const TokenId> window, Temperature t) {
  const Vector logits = model.logits(window);
  const auto k = logits.size();
  if (static_cast<std::size_t>(k) != model.vocab_size()) {
    throw Error(ErrorCode::kValidation, "invalid discriminant output: wrong logit count");
  }
  Eigen::Index finite = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double l = logits(i);
    if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorCode::kValidation, "invalid discriminant output: logit " + std::to_string(i) + " is not finite");
    }
    if (std::isfinite(l)) ++finite;
  }
  if (finite == 0) throw Error(ErrorCode::kValidation, "invalid discriminant output: every logit is -inf");

  switch (t.kind()) {
    case Temperature::Kind::kZero: {
      Vector p = Vector::Zero(k);
      p(argmax_lowest(logits)) = 1.0;
      return p;
    }
    case Temperature::Kind::kInf: {
      Vector p(k);
      for (Eigen::Index i = 0; i < k; ++i) p(i) = std::isfinite(logits(i)) ? 1.0 / static_cast<double>(finite) : 0.0;
      return p;
    }
    case Temperature::Kind::kFinite: break;
  }
  return softmax(logits, t.value());
}

StepResult step(const Discriminant& model, const Context& ctx, Temperature t, Sampler& sampler) {
  const TokenId tok = sampler.draw(next_token_distribution(model, ctx.window(), t));
  return {ctx.shifted(tok), tok};
}

RolloutResult rollout(const Discriminant& model, std::span<const TokenId> init, Temperature t, Sampler& sampler,
                      std::size_t max_steps) {
  if (init.empty()) throw Error(ErrorCode::kInvalidArgument, "rollout needs a non-empty initial sentence");
  const TokenId eos = model.alphabet().eos();
  RolloutResult out;
  out.tokens.assign(init.begin(), init.end());
  Context ctx(left_pad(init, model.context_length(), model.alphabet().pad()), init.size());
  while (out.steps < max_steps) {
    auto [next, tok] = step(model, ctx, t, sampler);
    ctx = std::move(next);
    out.tokens.push_back(tok);
    ++out.steps;
    if (tok == eos) {
      out.halted = true;
      break;
    }
  }
  out.window = ctx.window();
  return out;
}

// ---------------------------------------------------------------------------
// Sentence probability

FirstTokenPrior::FirstTokenPrior(Vector p) : p_(std::move(p)) {
  if (p_.size() == 0 || (p_.array() < 0).any() || std::abs(p_.sum() - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "first-token prior must be a probability vector");
  }
}

FirstTokenPrior FirstTokenPrior::uniform_words(const Alphabet& a) {
  const auto words = a.words();
  if (words.empty()) throw Error(ErrorCode::kInvalidArgument, "alphabet has no ordinary tokens");
  Vector p = Vector::Zero(static_cast<Eigen::Index>(a.size()));
  for (TokenId w : words) p(w) = 1.0 / static_cast<double>(words.size());
  return FirstTokenPrior(std::move(p));
}

FirstTokenPrior FirstTokenPrior::uniform_all(const Alphabet& a) {
  const auto k = static_cast<Eigen::Index>(a.size());
  return FirstTokenPrior(Vector::Constant(k, 1.0 / static_cast<double>(k)));
}

FirstTokenPrior FirstTokenPrior::empirical(const Corpus& c) {
  if (c.sentences.empty()) throw Error(ErrorCode::kInvalidArgument, "empty corpus");
  Vector p = Vector::Zero(static_cast<Eigen::Index>(c.alphabet->size()));
  for (const auto& s : c.sentences) p(s.front()) += 1.0;
  return FirstTokenPrior(p / p.sum());
}

double sentence_probability(const Discriminant& model, const Sentence& s, Temperature t,
                            const FirstTokenPrior& prior) {
  const Alphabet& a = model.alphabet();
  if (!is_complete(s, a.eos())) throw Error(ErrorCode::kInvalidArgument, "sentence probability needs a complete sentence");
  if (s.size() < 2) throw Error(ErrorCode::kInvalidArgument, "sentence must have at least two tokens");
  if (static_cast<std::size_t>(prior.probabilities().size()) != a.size()) {
    throw Error(ErrorCode::kInvalidArgument, "prior does not match the alphabet");
  }
  double p = prior(s.front());
  for (std::size_t i = 1; i < s.size() && p > 0; ++i) {
    const Sentence window = left_pad(std::span(s).first(i), model.context_length(), a.pad());
    p *= next_token_distribution(model, window, t)(s[i]);
  }
  return p;
}

ConversationStep conversation_step(const Discriminant& model, const Context& ctx, TokenId user_input, Temperature t,
                                   Sampler& sampler) {
  if (user_input >= model.vocab_size()) throw Error(ErrorCode::kInvalidArgument, "user token out of range");
  auto [after_bot, bot] = step(model, ctx, t, sampler);
  return {after_bot.shifted(user_input), bot};
}

// ---------------------------------------------------------------------------
// Transcripts

std::string_view to_string(Speaker s) {
  switch (s) {
    case Speaker::kUser: return "user";
    case Speaker::kBot: return "bot";
    case Speaker::kSilent: return "silent";
    case Speaker::kCensored: return "censored";
  }
  return "?";
}

Sentence with_prompt(std::span<const TokenId> window, std::span<const TokenId> v) {
  Sentence joined(window.begin(), window.end());
  joined.insert(joined.end(), v.begin(), v.end());
  return Sentence(joined.end() - static_cast<std::ptrdiff_t>(window.size()), joined.end());
}

namespace {

TokenId shifted_token(const Turn& turn, TokenId pad) {
  return turn.speaker == Speaker::kCensored || turn.speaker == Speaker::kSilent ? pad : turn.token;
}

}  // namespace

std::vector<Sentence> Transcript::contexts(TokenId pad) const {
  std::vector<Sentence> out;
  if (init.empty()) return out;
  Context ctx(init);
  for (const auto& turn : turns) {
    ctx = ctx.shifted(shifted_token(turn, pad));
    out.push_back(ctx.window());
  }
  return out;
}

Context replay(const Discriminant& model, const Transcript& transcript) {
  if (transcript.init.size() != model.context_length()) {
    throw Error(ErrorCode::kValidation, "transcript context length does not match the model");
  }
  Sampler sampler(transcript.seed);
  const TokenId pad = model.alphabet().pad();
  Context ctx(transcript.init);
  for (std::size_t k = 0; k < transcript.turns.size(); ++k) {
    const Turn& turn = transcript.turns[k];
    if (turn.speaker == Speaker::kBot || turn.speaker == Speaker::kCensored) {
      const Sentence seen = with_prompt(ctx.window(), turn.intervention);
      const TokenId b = sampler.draw(next_token_distribution(model, seen, transcript.temperature));
      if (b != turn.token) {
        throw Error(ErrorCode::kValidation, "replay diverges at turn " + std::to_string(k) + ": recorded '" +
                                                model.alphabet().symbol(turn.token) + "', sampled '" +
                                                model.alphabet().symbol(b) + "'");
      }
    }
    ctx = ctx.shifted(shifted_token(turn, pad));
  }
  return ctx;
}

void write_transcript(std::ostream& out, const Transcript& t, const Alphabet& a) {
  out << "botlab-transcript 1\n";
  out << "seed " << t.seed << "\n";
  out << "temperature " << t.temperature.to_string() << "\n";
  out << "model " << t.model_hash << "\n";
  out << "context " << t.init.size() << "\n";
  out << "init " << a.render(t.init) << "\n";
  for (std::size_t k = 0; k < t.turns.size(); ++k) {
    const Turn& turn = t.turns[k];
    out << k << ' ' << to_string(turn.speaker) << ' ' << a.symbol(turn.token);
    if (!turn.intervention.empty()) {
      out << " via";
      for (TokenId v : turn.intervention) out << ' ' << a.symbol(v);
    }
    out << "\n";
  }
}

Transcript read_transcript(std::istream& in, const Alphabet& a) {
  Transcript t;
  std::string line;
  std::size_t line_no = 0;
  std::size_t context = 0;
  auto fail = [&](const std::string& msg) {
    return Error(ErrorCode::kParse, "transcript line " + std::to_string(line_no) + ": " + msg);
  };
  auto token = [&](const std::string& sym) {
    auto id = a.find(sym);
    if (!id) throw fail("unknown token '" + sym + "'");
    return *id;
  };
  if (!std::getline(in, line) || line.rfind("botlab-transcript 1", 0) != 0) throw fail("missing header");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;
    if (head == "seed") {
      fields >> t.seed;
    } else if (head == "temperature") {
      std::string v;
      fields >> v;
      t.temperature = Temperature::parse(v);
    } else if (head == "model") {
      fields >> t.model_hash;
    } else if (head == "context") {
      fields >> context;
    } else if (head == "init") {
      for (std::string s; fields >> s;) t.init.push_back(token(s));
    } else {
      std::size_t k = 0;
      try {
        k = std::stoul(head);
      } catch (const std::exception&) {
        throw fail("unexpected field '" + head + "'");
      }
      if (k != t.turns.size()) throw fail("turn index out of order");
      std::string speaker, sym;
      if (!(fields >> speaker >> sym)) throw fail("malformed turn");
      Turn turn{Speaker::kUser, token(sym), {}};
      if (speaker == "bot") turn.speaker = Speaker::kBot;
      else if (speaker == "silent") turn.speaker = Speaker::kSilent;
      else if (speaker == "censored") turn.speaker = Speaker::kCensored;
      else if (speaker != "user") throw fail("unknown speaker '" + speaker + "'");
      std::string via;
      if (fields >> via) {
        if (via != "via") throw fail("expected 'via'");
        for (std::string s; fields >> s;) turn.intervention.push_back(token(s));
      }
      t.turns.push_back(std::move(turn));
    }
  }
  if (t.init.size() != context) throw fail("init window does not have the declared length");
  return t;
}

// ---------------------------------------------------------------------------
// Conversation

Conversation::Conversation(DiscriminantPtr model, Context init, Temperature t, std::uint64_t seed)
    : model_(std::move(model)), context_(std::move(init)), sampler_(seed) {
  if (context_.size() != model_->context_length()) {
    throw Error(ErrorCode::kInvalidArgument, "initial context does not match the model's context length");
  }
  transcript_.seed = seed;
  transcript_.temperature = t;
  transcript_.model_hash = model_->hash();
  transcript_.init = context_.window();
}

const Turn& Conversation::bot_turn(std::span<const TokenId> intervention, const OutputFilter& deny) {
  for (TokenId v : intervention) {
    if (v >= model_->vocab_size()) throw Error(ErrorCode::kInvalidArgument, "intervention token out of range");
  }
  const Sentence seen = with_prompt(context_.window(), intervention);
  const TokenId b = sampler_.draw(next_token_distribution(*model_, seen, transcript_.temperature));
  Turn turn{Speaker::kBot, b, Sentence(intervention.begin(), intervention.end())};
  Context next = context_.shifted(b);
  if (deny && deny(next.window())) {
    turn.speaker = Speaker::kCensored;
    next = context_.shifted(model_->alphabet().pad());
  }
  context_ = std::move(next);
  transcript_.turns.push_back(std::move(turn));
  return transcript_.turns.back();
}

void Conversation::silent_turn() {
  const TokenId pad = model_->alphabet().pad();
  context_ = context_.shifted(pad);
  transcript_.turns.push_back({Speaker::kSilent, pad, {}});
}

void Conversation::user_turn(TokenId u) {
  if (u >= model_->vocab_size()) throw Error(ErrorCode::kInvalidArgument, "user token out of range");
  context_ = context_.shifted(u);
  transcript_.turns.push_back({Speaker::kUser, u, {}});
}

// ---------------------------------------------------------------------------
// Attention

double attention_sensitivity(const Discriminant& model, std::span<const TokenId> window, std::size_t i,
                             Temperature t) {
  if (i < 1 || i > window.size()) {
    throw Error(ErrorCode::kInvalidArgument, "position must lie in 1.." + std::to_string(window.size()));
  }
  const Vector base = next_token_distribution(model, window, t);
  Sentence probe(window.begin(), window.end());
  double worst = 0;
  for (TokenId a = 0; a < model.vocab_size(); ++a) {
    if (a == window[i - 1]) continue;
    probe[i - 1] = a;
    worst = std::max(worst, total_variation(base, next_token_distribution(model, probe, t)));
  }
  return worst;
}

bool is_attentive(double sensitivity, double tau) { return sensitivity > tau; }

}  // namespace botlab
