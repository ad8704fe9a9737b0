#include "usersim/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "usersim/checkpoint.hpp"
#include "usersim/parallel.hpp"

namespace usersim {

using nlohmann::ordered_json;

namespace {

// Behavior token paired with each profile trait.
constexpr std::array<Token, kProfileDim> kTraitTokens = {
    tok::kEndRequest, tok::kClarify,   tok::kDisagree, tok::kDistress,
    tok::kNegAffect,  tok::kPosAffect, tok::kAgree,    tok::kInsight};

// A topic whose summary weight is below this counts as off-summary.
constexpr double kOffSummary = 0.3;

bool has(std::span<const Token> ts, Token t) { return std::find(ts.begin(), ts.end(), t) != ts.end(); }

double ratio(int num, int den) { return den > 0 ? static_cast<double>(num) / den : 0.0; }

}  // namespace

const std::vector<std::string>& disc_stat_names() {
  static const std::vector<std::string> names = {
      "max_token_frac",    "distinct_ratio",    "turn",
      "summary_score",     "prior_score",       "main_topic_msgs",   "off_summary_msgs",
      "no_topic_msgs",     "trait_end_request", "trait_clarify",     "trait_disagree",
      "trait_distress",    "trait_neg_affect",  "trait_pos_affect",  "trait_agree",
      "trait_insight",     "answered",          "unanswered",        "clarified",
      "unclarified",       "reacted",           "unreacted",         "disagreed",
      "undisagreed",       "repeat_msgs"};
  return names;
}

PrefixAccumulator::PrefixAccumulator(const DiscFeatureSpec& spec, const Context& ctx)
    : spec_(&spec),
      vocab_(spec.vocab_size),
      profile_(ctx.profile),
      summary_(ctx.current_summary),
      prior_mean_(static_cast<std::size_t>(kSummaryDim), 0.0),
      counts_(static_cast<std::size_t>(spec.vocab_size), 0),
      msg_counts_(static_cast<std::size_t>(spec.vocab_size), 0),
      sums_(static_cast<std::size_t>(DiscFeatureSpec::kNumStats), 0.0) {
  profile_.resize(kProfileDim, 0.5);
  summary_.resize(kSummaryDim, 0.0);
  if (!ctx.prior_summaries.empty()) {
    for (const auto& s : ctx.prior_summaries) {
      for (std::size_t k = 0; k < prior_mean_.size() && k < s.size(); ++k) prior_mean_[k] += s[k];
    }
    for (double& x : prior_mean_) x /= static_cast<double>(ctx.prior_summaries.size());
  }
  main_topic_ = static_cast<int>(std::max_element(summary_.begin(), summary_.end()) - summary_.begin());
}

void PrefixAccumulator::add_agent(std::span<const Token> tokens) {
  asked_topic_.reset();
  for (Token t : tokens) {
    if (auto q = vocab_.question_topic(t)) asked_topic_ = *q;
  }
  confusing_ = has(tokens, tok::kConfusing);
  suggest_ = has(tokens, tok::kSuggest);
  contradict_ = has(tokens, tok::kContradict);
}

void PrefixAccumulator::add_user(std::span<const Token> tokens) {
  ++n_user_;
  std::vector<Token> seen;
  bool repeated = false;
  std::vector<int> topics;
  for (Token t : tokens) {
    // terminators carry length only
    if (!vocab_.contains(t) || t == tok::kEndUtterance || t == tok::kEndSession) continue;
    if (std::find(seen.begin(), seen.end(), t) != seen.end()) {
      repeated = true;
    } else {
      seen.push_back(t);
      ++msg_counts_[t];
    }
    int& c = counts_[t];
    if (c == 0) ++distinct_;
    ++c;
    ++total_;
    max_count_ = std::max(max_count_, c);
    if (auto topic = vocab_.topic_of(t)) topics.push_back(*topic);
  }

  // Every message adds a bounded amount to each running sum.
  auto bump = [&](int stat, double v) { sums_[static_cast<std::size_t>(stat)] += v; };
  double best_summary = 0.0, best_prior = 0.0;
  bool main = false, off = false;
  for (int k : topics) {
    const double sv = summary_[static_cast<std::size_t>(k)];
    best_summary = std::max(best_summary, sv);
    best_prior = std::max(best_prior, prior_mean_[static_cast<std::size_t>(k)]);
    if (k == main_topic_) main = true;
    if (sv < kOffSummary) off = true;
  }
  bump(3, best_summary);
  bump(4, best_prior);
  bump(5, main);
  bump(6, off);
  bump(7, topics.empty());
  for (int i = 0; i < kProfileDim; ++i) {
    if (has(tokens, kTraitTokens[static_cast<std::size_t>(i)])) {
      bump(8 + i, 4.0 * (profile_[static_cast<std::size_t>(i)] - 0.5));
    }
  }
  if (asked_topic_) {
    const bool answered = std::find(topics.begin(), topics.end(), *asked_topic_) != topics.end();
    bump(answered ? 16 : 17, 1.0);
  }
  if (confusing_) bump(has(tokens, tok::kClarify) ? 18 : 19, 1.0);
  if (suggest_) {
    const bool reacted =
        has(tokens, tok::kAgree) || has(tokens, tok::kDisagree) || has(tokens, tok::kChangeTalk);
    bump(reacted ? 20 : 21, 1.0);
  }
  if (contradict_) bump(has(tokens, tok::kDisagree) ? 22 : 23, 1.0);
  bump(24, repeated);
}

std::vector<double> PrefixAccumulator::features() const {
  const DiscFeatureSpec& spec = *spec_;
  std::vector<double> x(static_cast<std::size_t>(spec.feature_dim()), 0.0);
  const double inv = 1.0 / spec.count_scale;
  x[0] = 1.0;
  for (int t = 0; t < spec.vocab_size; ++t) {
    x[static_cast<std::size_t>(spec.unigram_offset() + t)] = msg_counts_[static_cast<std::size_t>(t)] * inv;
  }
  double* s = x.data() + spec.stats_offset();
  for (int i = 3; i < DiscFeatureSpec::kNumStats; ++i) s[i] = sums_[static_cast<std::size_t>(i)] * inv;
  s[0] = ratio(max_count_, total_);
  s[1] = ratio(distinct_, total_);
  s[2] = n_user_ / 30.0;
  return x;
}

DiscriminatorParams::DiscriminatorParams(DiscFeatureSpec spec)
    : spec_(spec), weights_(static_cast<std::size_t>(spec.feature_dim()), 0.0) {}

DiscriminatorParams::DiscriminatorParams(DiscFeatureSpec spec, std::vector<double> weights)
    : spec_(spec), weights_(std::move(weights)) {
  validate();
}

void DiscriminatorParams::validate() const {
  if (weights_.size() != static_cast<std::size_t>(spec_.feature_dim())) {
    throw ValidationError("discriminator has " + std::to_string(weights_.size()) +
                              " weights, expected " + std::to_string(spec_.feature_dim()),
                          "feature_dim");
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw ValidationError("non-finite discriminator weight", "weights");
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

namespace {

double dot(std::span<const double> w, std::span<const double> x) {
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * x[i];
  return z;
}

// log(1 + e^z) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double predict_prob(const DiscriminatorParams& params, std::span<const double> features) {
  if (features.size() != static_cast<std::size_t>(params.feature_dim())) {
    throw std::invalid_argument("feature vector has the wrong dimension");
  }
  return clamp_prob(sigmoid(dot(params.weights(), features)));
}

std::vector<std::vector<double>> session_features(const DiscFeatureSpec& spec, const Session& s) {
  if (s.user_turns() < 1) throw ValidationError("session has no user message", "messages");
  PrefixAccumulator acc(spec, s.context());
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(s.user_turns()));
  for (const Message& m : s.messages()) {
    if (m.role == Role::agent) {
      acc.add_agent(m.tokens);
    } else {
      acc.add_user(m.tokens);
      out.push_back(acc.features());
    }
  }
  return out;
}

std::vector<TurnPrediction> predict_turns(const DiscriminatorParams& params, const Session& s) {
  const auto feats = session_features(params.spec(), s);
  std::vector<TurnPrediction> out;
  out.reserve(feats.size());
  for (std::size_t t = 0; t < feats.size(); ++t) {
    out.push_back({static_cast<int>(t) + 1, predict_prob(params, feats[t])});
  }
  return out;
}

std::vector<DiscRow> disc_rows(const DiscFeatureSpec& spec, std::span<const Session> real,
                               std::span<const Session> simulated, int workers) {
  const std::size_t n = real.size() + simulated.size();
  std::vector<std::vector<std::vector<double>>> per(n);
  parallel_for(n, workers, [&](std::size_t i) {
    per[i] = session_features(spec, i < real.size() ? real[i] : simulated[i - real.size()]);
  });
  std::vector<DiscRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = i < real.size() ? 1.0 : 0.0;
    for (auto& x : per[i]) rows.push_back({std::move(x), y});
  }
  return rows;
}

DiscLossGrad disc_objective(const DiscriminatorParams& params, std::span<const DiscRow> rows) {
  if (rows.empty()) throw std::invalid_argument("no discriminator rows");
  DiscLossGrad out;
  out.grad.assign(static_cast<std::size_t>(params.feature_dim()), 0.0);
  const auto w = params.weights();
  for (const DiscRow& r : rows) {
    const double z = dot(w, r.x);
    // -[y log s(z) + (1-y) log(1 - s(z))] = softplus(z) - y z
    out.loss += softplus(z) - r.y * z;
    const double g = sigmoid(z) - r.y;
    for (std::size_t i = 0; i < r.x.size(); ++i) out.grad[i] += g * r.x[i];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  out.loss *= inv;
  for (double& g : out.grad) g *= inv;
  return out;
}

DiscTrainResult disc_train(const DiscriminatorParams& init, std::span<const Session> real,
                           std::span<const Session> simulated, const DiscTrainConfig& config) {
  init.validate();
  if (real.empty() || simulated.empty()) {
    throw ValidationError("discriminator training needs both real and simulated sessions", "corpus");
  }
  const double size_ratio = static_cast<double>(real.size()) / static_cast<double>(simulated.size());
  if (size_ratio < 0.9 || size_ratio > 1.1) {
    throw ValidationError("real and simulated corpora are unbalanced (" + std::to_string(real.size()) +
                              " vs " + std::to_string(simulated.size()) + ")",
                          "corpus");
  }
  if (!(config.lr > 0.0)) throw ValidationError("discriminator lr must be > 0", "disc.lr");
  if (config.epochs < 0) throw ValidationError("discriminator epochs must be >= 0", "disc.epochs");

  const auto rows = disc_rows(init.spec(), real, simulated, config.workers);
  DiscTrainResult res{init, {}};
  auto lg = disc_objective(res.params, rows);
  res.loss_curve.push_back(lg.loss);
  for (int e = 0; e < config.epochs; ++e) {
    auto w = res.params.weights();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= config.lr * lg.grad[i];
    lg = disc_objective(res.params, rows);
    if (!std::isfinite(lg.loss)) {
      throw TrainingError("non-finite discriminator loss at epoch " + std::to_string(e + 1),
                          static_cast<std::size_t>(e));
    }
    res.loss_curve.push_back(lg.loss);
  }
  return res;
}

void Confusion::add(bool predicted_real, bool is_real) {
  if (predicted_real && is_real) ++tp;
  else if (predicted_real) ++fp;
  else if (is_real) ++fn;
  else ++tn;
}

double Confusion::accuracy() const {
  return total() ? static_cast<double>(tp + tn) / static_cast<double>(total()) : 0.0;
}

double Confusion::f1() const {
  const double den = 2.0 * tp + fp + fn;
  return den > 0 ? 2.0 * tp / den : 0.0;
}

double Confusion::mcc() const {
  const double a = static_cast<double>(tp), b = static_cast<double>(fp);
  const double c = static_cast<double>(fn), d = static_cast<double>(tn);
  const double den = (a + b) * (a + c) * (d + b) * (d + c);
  if (den <= 0.0) return 0.0;
  return (a * d - b * c) / std::sqrt(den);
}

bool classify_real(double p_real) { return p_real > 0.5; }

std::string TurnMetrics::label() const { return turn ? std::to_string(*turn) : "overall"; }

std::vector<TurnMetrics> disc_evaluate(const DiscriminatorParams& params,
                                       std::span<const Session> real,
                                       std::span<const Session> simulated,
                                       std::span<const int> turn_points, int workers) {
  if (turn_points.empty()) throw ValidationError("turn_points is empty", "turn_points");
  for (int t : turn_points) {
    if (t < 1) throw ValidationError("turn points are 1-based", "turn_points");
  }
  const std::size_t n = real.size() + simulated.size();
  std::vector<std::vector<TurnPrediction>> preds(n);
  parallel_for(n, workers, [&](std::size_t i) {
    preds[i] = predict_turns(params, i < real.size() ? real[i] : simulated[i - real.size()]);
  });

  std::vector<Confusion> at(turn_points.size());
  Confusion overall;
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_real = i < real.size();
    for (const auto& p : preds[i]) overall.add(classify_real(p.p_real), is_real);
    for (std::size_t k = 0; k < turn_points.size(); ++k) {
      const auto t = static_cast<std::size_t>(turn_points[k]);
      if (preds[i].size() >= t) at[k].add(classify_real(preds[i][t - 1].p_real), is_real);
    }
  }

  auto row = [](std::optional<int> turn, const Confusion& c) {
    TurnMetrics m;
    m.turn = turn;
    m.n = c.total();
    m.present = m.n > 0;
    if (m.present) {
      m.acc = c.accuracy();
      m.f1 = c.f1();
      m.mcc = c.mcc();
    }
    return m;
  };
  std::vector<TurnMetrics> out;
  for (std::size_t k = 0; k < turn_points.size(); ++k) out.push_back(row(turn_points[k], at[k]));
  out.push_back(row(std::nullopt, overall));
  return out;
}

void write_disc_eval_csv(std::span<const TurnMetrics> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  out << "turn,acc,f1,mcc\n";
  char buf[128];
  for (const auto& r : rows) {
    if (r.present) {
      std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f\n", r.label().c_str(), r.acc, r.f1, r.mcc);
    } else {
      std::snprintf(buf, sizeof buf, "%s,,,\n", r.label().c_str());
    }
    out << buf;
  }
  if (!out) throw IoError("write failed on " + path.string(), 0);
}

void save_discriminator(const DiscriminatorParams& params, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.header = ordered_json{{"kind", "discriminator"},
                           {"feature_dim", params.feature_dim()},
                           {"vocab_size", params.spec().vocab_size},
                           {"feature_spec",
                            {{"count_scale", params.spec().count_scale},
                             {"stats", disc_stat_names()}}}};
  ck.weights.assign(params.weights().begin(), params.weights().end());
  write_checkpoint(path, ck);
}

DiscriminatorParams load_discriminator(const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.header.value("kind", "") != "discriminator") {
    throw ValidationError("checkpoint is not a discriminator", "kind");
  }
  DiscFeatureSpec spec;
  spec.vocab_size = ck.header.at("vocab_size").get<int>();
  spec.count_scale = ck.header.at("feature_spec").at("count_scale").get<double>();
  if (ck.header.at("feature_dim").get<int>() != spec.feature_dim()) {
    throw ValidationError("feature_dim does not match the feature spec", "feature_dim");
  }
  return DiscriminatorParams(spec, std::move(ck.weights));
}

}  // namespace usersim
