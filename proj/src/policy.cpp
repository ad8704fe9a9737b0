#include "usersim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "usersim/checkpoint.hpp"
#include "usersim/rng.hpp"

namespace usersim {

const char* to_string(Family f) { return f == Family::full ? "full" : "restricted"; }

Family family_from_string(const std::string& s) {
  if (s == "full") return Family::full;
  if (s == "restricted") return Family::restricted;
  throw ValidationError("unknown policy family '" + s + "'", "family_id");
}

bool FeatureSpec::row_active(int feature) const {
  if (family == Family::full) return true;
  if (feature < profile_offset()) return true;
  // restricted: no context, and only the agent's final token
  return feature >= agent_offset() && (feature < agent_offset() + vocab_size || feature >= turn_offset());
}

int turn_bucket(int user_turn) {
  if (user_turn <= 1) return 0;
  if (user_turn <= 3) return 1;
  if (user_turn <= 7) return 2;
  if (user_turn <= 15) return 3;
  if (user_turn <= 23) return 4;
  return 5;
}

PolicyParams::PolicyParams(FeatureSpec spec)
    : spec_(spec),
      weights_(static_cast<std::size_t>(spec.feature_dim()) * static_cast<std::size_t>(spec.vocab_size),
               0.0) {}

PolicyParams::PolicyParams(FeatureSpec spec, std::vector<double> weights)
    : spec_(spec), weights_(std::move(weights)) {
  validate();
}

std::span<const double> PolicyParams::row(int feature) const {
  return std::span<const double>(weights_).subspan(index(feature, 0), spec_.vocab_size);
}

std::span<double> PolicyParams::row(int feature) {
  return std::span<double>(weights_).subspan(index(feature, 0), spec_.vocab_size);
}

void PolicyParams::validate() const {
  if (!(spec_.context_scale > 0.0) || !std::isfinite(spec_.context_scale)) {
    throw ValidationError("context_scale must be positive", "context_scale");
  }
  const auto expected =
      static_cast<std::size_t>(spec_.feature_dim()) * static_cast<std::size_t>(spec_.vocab_size);
  if (weights_.size() != expected) {
    throw ValidationError("policy has " + std::to_string(weights_.size()) + " weights, expected " +
                              std::to_string(expected),
                          "feature_dim");
  }
  for (double w : weights_) {
    if (!std::isfinite(w)) throw ValidationError("non-finite policy weight", "weights");
  }
}

PolicyParams PolicyParams::with_family(Family f) const {
  PolicyParams out = *this;
  out.spec_.family = f;
  for (int feat = 0; feat < out.feature_dim(); ++feat) {
    if (!out.spec_.row_active(feat)) std::fill(out.row(feat).begin(), out.row(feat).end(), 0.0);
  }
  return out;
}

StateFeaturizer::StateFeaturizer(const FeatureSpec& spec, std::span<const Message> history,
                                 const Context& ctx)
    : spec_(&spec), user_counts_(static_cast<std::size_t>(spec.vocab_size), 0) {
  if (history.empty() || history.back().role != Role::agent) {
    throw std::invalid_argument("policy history must end with an agent message");
  }
  int user_turns = 0;
  for (const Message& m : history) {
    if (m.role != Role::user) continue;
    ++user_turns;
    for (Token t : m.tokens) {
      if (t < user_counts_.size()) {
        ++user_counts_[t];
        ++user_total_;
      }
    }
  }

  auto add = [&](int f, double v) {
    if (v != 0.0 && spec.row_active(f)) fixed_.emplace_back(static_cast<std::uint32_t>(f), v);
  };
  add(spec.bias_offset(), 1.0);
  {
    for (int i = 0; i < spec.profile_dim && i < static_cast<int>(ctx.profile.size()); ++i) {
      add(spec.profile_offset() + i, spec.context_scale * (ctx.profile[static_cast<std::size_t>(i)] - 0.5));
    }
    for (int i = 0; i < spec.summary_dim && i < static_cast<int>(ctx.current_summary.size()); ++i) {
      add(spec.summary_offset() + i, spec.context_scale * ctx.current_summary[static_cast<std::size_t>(i)]);
    }
    if (!ctx.prior_summaries.empty()) {
      const double inv = 1.0 / static_cast<double>(ctx.prior_summaries.size());
      for (int i = 0; i < spec.summary_dim; ++i) {
        double acc = 0.0;
        for (const auto& s : ctx.prior_summaries) {
          if (i < static_cast<int>(s.size())) acc += s[static_cast<std::size_t>(i)];
        }
        add(spec.prior_offset() + i, spec.context_scale * acc * inv);
      }
    }
    const Tokens& agent = history.back().tokens;
    for (int slot = 0; slot < spec.agent_slots; ++slot) {
      if (slot >= static_cast<int>(agent.size())) break;
      const Token t = agent[agent.size() - 1 - static_cast<std::size_t>(slot)];
      if (t < static_cast<Token>(spec.vocab_size)) {
        add(spec.agent_offset() + slot * spec.vocab_size + static_cast<int>(t), spec.context_scale);
      }
    }
  }
  add(spec.turn_offset() + turn_bucket(user_turns + 1), 1.0);
}

SparseFeatures StateFeaturizer::at(std::span<const Token> prefix) const {
  SparseFeatures out;
  out.entries = fixed_;
  std::vector<int> counts = user_counts_;
  int total = user_total_;
  for (Token t : prefix) {
    if (t < counts.size()) {
      ++counts[t];
      ++total;
    }
  }
  if (total > 0) {
    const double inv = 1.0 / static_cast<double>(total);
    for (std::size_t t = 0; t < counts.size(); ++t) {
      if (counts[t] > 0) {
        out.entries.emplace_back(static_cast<std::uint32_t>(spec_->unigram_offset()) +
                                     static_cast<std::uint32_t>(t),
                                 counts[t] * inv);
      }
    }
  }
  const int pos = std::min<int>(static_cast<int>(prefix.size()), spec_->position_buckets - 1);
  out.entries.emplace_back(static_cast<std::uint32_t>(spec_->position_offset() + pos), 1.0);
  std::vector<std::uint32_t> said;
  for (Token t : prefix) {
    if (t < static_cast<Token>(spec_->vocab_size)) {
      said.push_back(static_cast<std::uint32_t>(spec_->said_offset()) + static_cast<std::uint32_t>(t));
    }
  }
  std::sort(said.begin(), said.end());
  said.erase(std::unique(said.begin(), said.end()), said.end());
  for (auto f : said) out.entries.emplace_back(f, 1.0);
  return out;
}

void compute_logits(const PolicyParams& params, const SparseFeatures& x, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t v = out.size();
  for (const auto& [f, val] : x.entries) {
    const auto row = params.row(static_cast<int>(f));
    for (std::size_t k = 0; k < v; ++k) out[k] += val * row[k];
  }
}

double log_softmax_inplace(std::span<double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  const double lse = m + std::log(s);
  for (double& l : logits) l -= lse;
  return lse;
}

std::vector<double> next_token_distribution(const PolicyParams& params,
                                            std::span<const Message> history, const Context& ctx,
                                            std::span<const Token> prefix) {
  StateFeaturizer feat(params.spec(), history, ctx);
  std::vector<double> logits(static_cast<std::size_t>(params.vocab_size()));
  compute_logits(params, feat.at(prefix), logits);
  log_softmax_inplace(logits);
  for (double& l : logits) l = std::exp(l);
  return logits;
}

bool is_utterance_terminator(Token t) {
  return t == tok::kEndUtterance || t == tok::kEndSession;
}

double utterance_logprob(const PolicyParams& params, std::span<const Message> history,
                         const Context& ctx, std::span<const Token> utterance) {
  for (Token t : utterance) {
    if (t >= static_cast<Token>(params.vocab_size())) {
      throw ValidationError("utterance token " + std::to_string(t) + " out of vocabulary",
                            "tokens");
    }
  }
  StateFeaturizer feat(params.spec(), history, ctx);
  std::vector<double> logits(static_cast<std::size_t>(params.vocab_size()));
  double lp = 0.0;
  for (std::size_t j = 0; j < utterance.size(); ++j) {
    compute_logits(params, feat.at(utterance.first(j)), logits);
    log_softmax_inplace(logits);
    lp += logits[utterance[j]];
  }
  return std::min(lp, 0.0);
}

Tokens sample_utterance(const PolicyParams& params, std::span<const Message> history,
                        const Context& ctx, std::uint64_t seed, int max_len) {
  StateFeaturizer feat(params.spec(), history, ctx);
  Rng rng(seed);
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  Tokens out;
  while (static_cast<int>(out.size()) < max_len) {
    compute_logits(params, feat.at(out), probs);
    log_softmax_inplace(probs);
    for (double& p : probs) p = std::exp(p);
    const auto t = static_cast<Token>(rng.categorical(probs));
    out.push_back(t);
    if (is_utterance_terminator(t)) break;
  }
  return out;
}

std::vector<TokenExample> utterance_examples(const FeatureSpec& spec,
                                             std::span<const Message> history, const Context& ctx,
                                             std::span<const Token> utterance) {
  StateFeaturizer feat(spec, history, ctx);
  std::vector<TokenExample> rows;
  rows.reserve(utterance.size());
  for (std::size_t j = 0; j < utterance.size(); ++j) {
    if (utterance[j] >= static_cast<Token>(spec.vocab_size)) {
      throw ValidationError("utterance token " + std::to_string(utterance[j]) +
                                " out of vocabulary",
                            "tokens");
    }
    rows.push_back({feat.at(utterance.first(j)), utterance[j]});
  }
  return rows;
}

std::vector<TokenExample> sft_examples(const FeatureSpec& spec, std::span<const Session> corpus) {
  std::vector<TokenExample> rows;
  for (const Session& s : corpus) {
    const auto msgs = s.messages();
    for (std::size_t i = 1; i < msgs.size(); i += 2) {
      auto part = utterance_examples(spec, msgs.first(i), s.context(), msgs[i].tokens);
      std::move(part.begin(), part.end(), std::back_inserter(rows));
    }
  }
  return rows;
}

double rows_logprob(const PolicyParams& params, std::span<const TokenExample> rows, double scale,
                    std::vector<double>* grad) {
  const auto v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> logits(v);
  double total = 0.0;
  for (const TokenExample& row : rows) {
    compute_logits(params, row.x, logits);
    log_softmax_inplace(logits);
    total += logits[row.y];
    if (grad == nullptr) continue;
    // d log p(y) / d W[f][k] = x_f * (1[k == y] - p_k)
    for (double& l : logits) l = std::exp(l);
    logits[row.y] -= 1.0;
    for (const auto& [f, val] : row.x.entries) {
      double* g = grad->data() + static_cast<std::size_t>(f) * v;
      const double c = -scale * val;
      for (std::size_t k = 0; k < v; ++k) g[k] += c * logits[k];
    }
  }
  return total;
}

LossGrad sft_objective(const PolicyParams& params, std::span<const TokenExample> examples) {
  if (examples.empty()) throw std::invalid_argument("sft_objective on empty example set");
  LossGrad out;
  out.grad.assign(params.weights().size(), 0.0);
  const double n = static_cast<double>(examples.size());
  // loss = -(1/n) sum log p, so d loss = -(1/n) d sum log p
  out.loss = -rows_logprob(params, examples, -1.0 / n, &out.grad) / n;
  return out;
}

double sft_loss(const PolicyParams& params, std::span<const TokenExample> examples) {
  if (examples.empty()) throw std::invalid_argument("sft_loss on empty example set");
  return -rows_logprob(params, examples, 0.0, nullptr) / static_cast<double>(examples.size());
}

SftResult sft_train(const PolicyParams& init, std::span<const Session> corpus,
                    const SftConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("sft_train needs a non-empty corpus");
  if (!(config.lr > 0.0)) throw std::invalid_argument("sft lr must be positive");
  init.validate();
  for (const Session& s : corpus) validate_tokens(s, Vocabulary(init.vocab_size()));

  const auto examples = sft_examples(init.spec(), corpus);
  if (examples.empty()) throw std::invalid_argument("corpus holds no user tokens");

  SftResult result{init, {}};
  PolicyParams& params = result.params;
  result.loss_curve.push_back(sft_loss(params, examples));

  const std::size_t n = examples.size();
  const std::size_t batch = config.batch_size <= 0 ? n : static_cast<std::size_t>(config.batch_size);
  const auto v = static_cast<std::size_t>(params.vocab_size());
  std::vector<double> grad(params.weights().size(), 0.0);
  std::vector<char> touched(static_cast<std::size_t>(params.feature_dim()), 0);
  std::vector<std::uint32_t> touched_rows;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<TokenExample> batch_rows;

  std::size_t batch_index = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(derive_seed(config.seed, "sft"), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < n; start += batch, ++batch_index) {
      const std::size_t end = std::min(n, start + batch);
      batch_rows.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_rows.push_back(examples[order[i]]);
        for (const auto& [f, val] : examples[order[i]].x.entries) {
          if (!touched[f]) {
            touched[f] = 1;
            touched_rows.push_back(f);
          }
        }
      }
      const double m = static_cast<double>(end - start);
      const double lp = rows_logprob(params, batch_rows, -1.0 / m, &grad);
      if (!std::isfinite(lp)) {
        throw TrainingError("non-finite SFT loss in batch " + std::to_string(batch_index),
                            batch_index);
      }
      auto w = params.weights();
      for (std::uint32_t f : touched_rows) {
        if (params.spec().row_active(static_cast<int>(f))) {
          for (std::size_t k = 0; k < v; ++k) {
            w[f * v + k] -= config.lr * grad[f * v + k];
          }
        }
        std::fill_n(grad.begin() + static_cast<std::ptrdiff_t>(f * v), v, 0.0);
        touched[f] = 0;
      }
      touched_rows.clear();
    }
    const double loss = sft_loss(params, examples);
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite SFT loss after epoch " + std::to_string(epoch + 1),
                          batch_index);
    }
    result.loss_curve.push_back(loss);
  }
  return result;
}

PolicyParams clone_reference(const PolicyParams& params) {
  params.validate();
  return PolicyParams(params);
}

void save_policy(const PolicyParams& params, const std::filesystem::path& path,
                 const nlohmann::ordered_json& meta) {
  const FeatureSpec& s = params.spec();
  Checkpoint ckpt;
  ckpt.header["kind"] = "policy";
  ckpt.header["family_id"] = params.family_id();
  ckpt.header["feature_dim"] = s.feature_dim();
  ckpt.header["vocab_size"] = s.vocab_size;
  ckpt.header["feature_spec"] = {{"profile_dim", s.profile_dim},
                                 {"summary_dim", s.summary_dim},
                                 {"agent_slots", s.agent_slots},
                                 {"turn_buckets", s.turn_buckets},
                                 {"position_buckets", s.position_buckets},
                                 {"context_scale", s.context_scale}};
  if (!meta.is_null()) ckpt.header["meta"] = meta;
  ckpt.weights.assign(params.weights().begin(), params.weights().end());
  write_checkpoint(path, ckpt);
}

PolicyParams load_policy(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "policy") {
    throw ValidationError(path.string() + " is not a policy checkpoint", "kind");
  }
  FeatureSpec spec;
  try {
    spec.vocab_size = h.at("vocab_size").get<int>();
    const auto& fs = h.at("feature_spec");
    spec.profile_dim = fs.at("profile_dim").get<int>();
    spec.summary_dim = fs.at("summary_dim").get<int>();
    spec.agent_slots = fs.at("agent_slots").get<int>();
    spec.turn_buckets = fs.at("turn_buckets").get<int>();
    spec.position_buckets = fs.at("position_buckets").get<int>();
    spec.context_scale = fs.at("context_scale").get<double>();
    spec.family = family_from_string(h.at("family_id").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad policy header: ") + e.what(), "header");
  }
  if (h.at("feature_dim").get<int>() != spec.feature_dim()) {
    throw ValidationError("feature_dim does not match feature_spec", "feature_dim");
  }
  return PolicyParams(spec, std::move(ckpt.weights));
}

}  // namespace usersim
