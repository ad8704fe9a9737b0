#include "usersim/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "usersim/discriminator.hpp"
#include "usersim/rng.hpp"

namespace usersim {

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw ValidationError("dpo beta must be > 0", "dpo.beta");
  if (!(lr > 0.0)) throw ValidationError("dpo lr must be > 0", "dpo.lr");
  if (epochs < 0) throw ValidationError("dpo epochs must be >= 0", "dpo.epochs");
  if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
    throw ValidationError("dpo warmup_ratio must lie in [0,1]", "dpo.warmup_ratio");
  }
  if (batch_size < 0) throw ValidationError("dpo batch_size must be >= 0", "dpo.batch_size");
}

double implicit_reward(const PolicyParams& policy, const PolicyParams& reference,
                       std::span<const Message> history, const Context& ctx,
                       std::span<const Token> utterance) {
  return utterance_logprob(policy, history, ctx, utterance) -
         utterance_logprob(reference, history, ctx, utterance);
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Featurized pair with the reference log-probs frozen.
struct PreparedPair {
  std::vector<TokenExample> chosen;
  std::vector<TokenExample> rejected;
  double ref_chosen = 0.0;
  double ref_rejected = 0.0;
};

std::vector<PreparedPair> prepare(const PolicyParams& policy, const PolicyParams& reference,
                                  std::span<const PreferencePair> pairs) {
  std::vector<PreparedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    PreparedPair pp;
    pp.chosen = utterance_examples(policy.spec(), p.history, p.context, p.chosen);
    pp.rejected = utterance_examples(policy.spec(), p.history, p.context, p.rejected);
    pp.ref_chosen = utterance_logprob(reference, p.history, p.context, p.chosen);
    pp.ref_rejected = utterance_logprob(reference, p.history, p.context, p.rejected);
    out.push_back(std::move(pp));
  }
  return out;
}

// Loss and margin over the listed pairs; gradient added into grad (scaled by
// 1/norm) when non-null.
DpoLossGrad evaluate(const PolicyParams& policy, std::span<const PreparedPair> prepared,
                     std::span<const std::size_t> idx, double beta, bool with_grad) {
  DpoLossGrad out;
  if (with_grad) out.grad.assign(policy.weights().size(), 0.0);
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (std::size_t i : idx) {
    const PreparedPair& p = prepared[i];
    const double lc = rows_logprob(policy, p.chosen, 0.0, nullptr);
    const double lr = rows_logprob(policy, p.rejected, 0.0, nullptr);
    const double m = beta * ((lc - p.ref_chosen) - (lr - p.ref_rejected));
    const double loss = softplus(-m);
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite DPO loss at pair " + std::to_string(i), i);
    }
    out.loss += loss * inv;
    out.mean_margin += m * inv;
    if (with_grad) {
      // d/dm softplus(-m) = -sigmoid(-m)
      const double coef = -beta * sigmoid(-m) * inv;
      rows_logprob(policy, p.chosen, coef, &out.grad);
      rows_logprob(policy, p.rejected, -coef, &out.grad);
    }
  }
  return out;
}

}  // namespace

DpoLossGrad dpo_objective(const PolicyParams& policy, const PolicyParams& reference,
                          std::span<const PreferencePair> pairs, double beta) {
  if (pairs.empty()) throw ValidationError("dpo needs a non-empty pair set", "pairs");
  const auto prepared = prepare(policy, reference, pairs);
  std::vector<std::size_t> idx(prepared.size());
  std::iota(idx.begin(), idx.end(), 0);
  return evaluate(policy, prepared, idx, beta, true);
}

double dpo_loss(const PolicyParams& policy, const PolicyParams& reference,
                std::span<const PreferencePair> pairs, double beta) {
  if (pairs.empty()) throw ValidationError("dpo needs a non-empty pair set", "pairs");
  if (!(beta > 0.0)) throw ValidationError("dpo beta must be > 0", "dpo.beta");
  double total = 0.0;
  for (const auto& p : pairs) {
    const double m = beta * (implicit_reward(policy, reference, p.history, p.context, p.chosen) -
                             implicit_reward(policy, reference, p.history, p.context, p.rejected));
    total += softplus(-m);
  }
  return total / static_cast<double>(pairs.size());
}

DpoResult dpo_train(const PolicyParams& policy, std::span<const PreferencePair> pairs,
                    const DpoConfig& config) {
  config.validate();
  if (pairs.empty()) throw ValidationError("dpo needs a non-empty pair set", "pairs");
  const PolicyParams reference = clone_reference(policy);
  const auto prepared = prepare(policy, reference, pairs);

  DpoResult res{policy, {}, {}};
  std::vector<std::size_t> all(prepared.size());
  std::iota(all.begin(), all.end(), 0);
  auto record = [&] {
    const auto e = evaluate(res.params, prepared, all, config.beta, false);
    res.loss_curve.push_back(e.loss);
    res.margin_curve.push_back(e.mean_margin);
  };
  record();

  const std::size_t n = prepared.size();
  const std::size_t batch = config.batch_size == 0 ? n : static_cast<std::size_t>(config.batch_size);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(config.epochs);
  const auto warmup = static_cast<std::size_t>(std::ceil(config.warmup_ratio * static_cast<double>(total_steps)));

  std::vector<std::size_t> order = all;
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (batch < n) {
      Rng rng(mix_seed(derive_seed(config.seed, "dpo"), static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order.begin(), order.end());
    }
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t end = std::min(n, start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto g = evaluate(res.params, prepared, idx, config.beta, true);
      const double ramp =
          warmup > 0 ? std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup)) : 1.0;
      const double lr = config.lr * ramp;
      auto w = res.params.weights();
      const auto v = static_cast<std::size_t>(res.params.vocab_size());
      for (int f = 0; f < res.params.feature_dim(); ++f) {
        if (!res.params.spec().row_active(f)) continue;
        const std::size_t base = static_cast<std::size_t>(f) * v;
        for (std::size_t k = 0; k < v; ++k) w[base + k] -= lr * g.grad[base + k];
      }
    }
    record();
  }
  return res;
}

}  // namespace usersim
