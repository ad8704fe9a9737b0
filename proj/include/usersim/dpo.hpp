#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "usersim/policy.hpp"
#include "usersim/reward_mining.hpp"

namespace usersim {

struct DpoConfig {
  double beta = 1.0;
  double lr = 0.5;
  int epochs = 20;
  double warmup_ratio = 0.1;  // linear lr ramp over this fraction of steps
  int batch_size = 0;         // 0 = full batch
  std::uint64_t seed = 0;

  void validate() const;
};

// log pi(u|h,c) - log pi_ref(u|h,c)
double implicit_reward(const PolicyParams& policy, const PolicyParams& reference,
                       std::span<const Message> history, const Context& ctx,
                       std::span<const Token> utterance);

// Mean of -log sigmoid(beta * (r(chosen) - r(rejected))) over pairs.
double dpo_loss(const PolicyParams& policy, const PolicyParams& reference,
                std::span<const PreferencePair> pairs, double beta);

struct DpoLossGrad {
  double loss = 0.0;
  double mean_margin = 0.0;  // beta * (r_c - r_r), averaged
  std::vector<double> grad;
};

DpoLossGrad dpo_objective(const PolicyParams& policy, const PolicyParams& reference,
                          std::span<const PreferencePair> pairs, double beta);

struct DpoResult {
  PolicyParams params;
  std::vector<double> loss_curve;    // [initial, after epoch 1, ...]
  std::vector<double> margin_curve;  // same indexing
};

// Reference is a frozen copy of `policy` taken before the first step.
DpoResult dpo_train(const PolicyParams& policy, std::span<const PreferencePair> pairs,
                    const DpoConfig& config);

}  // namespace usersim
