#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "usersim/config.hpp"
#include "usersim/corpus.hpp"
#include "usersim/discriminator.hpp"
#include "usersim/policy.hpp"
#include "usersim/world.hpp"

namespace usersim {

// Loads the agent grid and ground-truth user named by the config; throws
// MissingFixture when a file is absent.
World load_world(const ExperimentConfig& cfg);

// The fixed "real" side of an experiment: planned contexts, the real corpus
// rolled out on them and one train/validation split shared by every stage.
struct ExperimentInputs {
  World world;
  std::vector<RolloutPlan> plan;
  std::vector<Session> real;
  SplitIndices split;

  std::vector<Session> real_train() const { return gather<Session>(real, split.train); }
  std::vector<Session> real_validation() const { return gather<Session>(real, split.validation); }
};

ExperimentInputs prepare_experiment(const ExperimentConfig& cfg, World world);

// SFT from zero weights on the real training split, in the configured family.
SftResult train_sft(const ExperimentConfig& cfg, const ExperimentInputs& in);

struct IterationRecord {
  int iteration = 0;
  std::string policy_checkpoint;  // relative to the iteration directory
  std::string disc_checkpoint;
  std::size_t n_sessions_generated = 0;
  std::size_t n_pairs_mined = 0;
  std::size_t n_pairs_retained = 0;
  std::vector<TurnMetrics> disc_eval;
  std::vector<double> disc_loss_curve;
  std::vector<double> dpo_loss_curve;
  std::vector<double> dpo_margin_curve;
  nlohmann::ordered_json metric_summary;

  double overall_accuracy() const;
};

nlohmann::ordered_json to_json(const IterationRecord& r);

class IterationAborted : public std::runtime_error {
 public:
  IterationAborted(int iteration, const std::string& why)
      : std::runtime_error("iteration " + std::to_string(iteration) + " aborted: " + why),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

std::uint64_t iteration_seed(std::uint64_t root, int k);

// Simulated sessions of `policy` on the experiment's contexts under the
// iteration's rollout seeds.
std::vector<Session> generate_simulated(const ExperimentConfig& cfg, const ExperimentInputs& in,
                                        const PolicyParams& policy, const std::string& policy_id,
                                        std::uint64_t seed);

struct IterationResult {
  IterationRecord record;
  PolicyParams policy;  // after the DPO update
};

// One round: generate, train a fresh discriminator, mine, filter, DPO. When
// dir is non-empty every artifact is written there.
IterationResult run_iteration(const PolicyParams& policy, const ExperimentConfig& cfg,
                              const ExperimentInputs& in, int k, const std::filesystem::path& dir);

struct LoopResult {
  std::vector<IterationRecord> records;
  PolicyParams final_policy;
};

// Chains run_iteration k = 1..n and writes trend.csv under out_dir.
LoopResult run_loop(const PolicyParams& start, const ExperimentConfig& cfg,
                    const ExperimentInputs& in, const std::filesystem::path& out_dir);

void write_trend_csv(std::span<const IterationRecord> records, const std::filesystem::path& path);

}  // namespace usersim
