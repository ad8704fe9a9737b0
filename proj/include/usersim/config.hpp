#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace usersim {

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string out_dir = "runs/default";
  int workers = 1;

  struct World {
    int vocab_size = 128;
    int profile_dim = 8;
    int summary_dim = 8;
    int max_utterance_len = 8;
    std::string agents_path = "fixtures/agents.jsonl";
    std::string ground_truth_path = "fixtures/ground_truth_user.ckpt";
    bool operator==(const World&) const = default;
  } world;

  struct Corpus {
    int n_contexts = 1000;
    int sims_per_context = 2;
    double train_fraction = 0.8;
    bool operator==(const Corpus&) const = default;
  } corpus;

  struct Sft {
    std::string family = "restricted";
    double lr = 0.5;
    int epochs = 30;
    int batch_size = 64;
    bool operator==(const Sft&) const = default;
  } sft;

  struct Disc {
    double lr = 0.5;
    int epochs = 300;
    bool operator==(const Disc&) const = default;
  } disc;

  struct Dpo {
    double beta = 1.0;
    double lr = 0.03;
    int epochs = 1;
    double warmup_ratio = 0.1;
    int batch_size = 1;
    bool operator==(const Dpo&) const = default;
  } dpo;

  struct Mining {
    int k_alternatives = 8;
    bool operator==(const Mining&) const = default;
  } mining;

  struct Loop {
    int n_iterations = 3;
    bool operator==(const Loop&) const = default;
  } loop;

  struct Eval {
    std::vector<int> turn_points = {1, 5, 10, 25};
    int n_contexts = 1000;
    int sims_per_context = 2;
    bool operator==(const Eval&) const = default;
  } eval;

  void validate() const;  // throws ValidationError naming the dotted field
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::ordered_json config_to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys and wrong types are errors.
ExperimentConfig config_from_json(const nlohmann::ordered_json& j);

std::string emit_config(const ExperimentConfig& c);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// "dpo.lr=0.3", "eval.turn_points=[1,5]". The value is read as JSON when it
// parses, as a plain string otherwise.
ExperimentConfig apply_overrides(const ExperimentConfig& c, const std::vector<std::string>& overrides);

}  // namespace usersim
