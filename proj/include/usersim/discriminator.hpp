#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usersim/corpus.hpp"
#include "usersim/tokens.hpp"

namespace usersim {

// Causal prefix features. Layout:
//   bias | user messages containing each token (V) | statistics (kNumStats)
// Apart from two repetition ratios and the turn index, every feature is a
// running sum of bounded per-message terms divided by count_scale: each user
// message adds its own evidence, and no single message can add much.
struct DiscFeatureSpec {
  static constexpr int kNumStats = 25;

  int vocab_size = kDefaultVocabSize;
  double count_scale = 10.0;

  int unigram_offset() const { return 1; }
  int stats_offset() const { return 1 + vocab_size; }
  int feature_dim() const { return stats_offset() + kNumStats; }

  bool operator==(const DiscFeatureSpec&) const = default;
};

// Names of the summary statistics, in layout order.
const std::vector<std::string>& disc_stat_names();

// Running prefix state. Feed messages in session order; features() describes
// everything seen so far. Cheap to copy, which is how alternatives are scored
// against a frozen prefix.
class PrefixAccumulator {
 public:
  PrefixAccumulator(const DiscFeatureSpec& spec, const Context& ctx);

  void add_agent(std::span<const Token> tokens);
  void add_user(std::span<const Token> tokens);
  int user_turns() const { return n_user_; }

  std::vector<double> features() const;

 private:
  const DiscFeatureSpec* spec_;
  Vocabulary vocab_;
  std::vector<double> profile_;
  std::vector<double> summary_;
  std::vector<double> prior_mean_;

  std::vector<int> counts_;
  std::vector<int> msg_counts_;  // user messages containing each token
  int total_ = 0;
  int distinct_ = 0;
  int max_count_ = 0;
  int n_user_ = 0;
  int main_topic_ = 0;
  std::vector<double> sums_;  // indexed like the statistics block

  // last agent message
  std::optional<int> asked_topic_;
  bool confusing_ = false;
  bool suggest_ = false;
  bool contradict_ = false;
};

class DiscriminatorParams {
 public:
  explicit DiscriminatorParams(DiscFeatureSpec spec = {});
  DiscriminatorParams(DiscFeatureSpec spec, std::vector<double> weights);

  const DiscFeatureSpec& spec() const { return spec_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  int feature_dim() const { return spec_.feature_dim(); }

  void validate() const;
  bool operator==(const DiscriminatorParams&) const = default;

 private:
  DiscFeatureSpec spec_;
  std::vector<double> weights_;
};

inline constexpr double kProbClamp = 1e-7;

double clamp_prob(double p);
double sigmoid(double z);
double logit(double p);

// Clamped P(real | features).
double predict_prob(const DiscriminatorParams& params, std::span<const double> features);

struct TurnPrediction {
  int turn_index = 0;  // 1-based user turn
  double p_real = 0.5;
};

// Feature vector after every user message of the session.
std::vector<std::vector<double>> session_features(const DiscFeatureSpec& spec, const Session& s);
std::vector<TurnPrediction> predict_turns(const DiscriminatorParams& params, const Session& s);

struct DiscRow {
  std::vector<double> x;
  double y = 0.0;  // 1 = real
};

std::vector<DiscRow> disc_rows(const DiscFeatureSpec& spec, std::span<const Session> real,
                               std::span<const Session> simulated, int workers = 1);

struct DiscLossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean BCE over rows, with its analytic gradient.
DiscLossGrad disc_objective(const DiscriminatorParams& params, std::span<const DiscRow> rows);

struct DiscTrainConfig {
  double lr = 0.5;
  int epochs = 300;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct DiscTrainResult {
  DiscriminatorParams params;
  std::vector<double> loss_curve;  // [initial, after epoch 1, ...]
};

DiscTrainResult disc_train(const DiscriminatorParams& init, std::span<const Session> real,
                           std::span<const Session> simulated, const DiscTrainConfig& config);

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  void add(bool predicted_real, bool is_real);
  std::size_t total() const { return tp + fp + fn + tn; }
  double accuracy() const;
  double f1() const;   // "real" is the positive class
  double mcc() const;  // 0 when the denominator is 0
};

// Threshold at 0.5; p == 0.5 counts as "simulated".
bool classify_real(double p_real);

struct TurnMetrics {
  std::optional<int> turn;  // nullopt = overall row
  bool present = false;     // false when no session reaches the turn
  std::size_t n = 0;
  double acc = 0.0, f1 = 0.0, mcc = 0.0;

  std::string label() const;
};

inline const std::vector<int> kDefaultTurnPoints = {1, 5, 10, 25};

std::vector<TurnMetrics> disc_evaluate(const DiscriminatorParams& params,
                                       std::span<const Session> real,
                                       std::span<const Session> simulated,
                                       std::span<const int> turn_points, int workers = 1);

void write_disc_eval_csv(std::span<const TurnMetrics> rows, const std::filesystem::path& path);

void save_discriminator(const DiscriminatorParams& params, const std::filesystem::path& path);
DiscriminatorParams load_discriminator(const std::filesystem::path& path);

}  // namespace usersim
