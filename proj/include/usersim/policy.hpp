#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "usersim/corpus.hpp"
#include "usersim/tokens.hpp"

namespace usersim {

// "full" conditions on everything below. "restricted" is blind to the user
// context and sees only the final token of the agent message: it keeps the
// bias, that one agent slot, the turn bucket, its own running unigram counts,
// the position inside the utterance and the tokens already emitted in it.
// Both families share one layout, so a restricted parameter set is also a
// valid full one whose context and agent rows are zero.
enum class Family { full, restricted };

const char* to_string(Family f);
Family family_from_string(const std::string& s);

struct FeatureSpec {
  int vocab_size = kDefaultVocabSize;
  int profile_dim = kProfileDim;
  int summary_dim = kSummaryDim;
  int agent_slots = 2;       // last-k agent tokens, one-hot each
  int turn_buckets = 6;      // user turn 1 | 2-3 | 4-7 | 8-15 | 16-23 | 24+
  int position_buckets = 5;  // position inside the utterance: 0,1,2,3,4+
  // Profile, summary and agent features are multiplied by this. Larger values
  // make gradient steps move the conditional rows faster relative to the
  // always-on ones.
  double context_scale = 1.0;
  Family family = Family::full;

  int bias_offset() const { return 0; }
  int profile_offset() const { return 1; }
  int summary_offset() const { return profile_offset() + profile_dim; }
  int prior_offset() const { return summary_offset() + summary_dim; }
  int agent_offset() const { return prior_offset() + summary_dim; }
  int turn_offset() const { return agent_offset() + agent_slots * vocab_size; }
  int unigram_offset() const { return turn_offset() + turn_buckets; }
  int position_offset() const { return unigram_offset() + vocab_size; }
  // tokens already emitted in the current utterance, one-hot
  int said_offset() const { return position_offset() + position_buckets; }
  int feature_dim() const { return said_offset() + vocab_size; }

  // Rows the family ignores: the context and agent-token blocks.
  bool row_active(int feature) const;

  bool operator==(const FeatureSpec&) const = default;
};

int turn_bucket(int user_turn);  // user_turn is 1-based

struct SparseFeatures {
  std::vector<std::pair<std::uint32_t, double>> entries;  // ascending index
};

class PolicyParams {
 public:
  explicit PolicyParams(FeatureSpec spec = {});
  PolicyParams(FeatureSpec spec, std::vector<double> weights);

  const FeatureSpec& spec() const { return spec_; }
  std::string family_id() const { return to_string(spec_.family); }
  int vocab_size() const { return spec_.vocab_size; }
  int feature_dim() const { return spec_.feature_dim(); }

  // weights are stored row-major, feature_dim x vocab_size
  double weight(int feature, Token t) const { return weights_[index(feature, t)]; }
  double& weight(int feature, Token t) { return weights_[index(feature, t)]; }
  std::span<const double> row(int feature) const;
  std::span<double> row(int feature);
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }

  void validate() const;
  // Same weights under another family; rows the target family ignores are
  // zeroed so the modeled distribution is what the target family computes.
  PolicyParams with_family(Family f) const;

  bool operator==(const PolicyParams&) const = default;

 private:
  std::size_t index(int feature, Token t) const {
    return static_cast<std::size_t>(feature) * static_cast<std::size_t>(spec_.vocab_size) + t;
  }

  FeatureSpec spec_;
  std::vector<double> weights_;
};

// Builds phi(h, c, prefix) for every position of one user utterance. The
// history must end with an agent message.
class StateFeaturizer {
 public:
  StateFeaturizer(const FeatureSpec& spec, std::span<const Message> history, const Context& ctx);

  SparseFeatures at(std::span<const Token> prefix) const;

 private:
  const FeatureSpec* spec_;
  std::vector<std::pair<std::uint32_t, double>> fixed_;
  std::vector<int> user_counts_;
  int user_total_ = 0;
};

void compute_logits(const PolicyParams& params, const SparseFeatures& x, std::span<double> out);
// In-place log-softmax; returns log Z.
double log_softmax_inplace(std::span<double> logits);

std::vector<double> next_token_distribution(const PolicyParams& params,
                                            std::span<const Message> history, const Context& ctx,
                                            std::span<const Token> prefix);

double utterance_logprob(const PolicyParams& params, std::span<const Message> history,
                         const Context& ctx, std::span<const Token> utterance);

// Temperature-1 ancestral sampling. Stops after emitting <eou> or
// <end_session> (the terminator is kept in the returned utterance) or when
// max_len tokens have been drawn.
Tokens sample_utterance(const PolicyParams& params, std::span<const Message> history,
                        const Context& ctx, std::uint64_t seed, int max_len);

bool is_utterance_terminator(Token t);

// One scored position: features of the state and the token that followed.
struct TokenExample {
  SparseFeatures x;
  Token y = 0;
};

std::vector<TokenExample> utterance_examples(const FeatureSpec& spec,
                                             std::span<const Message> history, const Context& ctx,
                                             std::span<const Token> utterance);
std::vector<TokenExample> sft_examples(const FeatureSpec& spec, std::span<const Session> corpus);

// Sum of log p(y|x) over rows. When grad is non-null, adds
// scale * d/dW sum log p(y|x) into it (grad has the weight layout).
double rows_logprob(const PolicyParams& params, std::span<const TokenExample> rows, double scale,
                    std::vector<double>* grad);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean negative log-likelihood per user token, with its analytic gradient.
LossGrad sft_objective(const PolicyParams& params, std::span<const TokenExample> examples);
double sft_loss(const PolicyParams& params, std::span<const TokenExample> examples);

struct SftConfig {
  double lr = 5e-2;
  int epochs = 1;
  int batch_size = 64;  // 0 = full batch
  std::uint64_t seed = 0;
};

struct SftResult {
  PolicyParams params;
  std::vector<double> loss_curve;  // [initial, after epoch 1, ...]
};

SftResult sft_train(const PolicyParams& init, std::span<const Session> corpus,
                    const SftConfig& config);

// Deep copy used as the frozen DPO reference.
PolicyParams clone_reference(const PolicyParams& params);

void save_policy(const PolicyParams& params, const std::filesystem::path& path,
                 const nlohmann::ordered_json& meta = {});
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace usersim
