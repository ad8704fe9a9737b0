#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "usersim/corpus.hpp"
#include "usersim/policy.hpp"

namespace usersim {

enum class IssueCategory {
  repetitive,
  confusing,
  ignores_end_request,
  contradiction,
  premature_wrapup,
  circular_conversation,  // detected only; never injected directly
};

inline constexpr std::array<IssueCategory, 5> kInjectedCategories = {
    IssueCategory::repetitive, IssueCategory::confusing, IssueCategory::ignores_end_request,
    IssueCategory::contradiction, IssueCategory::premature_wrapup};
inline constexpr std::array<IssueCategory, 6> kAllIssueCategories = {
    IssueCategory::repetitive,       IssueCategory::confusing,
    IssueCategory::ignores_end_request, IssueCategory::contradiction,
    IssueCategory::premature_wrapup, IssueCategory::circular_conversation};

const char* to_string(IssueCategory c);
IssueCategory issue_category_from_string(const std::string& s);

struct AgentConfig {
  std::string agent_id;
  std::map<IssueCategory, double> issue_rates;  // missing categories count as 0
  std::uint64_t script_seed = 0;
  int max_turns = 30;

  double rate(IssueCategory c) const;
  void validate() const;
  bool operator==(const AgentConfig&) const = default;
};

// Fourteen bots whose aggregate issue rates are spread on a grid.
std::vector<AgentConfig> default_agent_grid();
void write_agent_configs(std::span<const AgentConfig> agents, const std::filesystem::path& path);
std::vector<AgentConfig> read_agent_configs(const std::filesystem::path& path);

// Per-utterance base rates of the ground-truth user's key behaviors in a
// neutral conversational state.
struct BehaviorKnobs {
  double end_request = 0.03;
  double clarify = 0.04;
  double disagree = 0.10;
  double distress = 0.15;

  void validate() const;
};

struct GroundTruthUser {
  PolicyParams params;
  BehaviorKnobs knobs;
};

// Draws the hidden user from its seeded prior: a structured full-family
// weight matrix (topic grounding, trait-driven behaviors, reactions to agent
// moves) plus small seeded jitter.
GroundTruthUser make_ground_truth_user(std::uint64_t seed, const BehaviorKnobs& knobs = {});
void save_ground_truth_user(const GroundTruthUser& user, const std::filesystem::path& path);
GroundTruthUser load_ground_truth_user(const std::filesystem::path& path);

Context sample_context(std::uint64_t seed, std::string user_id);

// A user policy maps (history ending in an agent message, context, seed) to
// the next user utterance.
using UserPolicy =
    std::function<Tokens(std::span<const Message> history, const Context& ctx, std::uint64_t seed)>;

UserPolicy make_user_policy(const PolicyParams& params, int max_utterance_len);

struct IssueEvent {
  IssueCategory category;
  int message_index;  // agent message carrying the issue
};

struct RolloutTrace {
  Session session;
  std::vector<IssueEvent> events;
  std::map<IssueCategory, int> eligible;  // Bernoulli draws per category
};

RolloutTrace rollout_traced(const UserPolicy& user, const std::string& policy_id,
                            const AgentConfig& agent, const Context& context, std::uint64_t seed,
                            const Vocabulary& vocab = Vocabulary{});
Session rollout_session(const UserPolicy& user, const std::string& policy_id,
                        const AgentConfig& agent, const Context& context, std::uint64_t seed,
                        const Vocabulary& vocab = Vocabulary{});

struct World {
  Vocabulary vocab;
  GroundTruthUser user;
  std::vector<AgentConfig> agents;
  int max_utterance_len = 8;
};

World make_default_world(std::uint64_t gt_seed = 20251015);

// One planned conversation: which context, which agent, which seed.
struct RolloutPlan {
  Context context;
  std::size_t agent = 0;
  std::uint64_t seed = 0;
};

// n_contexts x sims_per_context rollouts, agents assigned round-robin.
std::vector<RolloutPlan> plan_rollouts(int n_contexts, int sims_per_context, std::size_t n_agents,
                                       std::uint64_t seed);
// Same contexts and agents under fresh rollout seeds.
std::vector<RolloutPlan> reseed(std::span<const RolloutPlan> plan, std::uint64_t seed);

std::vector<Session> run_rollouts(const World& world, const UserPolicy& user,
                                  const std::string& policy_id, std::span<const RolloutPlan> plan,
                                  int workers = 1);
std::vector<RolloutTrace> run_rollouts_traced(const World& world, const UserPolicy& user,
                                              const std::string& policy_id,
                                              std::span<const RolloutPlan> plan, int workers = 1);

std::vector<Session> generate_real_corpus(const World& world, int n_contexts, int sims_per_context,
                                          std::uint64_t seed, int workers = 1);

}  // namespace usersim
