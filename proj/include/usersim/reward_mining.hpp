#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usersim/corpus.hpp"
#include "usersim/discriminator.hpp"
#include "usersim/policy.hpp"

namespace usersim {

struct RewardTrace {
  std::string session_ref;
  std::vector<double> logodds;  // [0] is the p = 0.5 baseline, then one per user turn
  std::vector<double> rewards;  // rewards[t-1] = logodds[t] - logodds[t-1]
};

RewardTrace compute_rewards(const DiscriminatorParams& disc, const Session& session);

// Builds a trace from raw per-turn probabilities (clamped first).
RewardTrace reward_trace_from_probs(std::string session_ref, std::span<const double> p_real);

// 0-based user-turn indices of the highest and lowest reward; ties go to the
// earliest turn.
std::pair<std::size_t, std::size_t> select_critical_turns(const RewardTrace& trace);

struct PreferencePair {
  std::vector<Message> history;  // ends with the agent message answered
  Context context;
  Tokens chosen;
  Tokens rejected;
  double r_chosen = 0.0;
  double r_rejected = 0.0;
  int source_turn = 0;  // 1-based user turn
  std::string session_ref;

  bool operator==(const PreferencePair&) const = default;
};

struct MiningConfig {
  int k_alternatives = 8;
  int max_utterance_len = 8;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Unfiltered pairs: up to two per session (the argmax and argmin turns,
// collapsed when they coincide).
std::vector<PreferencePair> mine_pairs(const PolicyParams& policy, const DiscriminatorParams& disc,
                                       std::span<const Session> sessions, const MiningConfig& config);

// Pairs with r_chosen > 0 and r_rejected < 0, order preserved.
std::vector<PreferencePair> filter_pairs(std::span<const PreferencePair> pairs);

std::string pair_to_json_line(const PreferencePair& p);
PreferencePair pair_from_json_line(const std::string& line, const Vocabulary& vocab,
                                   std::size_t line_no = 0);
std::size_t write_pairs(std::span<const PreferencePair> pairs, const std::filesystem::path& path);
std::vector<PreferencePair> read_pairs(const std::filesystem::path& path,
                                       const Vocabulary& vocab = Vocabulary{});

}  // namespace usersim
