#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usersim/errors.hpp"
#include "usersim/tokens.hpp"

namespace usersim {

enum class Role { agent, user };
enum class Label { real, simulated };

inline constexpr int kProfileDim = 8;
inline constexpr int kSummaryDim = 8;
inline constexpr std::size_t kMaxPriorSummaries = 5;
inline constexpr int kDefaultFeatureBudget = 64;

// Policy id carried by sessions produced by the hidden ground-truth user.
inline constexpr const char* kGroundTruthPolicyId = "ground_truth";

const char* to_string(Role r);
const char* to_string(Label l);

struct Message {
  Role role = Role::agent;
  Tokens tokens;
  int turn_index = 0;  // position within the session

  bool operator==(const Message&) const = default;
};

struct Context {
  std::vector<double> profile;                     // behavior traits in [0,1]
  std::vector<std::vector<double>> prior_summaries;  // most recent last
  std::vector<double> current_summary;
  std::string user_id;
  int feature_budget = kDefaultFeatureBudget;

  int feature_count() const;
  // Drops the oldest prior summaries until the concatenated context fits the
  // feature budget.
  Context truncated() const;
  void validate() const;

  bool operator==(const Context&) const = default;
};

// Immutable after construction; the constructor enforces the structural
// invariants (alternating roles from agent, consistent turn indices,
// label/source agreement, valid context).
class Session {
 public:
  Session(Context context, std::vector<Message> messages, Label label,
          std::string source_policy_id, std::string agent_config_id, std::uint64_t rng_seed);

  const Context& context() const { return context_; }
  std::span<const Message> messages() const { return messages_; }
  Label label() const { return label_; }
  const std::string& source_policy_id() const { return source_policy_id_; }
  const std::string& agent_config_id() const { return agent_config_id_; }
  std::uint64_t rng_seed() const { return rng_seed_; }

  std::string id() const;
  int user_turns() const;
  // Message index of the t-th user message (t is 0-based).
  std::size_t user_message_index(int t) const;
  // New session holding only messages [0, end).
  Session truncated(std::size_t end) const;
  // New session with the given messages but the same metadata.
  Session with_messages(std::vector<Message> messages) const;
  Session relabeled(Label label, std::string source_policy_id) const;

  bool operator==(const Session&) const = default;

 private:
  Context context_;
  std::vector<Message> messages_;
  Label label_;
  std::string source_policy_id_;
  std::string agent_config_id_;
  std::uint64_t rng_seed_;
};

// Token-range check; the structural checks already happened at construction.
void validate_tokens(const Session& s, const Vocabulary& vocab);

std::size_t write_sessions(std::span<const Session> sessions, const std::filesystem::path& path);
std::vector<Session> read_sessions(const std::filesystem::path& path,
                                   const Vocabulary& vocab = Vocabulary{});

// JSON object of one session in the on-disk field order.
std::string session_to_json_line(const Session& s);
Session session_from_json_line(const std::string& line, const Vocabulary& vocab,
                               std::size_t line_no = 0);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed);
std::pair<std::vector<Session>, std::vector<Session>> split_corpus(
    std::span<const Session> sessions, double train_fraction, std::uint64_t seed);

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

}  // namespace usersim
