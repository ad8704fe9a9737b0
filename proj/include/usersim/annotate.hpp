#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "usersim/corpus.hpp"
#include "usersim/world.hpp"

namespace usersim {

enum class Action {
  agrees,
  disagrees,
  asks_for_clarity,
  aggressive,
  change_talk,
  gained_insight,
  general_distress,
  negative_affect,
  positive_affect,
  end_request,
};

inline constexpr std::array<Action, 10> kAllActions = {
    Action::agrees,          Action::disagrees,       Action::asks_for_clarity,
    Action::aggressive,      Action::change_talk,     Action::gained_insight,
    Action::general_distress, Action::negative_affect, Action::positive_affect,
    Action::end_request};

const char* to_string(Action a);

// Column groups of the action BCE table.
enum class ActionGroup { bad, good, moderators, user_features };
inline constexpr std::array<ActionGroup, 4> kAllActionGroups = {
    ActionGroup::bad, ActionGroup::good, ActionGroup::moderators, ActionGroup::user_features};
const char* to_string(ActionGroup g);
ActionGroup group_of(Action a);

struct ActionAnnotation {
  int message_index = 0;
  std::set<Action> labels;
};

// One annotation per user message, in order.
std::vector<ActionAnnotation> annotate_actions(const Session& s);

struct IssueAnnotation {
  IssueCategory category;
  std::vector<int> message_indices;  // agent messages, ascending
};

std::vector<IssueAnnotation> annotate_issues(const Session& s);

struct IssueRate {
  double percent = 0.0;
  double stderr_percent = 0.0;
  std::size_t flagged = 0;
  std::size_t agent_messages = 0;
};

// Share of agent messages named by at least one issue (a message flagged for
// two categories counts once).
IssueRate issue_rate(std::span<const Session> sessions);

// Fraction of user messages carrying each label.
std::map<Action, double> action_rates(std::span<const Session> sessions);

// Flagged agent messages per category (a message can count in several).
std::map<IssueCategory, std::size_t> issue_category_counts(std::span<const Session> sessions);

void write_annotations(std::span<const Session> sessions, const std::filesystem::path& path);

}  // namespace usersim
