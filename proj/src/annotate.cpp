#include "usersim/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>

#include <json.hpp>

namespace usersim {

const char* to_string(Action a) {
  switch (a) {
    case Action::agrees: return "agrees";
    case Action::disagrees: return "disagrees";
    case Action::asks_for_clarity: return "asks_for_clarity";
    case Action::aggressive: return "aggressive";
    case Action::change_talk: return "change_talk";
    case Action::gained_insight: return "gained_insight";
    case Action::general_distress: return "general_distress";
    case Action::negative_affect: return "negative_affect";
    case Action::positive_affect: return "positive_affect";
    case Action::end_request: return "end_request";
  }
  return "?";
}

const char* to_string(ActionGroup g) {
  switch (g) {
    case ActionGroup::bad: return "bad";
    case ActionGroup::good: return "good";
    case ActionGroup::moderators: return "moderators";
    case ActionGroup::user_features: return "user_features";
  }
  return "?";
}

ActionGroup group_of(Action a) {
  switch (a) {
    case Action::disagrees:
    case Action::asks_for_clarity:
    case Action::aggressive: return ActionGroup::bad;
    case Action::agrees:
    case Action::change_talk:
    case Action::gained_insight: return ActionGroup::good;
    case Action::end_request: return ActionGroup::moderators;
    default: return ActionGroup::user_features;
  }
}

namespace {

constexpr std::array<std::pair<Token, Action>, 10> kActionTokens = {{
    {tok::kAgree, Action::agrees},
    {tok::kDisagree, Action::disagrees},
    {tok::kClarify, Action::asks_for_clarity},
    {tok::kAggressive, Action::aggressive},
    {tok::kChangeTalk, Action::change_talk},
    {tok::kInsight, Action::gained_insight},
    {tok::kDistress, Action::general_distress},
    {tok::kNegAffect, Action::negative_affect},
    {tok::kPosAffect, Action::positive_affect},
    {tok::kEndRequest, Action::end_request},
}};

bool has(const Tokens& ts, Token t) { return std::find(ts.begin(), ts.end(), t) != ts.end(); }

std::optional<int> question_of(const Tokens& ts) {
  const Vocabulary vocab;
  std::optional<int> q;
  for (Token t : ts) {
    if (auto k = vocab.question_topic(t)) q = *k;
  }
  return q;
}

bool mentions(const Tokens& ts, int topic) {
  const Vocabulary vocab;
  return std::any_of(ts.begin(), ts.end(), [&](Token t) { return vocab.topic_of(t) == topic; });
}

bool is_closing(const Tokens& ts) { return has(ts, tok::kWrapup) || has(ts, tok::kEndSession); }

}  // namespace

std::vector<ActionAnnotation> annotate_actions(const Session& s) {
  std::vector<ActionAnnotation> out;
  for (const Message& m : s.messages()) {
    if (m.role != Role::user) continue;
    ActionAnnotation a;
    a.message_index = m.turn_index;
    for (const auto& [t, act] : kActionTokens) {
      if (has(m.tokens, t)) a.labels.insert(act);
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<IssueAnnotation> annotate_issues(const Session& s) {
  const auto msgs = s.messages();
  const auto n = static_cast<int>(msgs.size());
  auto tokens = [&](int i) -> const Tokens& { return msgs[static_cast<std::size_t>(i)].tokens; };

  std::vector<IssueAnnotation> out;
  auto flag = [&](IssueCategory c, int i) { out.push_back({c, {i}}); };

  std::array<std::vector<int>, kNumTopics> openings;
  for (int i = 0; i < n; i += 2) {
    const Tokens& a = tokens(i);
    const auto q = question_of(a);
    if (i >= 2) {
      const Tokens& before = tokens(i - 1);
      const auto prev_q = question_of(tokens(i - 2));
      // asked again although the user already answered
      if (q && prev_q && *q == *prev_q && mentions(before, *q)) flag(IssueCategory::repetitive, i);
      if (has(before, tok::kEndRequest) && !is_closing(a)) {
        flag(IssueCategory::ignores_end_request, i);
      }
      if (has(a, tok::kWrapup) && !has(before, tok::kEndRequest) &&
          (has(before, tok::kDistress) || has(before, tok::kNegAffect))) {
        flag(IssueCategory::premature_wrapup, i);
      }
    }
    if (i + 1 < n) {
      const Tokens& reply = tokens(i + 1);
      if (has(a, tok::kConfusing) && has(reply, tok::kClarify)) flag(IssueCategory::confusing, i);
      if (has(a, tok::kContradict) && has(reply, tok::kDisagree)) {
        flag(IssueCategory::contradiction, i);
      }
    }
    if (q) {
      const bool continues = i >= 2 && question_of(tokens(i - 2)) == q;
      if (!continues) openings[static_cast<std::size_t>(*q)].push_back(i);
    }
  }
  for (const auto& o : openings) {
    if (o.size() >= 3) out.push_back({IssueCategory::circular_conversation, o});
  }
  std::stable_sort(out.begin(), out.end(), [](const IssueAnnotation& a, const IssueAnnotation& b) {
    return a.message_indices.front() < b.message_indices.front();
  });
  return out;
}

IssueRate issue_rate(std::span<const Session> sessions) {
  IssueRate r;
  for (const Session& s : sessions) {
    std::set<int> flagged;
    for (const auto& a : annotate_issues(s)) flagged.insert(a.message_indices.begin(), a.message_indices.end());
    r.flagged += flagged.size();
    r.agent_messages += (s.messages().size() + 1) / 2;
  }
  if (r.agent_messages == 0) throw ValidationError("no agent messages to rate", "sessions");
  const double p = static_cast<double>(r.flagged) / static_cast<double>(r.agent_messages);
  r.percent = 100.0 * p;
  r.stderr_percent = 100.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(r.agent_messages));
  return r;
}

std::map<Action, double> action_rates(std::span<const Session> sessions) {
  std::map<Action, double> counts;
  for (Action a : kAllActions) counts[a] = 0.0;
  std::size_t n = 0;
  for (const Session& s : sessions) {
    for (const auto& ann : annotate_actions(s)) {
      ++n;
      for (Action a : ann.labels) counts[a] += 1.0;
    }
  }
  if (n > 0) {
    for (auto& [a, c] : counts) c /= static_cast<double>(n);
  }
  return counts;
}

std::map<IssueCategory, std::size_t> issue_category_counts(std::span<const Session> sessions) {
  std::map<IssueCategory, std::size_t> out;
  for (IssueCategory c : kAllIssueCategories) out[c] = 0;
  for (const Session& s : sessions) {
    for (const auto& a : annotate_issues(s)) out[a.category] += a.message_indices.size();
  }
  return out;
}

void write_annotations(std::span<const Session> sessions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  std::size_t written = 0;
  for (const Session& s : sessions) {
    nlohmann::ordered_json j;
    j["session_ref"] = s.id();
    auto actions = nlohmann::ordered_json::array();
    for (const auto& a : annotate_actions(s)) {
      std::vector<std::string> labels;
      for (Action x : a.labels) labels.emplace_back(to_string(x));
      actions.push_back({{"message_index", a.message_index}, {"labels", labels}});
    }
    auto issues = nlohmann::ordered_json::array();
    for (const auto& a : annotate_issues(s)) {
      issues.push_back({{"category", to_string(a.category)}, {"message_indices", a.message_indices}});
    }
    j["actions"] = std::move(actions);
    j["issues"] = std::move(issues);
    out << j.dump() << '\n';
    if (!out) throw IoError("write failed on " + path.string(), written);
    ++written;
  }
}

}  // namespace usersim
