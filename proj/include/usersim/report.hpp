#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "usersim/annotate.hpp"
#include "usersim/discriminator.hpp"
#include "usersim/metrics.hpp"

namespace usersim {

// Control/treatment bots compared by issue rate.
struct AbPair {
  std::string control;
  std::string treatment;
};

const std::vector<AbPair>& default_ab_pairs();

struct AbRow {
  std::string corpus;
  AbPair pair;
  IssueRate control;
  IssueRate treatment;
  ZTest test;  // treatment minus control
};

// Issue rate of the sessions run against one agent.
IssueRate agent_issue_rate(std::span<const Session> sessions, const std::string& agent_id);

std::vector<AbRow> ab_rows(const NamedCorpus& corpus, std::span<const AbPair> pairs);

// Per-turn discriminator table of one simulator or iteration.
struct DiscTable {
  std::string name;
  std::vector<TurnMetrics> rows;
};

struct SimulatorReport {
  std::string name;
  EvalReport eval;  // against the real corpus
};

struct SuiteReport {
  std::string real_name = "real";
  CorpusStats real;
  std::vector<SimulatorReport> simulators;
  CorrelationTable correlation;
  std::vector<AbRow> ab;
  std::vector<DiscTable> disc;
};

// Needs at least one simulator; the correlation table needs >= 3 agents.
SuiteReport build_report(const NamedCorpus& real, std::span<const NamedCorpus> simulators,
                         std::span<const std::string> agent_ids, std::span<const AbPair> pairs,
                         std::vector<DiscTable> disc);

nlohmann::ordered_json to_json(const SuiteReport& r);

inline const std::vector<std::string> kReportTables = {
    "linguistic_features.csv", "discriminator.csv", "correlation.csv",
    "action_bce.csv",          "ab_test.csv",       "issue_rate_bars.csv"};

// Writes report.json and every table of kReportTables into dir.
void write_report(const SuiteReport& r, const std::filesystem::path& dir);

// Parses the "disc_eval" array of an iteration record.
std::vector<TurnMetrics> disc_eval_from_json(const nlohmann::ordered_json& j);

}  // namespace usersim
