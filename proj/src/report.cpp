#include "usersim/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "usersim/errors.hpp"

namespace usersim {

using nlohmann::ordered_json;

const std::vector<AbPair>& default_ab_pairs() {
  static const std::vector<AbPair> pairs = {
      {"bot_02", "bot_04"}, {"bot_06", "bot_08"}, {"bot_10", "bot_12"}};
  return pairs;
}

IssueRate agent_issue_rate(std::span<const Session> sessions, const std::string& agent_id) {
  std::vector<Session> mine;
  for (const auto& s : sessions) {
    if (s.agent_config_id() == agent_id) mine.push_back(s);
  }
  return issue_rate(mine);
}

std::vector<AbRow> ab_rows(const NamedCorpus& corpus, std::span<const AbPair> pairs) {
  std::vector<AbRow> out;
  for (const auto& p : pairs) {
    AbRow row{corpus.name, p, agent_issue_rate(corpus.sessions, p.control),
              agent_issue_rate(corpus.sessions, p.treatment), {}};
    if (row.control.agent_messages == 0 || row.treatment.agent_messages == 0) {
      throw ValidationError("no sessions against " + p.control + " or " + p.treatment, "ab_pairs");
    }
    row.test = two_proportion_ztest(row.treatment.flagged, row.treatment.agent_messages,
                                    row.control.flagged, row.control.agent_messages);
    out.push_back(std::move(row));
  }
  return out;
}

SuiteReport build_report(const NamedCorpus& real, std::span<const NamedCorpus> simulators,
                         std::span<const std::string> agent_ids, std::span<const AbPair> pairs,
                         std::vector<DiscTable> disc) {
  if (simulators.empty()) throw ValidationError("no simulator corpus to report on", "simulators");
  SuiteReport r;
  r.real_name = real.name;
  r.real = corpus_stats(real.sessions);
  for (const auto& sim : simulators) {
    r.simulators.push_back({sim.name, compare_corpora(real.sessions, sim.sessions)});
  }
  r.correlation = issue_rate_correlation(simulators, agent_ids, real.sessions);
  r.ab = ab_rows(real, pairs);
  for (const auto& sim : simulators) {
    auto rows = ab_rows(sim, pairs);
    r.ab.insert(r.ab.end(), rows.begin(), rows.end());
  }
  r.disc = std::move(disc);
  return r;
}

namespace {

ordered_json rate_json(const IssueRate& r) {
  return {{"percent", r.percent},
          {"stderr_percent", r.stderr_percent},
          {"flagged", r.flagged},
          {"agent_messages", r.agent_messages}};
}

ordered_json disc_rows_json(std::span<const TurnMetrics> rows) {
  ordered_json out = ordered_json::array();
  for (const auto& m : rows) {
    ordered_json j{{"turn", m.label()}, {"n", m.n}};
    j["acc"] = m.present ? ordered_json(m.acc) : ordered_json(nullptr);
    j["f1"] = m.present ? ordered_json(m.f1) : ordered_json(nullptr);
    j["mcc"] = m.present ? ordered_json(m.mcc) : ordered_json(nullptr);
    out.push_back(std::move(j));
  }
  return out;
}

std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

class Csv {
 public:
  explicit Csv(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  ~Csv() noexcept(false) {
    out_.flush();
    if (!out_ && std::uncaught_exceptions() == 0) throw IoError("write failed on " + path_.string());
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

void linguistic_row(Csv& csv, const std::string& name, const CorpusStats& s) {
  csv.row({name, std::to_string(s.per_session.size()), num(s.entropy.mean), num(s.entropy.median),
           num(s.entropy.std), num(s.ttr.mean), num(s.ttr.median), num(s.ttr.std), num(s.bigram.mean),
           num(s.bigram.median), num(s.bigram.std)});
}

void correlation_row(Csv& csv, const CorrelationRow& r) {
  csv.row({r.simulator, num(r.pearson.r), num(r.pearson.t), sci(r.pearson.p),
           std::to_string(r.pearson.n), r.kl ? num(*r.kl) : ""});
}

void bar_row(Csv& csv, const std::string& name, const IssueRate& r) {
  csv.row({name, num(r.percent), num(r.stderr_percent), std::to_string(r.flagged),
           std::to_string(r.agent_messages)});
}

}  // namespace

ordered_json to_json(const SuiteReport& r) {
  ordered_json j;
  j["log_bases"] = {{"entropy", 2}, {"kl", "e"}, {"bce", "e"}};
  j["real"] = {{"name", r.real_name}, {"stats", to_json(r.real)}};
  ordered_json sims = ordered_json::array();
  for (const auto& s : r.simulators) sims.push_back({{"name", s.name}, {"eval", to_json(s.eval)}});
  j["simulators"] = sims;
  j["correlation"] = to_json(r.correlation);
  ordered_json ab = ordered_json::array();
  for (const auto& a : r.ab) {
    ab.push_back({{"corpus", a.corpus},
                  {"control", a.pair.control},
                  {"treatment", a.pair.treatment},
                  {"control_rate", rate_json(a.control)},
                  {"treatment_rate", rate_json(a.treatment)},
                  {"z", a.test.z},
                  {"p", a.test.p}});
  }
  j["ab_test"] = ab;
  ordered_json disc = ordered_json::array();
  for (const auto& d : r.disc) disc.push_back({{"name", d.name}, {"rows", disc_rows_json(d.rows)}});
  j["discriminator"] = disc;
  return j;
}

void write_report(const SuiteReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::binary);
    out << to_json(r).dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
  }
  {
    Csv csv(dir / "linguistic_features.csv");
    csv.row({"corpus", "n_sessions", "entropy_mean", "entropy_median", "entropy_std", "ttr_mean",
             "ttr_median", "ttr_std", "bigram_mean", "bigram_median", "bigram_std"});
    linguistic_row(csv, r.real_name, r.real);
    for (const auto& s : r.simulators) linguistic_row(csv, s.name, s.eval.simulated);
  }
  {
    Csv csv(dir / "discriminator.csv");
    csv.row({"simulator", "turn", "n", "acc", "f1", "mcc"});
    for (const auto& d : r.disc) {
      for (const auto& m : d.rows) {
        csv.row({d.name, m.label(), std::to_string(m.n), m.present ? num(m.acc) : "",
                 m.present ? num(m.f1) : "", m.present ? num(m.mcc) : ""});
      }
    }
  }
  {
    Csv csv(dir / "correlation.csv");
    csv.row({"simulator", "r", "t", "p", "n", "kl"});
    for (const auto& row : r.correlation.rows) correlation_row(csv, row);
    if (r.correlation.aggregate) correlation_row(csv, *r.correlation.aggregate);
  }
  {
    Csv csv(dir / "action_bce.csv");
    std::vector<std::string> head{"simulator", "bce"};
    for (ActionGroup g : kAllActionGroups) head.push_back(to_string(g));
    csv.row(head);
    for (const auto& s : r.simulators) {
      std::vector<std::string> cells{s.name, num(s.eval.comparison.bce)};
      for (ActionGroup g : kAllActionGroups) {
        const auto it = s.eval.comparison.bce_by_group.find(g);
        cells.push_back(it == s.eval.comparison.bce_by_group.end() ? "" : num(it->second));
      }
      csv.row(cells);
    }
  }
  {
    Csv csv(dir / "ab_test.csv");
    csv.row({"corpus", "control", "treatment", "control_rate", "treatment_rate", "z", "p"});
    for (const auto& a : r.ab) {
      csv.row({a.corpus, a.pair.control, a.pair.treatment, num(a.control.percent),
               num(a.treatment.percent), num(a.test.z), sci(a.test.p)});
    }
  }
  {
    Csv csv(dir / "issue_rate_bars.csv");
    csv.row({"corpus", "issue_rate_percent", "stderr_percent", "flagged", "agent_messages"});
    bar_row(csv, r.real_name, r.real.issue_rate);
    for (const auto& s : r.simulators) bar_row(csv, s.name, s.eval.simulated.issue_rate);
  }
}

std::vector<TurnMetrics> disc_eval_from_json(const ordered_json& j) {
  if (!j.is_array()) throw ValidationError("disc_eval must be an array", "disc_eval");
  std::vector<TurnMetrics> out;
  for (const auto& e : j) {
    TurnMetrics m;
    try {
      const auto turn = e.at("turn").get<std::string>();
      if (turn != "overall") m.turn = std::stoi(turn);
      m.n = e.at("n").get<std::size_t>();
      m.present = !e.at("acc").is_null();
      if (m.present) {
        m.acc = e.at("acc").get<double>();
        m.f1 = e.at("f1").get<double>();
        m.mcc = e.at("mcc").get<double>();
      }
    } catch (const std::exception& ex) {
      throw ValidationError(std::string("bad disc_eval entry: ") + ex.what(), "disc_eval");
    }
    out.push_back(m);
  }
  return out;
}

}  // namespace usersim
