#include <doctest.h>

#include <json.hpp>

#include "support.hpp"
#include "usersim/loop.hpp"
#include "usersim/report.hpp"
#include "usersim/world.hpp"

using namespace testing;

namespace {

struct Fixture {
  World world = make_default_world();
  std::vector<std::string> ids;
  NamedCorpus real{"real", {}};
  std::vector<NamedCorpus> sims;

  Fixture() {
    for (const auto& a : world.agents) ids.push_back(a.agent_id);
    const auto plan = plan_rollouts(84, 1, world.agents.size(), 5);
    const auto user = make_user_policy(world.user.params, world.max_utterance_len);
    real.sessions = run_rollouts(world, user, kGroundTruthPolicyId, plan);
    sims.push_back({"copy", real.sessions});
    sims.push_back({"other", run_rollouts(world, user, "other", reseed(plan, 9))});
  }
};

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    out.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("A/B rows test treatment against control") {
  const Fixture f;
  const auto rows = ab_rows(f.real, default_ab_pairs());
  REQUIRE(rows.size() == default_ab_pairs().size());
  for (const auto& r : rows) {
    CHECK(r.corpus == "real");
    const auto c = agent_issue_rate(f.real.sessions, r.pair.control);
    const auto t = agent_issue_rate(f.real.sessions, r.pair.treatment);
    CHECK(r.control.flagged == c.flagged);
    CHECK(r.treatment.agent_messages == t.agent_messages);
    const auto z = two_proportion_ztest(t.flagged, t.agent_messages, c.flagged, c.agent_messages);
    CHECK(r.test.z == z.z);
    CHECK(r.test.p == z.p);
  }
  const std::vector<AbPair> bad = {{"bot_02", "nobody"}};
  CHECK_THROWS_AS(ab_rows(f.real, bad), ValidationError);
}

TEST_CASE("suite report: self-comparison row, correlation and every table") {
  const Fixture f;
  IterationRecord rec;
  rec.disc_eval = {{1, true, 10, 0.8, 0.75, 0.6}, {25, false, 0, 0, 0, 0}, {std::nullopt, true, 40, 0.7, 0.7, 0.4}};
  const auto rep = build_report(f.real, f.sims, f.ids, default_ab_pairs(), {{"iter_1", rec.disc_eval}});
  REQUIRE(rep.simulators.size() == 2);
  REQUIRE(rep.simulators[0].eval.comparison.kl_divergence.has_value());
  CHECK(*rep.simulators[0].eval.comparison.kl_divergence == 0.0);
  CHECK(rep.correlation.rows[0].pearson.r == doctest::Approx(1.0));
  CHECK(rep.correlation.aggregate.has_value());
  CHECK(rep.ab.size() == 3 * default_ab_pairs().size());

  TempDir dir("report");
  write_report(rep, dir.path);
  CHECK(std::filesystem::exists(dir / "report.json"));
  const auto j = nlohmann::ordered_json::parse(slurp(dir / "report.json"));
  CHECK(j["log_bases"]["entropy"] == 2);
  CHECK(j["simulators"].size() == 2);
  CHECK(j["discriminator"][0]["rows"][1]["acc"].is_null());

  const std::map<std::string, std::size_t> rows = {
      {"linguistic_features.csv", 3}, {"discriminator.csv", 3}, {"correlation.csv", 3},
      {"action_bce.csv", 2},          {"ab_test.csv", 9},       {"issue_rate_bars.csv", 3}};
  for (const auto& name : kReportTables) {
    INFO(name);
    REQUIRE(std::filesystem::exists(dir / name));
    const auto ls = lines_of(slurp(dir / name));
    REQUIRE(ls.size() == rows.at(name) + 1);
    const auto cols = std::count(ls[0].begin(), ls[0].end(), ',');
    for (const auto& l : ls) CHECK(std::count(l.begin(), l.end(), ',') == cols);
  }
  const auto corr = lines_of(slurp(dir / "correlation.csv"));
  CHECK(corr[1].rfind("copy,1.000000,", 0) == 0);
  CHECK(corr[3].rfind("aggregate,", 0) == 0);
  const auto disc = lines_of(slurp(dir / "discriminator.csv"));
  CHECK(disc[2] == "iter_1,25,0,,,");

  CHECK_THROWS_AS(build_report(f.real, {}, f.ids, default_ab_pairs(), {}), ValidationError);
}

TEST_CASE("disc_eval survives the iteration record") {
  IterationRecord rec;
  rec.iteration = 1;
  rec.disc_eval = {{1, true, 10, 0.8, 0.75, 0.6}, {5, true, 8, 0.5, 0.0, 0.0}, {25, false, 0, 0, 0, 0},
                   {std::nullopt, true, 40, 0.7, 0.7, 0.4}};
  const auto j = nlohmann::ordered_json::parse(to_json(rec).dump());
  const auto back = disc_eval_from_json(j.at("disc_eval"));
  REQUIRE(back.size() == rec.disc_eval.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].turn == rec.disc_eval[i].turn);
    CHECK(back[i].present == rec.disc_eval[i].present);
    CHECK(back[i].n == rec.disc_eval[i].n);
    CHECK(back[i].acc == rec.disc_eval[i].acc);
    CHECK(back[i].f1 == rec.disc_eval[i].f1);
    CHECK(back[i].mcc == rec.disc_eval[i].mcc);
  }
  CHECK(rec.overall_accuracy() == 0.7);
}

}
