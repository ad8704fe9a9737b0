#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace testing;

namespace {

int present(const Tokens& u, Token t) { return std::find(u.begin(), u.end(), t) != u.end() ? 1 : 0; }

// Random reward trace built straight from rewards.
RewardTrace trace_of(const std::vector<double>& r) {
  RewardTrace tr;
  tr.logodds.push_back(0.0);
  for (double x : r) tr.logodds.push_back(tr.logodds.back() + x);
  tr.rewards = r;
  return tr;
}

}  // namespace

TEST_SUITE("reward_mining") {

TEST_CASE("rewards are log-odds increments") {
  const std::vector<double> flat = {0.5, 0.7, 0.7};
  const auto tr = reward_trace_from_probs("s", flat);
  REQUIRE(tr.rewards.size() == 3);
  CHECK(tr.rewards[0] == 0.0);  // from the 0.5 baseline
  CHECK(tr.rewards[2] == 0.0);  // p unchanged
  CHECK(tr.logodds.size() == 4);

  const std::vector<double> one = {0.7310586};
  CHECK(std::fabs(reward_trace_from_probs("s", one).rewards[0] - 1.0) < 1e-6);

  // clamped probabilities stay finite
  const std::vector<double> extreme = {0.0, 1.0};
  const auto ex = reward_trace_from_probs("s", extreme);
  CHECK(std::isfinite(ex.rewards[0]));
  CHECK(ex.rewards[1] == doctest::Approx(2.0 * oracle_logit(1.0 - kProbClamp)));
}

TEST_CASE("property: rewards telescope to the final log-odds") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const DiscriminatorParams d = gen_disc(rng, 0.5);
    const Session s = gen_session(rng, 1 + static_cast<int>(rng.below(12)));
    const auto tr = compute_rewards(d, s);
    REQUIRE(static_cast<int>(tr.rewards.size()) == s.user_turns());
    double sum = 0.0;
    for (double r : tr.rewards) sum += r;
    const double p_last = predict_turns(d, s).back().p_real;
    CHECK(std::fabs(sum - oracle_logit(p_last)) < 1e-9);
    CHECK(tr.session_ref == s.id());
  }
}

TEST_CASE("critical turns: argmax and argmin, earliest on ties") {
  CHECK(select_critical_turns(trace_of({0.2, -0.5, 0.9})) == std::pair<std::size_t, std::size_t>{2, 1});
  CHECK(select_critical_turns(trace_of({1.0, 1.0, -2.0, -2.0})) == std::pair<std::size_t, std::size_t>{0, 2});
  CHECK(select_critical_turns(trace_of({0.3})) == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK_THROWS_AS(select_critical_turns(RewardTrace{}), ValidationError);

  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> r(1 + rng.below(15));
    // coarse values so ties are common
    for (double& x : r) x = static_cast<double>(static_cast<int>(rng.below(7)) - 3);
    std::size_t hi = 0, lo = 0;
    for (std::size_t a = 0; a < r.size(); ++a) {
      bool is_hi = true, is_lo = true;
      for (std::size_t b = 0; b < r.size(); ++b) {
        if (r[b] > r[a] || (r[b] == r[a] && b < a)) is_hi = false;
        if (r[b] < r[a] || (r[b] == r[a] && b < a)) is_lo = false;
      }
      if (is_hi) hi = a;
      if (is_lo) lo = a;
    }
    CHECK(select_critical_turns(trace_of(r)) == std::pair{hi, lo});
  }
}

TEST_CASE("mining against a keyed discriminator prefers the rewarded token") {
  // The discriminator only sees whether a message contains INSIGHT (+) or
  // DISTRESS (-); each is worth 2 nats of log-odds.
  DiscriminatorParams d;
  d.weights()[1 + tok::kInsight] = 20.0;
  d.weights()[1 + tok::kDistress] = -20.0;

  FeatureSpec spec;
  PolicyParams pol(spec);
  pol.weight(0, tok::kInsight) = 3.0;
  pol.weight(0, tok::kDistress) = 3.0;
  pol.weight(0, tok::kEndUtterance) = 3.0;

  Rng rng(3);
  const auto sessions = gen_corpus(rng, 40, Label::simulated, 1, 5);
  MiningConfig cfg;
  cfg.seed = 11;
  const auto pairs = mine_pairs(pol, d, sessions, cfg);
  REQUIRE(pairs.size() >= 40);
  std::size_t k = 0;
  for (const auto& s : sessions) {
    const auto tr = compute_rewards(d, s);
    const auto [hi, lo] = select_critical_turns(tr);
    std::vector<std::size_t> turns{hi};
    if (lo != hi) turns.push_back(lo);
    for (std::size_t t : turns) {
      if (k == pairs.size() || pairs[k].session_ref != s.id() || pairs[k].source_turn != static_cast<int>(t) + 1) continue;
      const auto& p = pairs[k++];
      const auto msgs = s.messages();
      const std::size_t idx = s.user_message_index(static_cast<int>(t));
      CHECK(p.history == std::vector<Message>(msgs.begin(), msgs.begin() + static_cast<std::ptrdiff_t>(idx)));
      CHECK(p.context == s.context());
      const double rc = 2.0 * (present(p.chosen, tok::kInsight) - present(p.chosen, tok::kDistress));
      const double rr = 2.0 * (present(p.rejected, tok::kInsight) - present(p.rejected, tok::kDistress));
      CHECK(p.r_chosen == doctest::Approx(rc).epsilon(1e-9));
      CHECK(p.r_rejected == doctest::Approx(rr).epsilon(1e-9));
      CHECK(p.r_chosen > p.r_rejected);
      CHECK(p.chosen != p.rejected);
    }
  }
  CHECK(k == pairs.size());  // every pair came from a critical turn, in order

  // most pairs carry the full signal
  std::size_t strong = 0;
  for (const auto& p : pairs) strong += p.r_chosen - p.r_rejected > 3.0;
  CHECK(strong * 2 > pairs.size());

  // same seed, same pairs; worker count does not matter
  cfg.workers = 3;
  CHECK(mine_pairs(pol, d, sessions, cfg) == pairs);
}

TEST_CASE("no pair without a preference signal") {
  Rng rng(4);
  const auto sessions = gen_corpus(rng, 10, Label::simulated);
  MiningConfig cfg;
  // identical alternatives
  PolicyParams forced{FeatureSpec{}};
  forced.weight(0, 42) = 60.0;
  CHECK(mine_pairs(forced, gen_disc(rng), sessions, cfg).empty());
  // a discriminator that ignores the utterance
  CHECK(mine_pairs(gen_policy(rng), DiscriminatorParams{}, sessions, cfg).empty());

  cfg.k_alternatives = 1;
  CHECK_THROWS_AS(mine_pairs(forced, DiscriminatorParams{}, sessions, cfg), ValidationError);
}

TEST_CASE("property: r_chosen >= r_rejected and at most two pairs per session") {
  Rng rng(5);
  const auto sessions = gen_corpus(rng, 30, Label::simulated);
  const auto pairs = mine_pairs(gen_policy(rng, Family::full, 0.5), gen_disc(rng, 1.0), sessions, MiningConfig{});
  CHECK(!pairs.empty());
  std::map<std::string, int> per;
  for (const auto& p : pairs) {
    CHECK(p.r_chosen >= p.r_rejected);
    CHECK(!p.history.empty());
    CHECK(p.history.back().role == Role::agent);
    ++per[p.session_ref];
  }
  for (const auto& [ref, n] : per) CHECK(n <= 2);
}

TEST_CASE("filter keeps positive chosen and negative rejected") {
  Rng rng(6);
  const std::vector<PreferencePair> cases = {
      gen_pair(rng, 0.5, -0.5), gen_pair(rng, 0.5, 0.2), gen_pair(rng, -0.1, -0.5),
      gen_pair(rng, 0.0, -0.5), gen_pair(rng, 0.5, 0.0), gen_pair(rng, 2.0, -0.01)};
  const auto kept = filter_pairs(cases);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == cases[0]);
  CHECK(kept[1] == cases[5]);
}

TEST_CASE("property: filter is an order-preserving, idempotent selection") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    std::vector<PreferencePair> in;
    const std::size_t n = rng.below(12);
    for (std::size_t j = 0; j < n; ++j) {
      const double a = (2.0 * rng.uniform() - 1.0), b = (2.0 * rng.uniform() - 1.0);
      in.push_back(gen_pair(rng, std::max(a, b), std::min(a, b)));
    }
    const auto out = filter_pairs(in);
    std::size_t expect = 0;
    for (const auto& p : in) expect += p.r_chosen > 0 && p.r_rejected < 0;
    CHECK(out.size() == expect);
    std::size_t pos = 0;
    for (const auto& p : out) {
      CHECK(p.r_chosen > 0.0);
      CHECK(p.r_rejected < 0.0);
      while (pos < in.size() && !(in[pos] == p)) ++pos;
      CHECK(pos < in.size());
      ++pos;
    }
    CHECK(filter_pairs(out) == out);
  }
}

TEST_CASE("pairs JSONL round trip and malformed lines") {
  Rng rng(8);
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 20; ++i) {
    const double a = (6.0 * rng.uniform() - 3.0), b = (6.0 * rng.uniform() - 3.0);
    PreferencePair p = gen_pair(rng, std::max(a, b), std::min(a, b));
    p.source_turn = 1 + static_cast<int>(rng.below(9));
    pairs.push_back(p);
  }
  TempDir dir("pairs");
  CHECK(write_pairs(pairs, dir / "p.jsonl") == pairs.size());
  CHECK(read_pairs(dir / "p.jsonl") == pairs);

  const std::string good = pair_to_json_line(pairs[0]);
  auto expect_error = [&](const std::string& bad, const std::string& field) {
    spit(dir / "bad.jsonl", good + "\n" + bad + "\n");
    try {
      read_pairs(dir / "bad.jsonl");
      FAIL("accepted: " << bad);
    } catch (const ValidationError& e) {
      CHECK(e.line() == 2);
      if (!field.empty()) CHECK(e.field() == field);
    }
  };
  expect_error("{not json", "");
  expect_error("[1,2]", "");
  auto edit = [&](const char* key, const nlohmann::ordered_json& v) {
    auto j = nlohmann::ordered_json::parse(good);
    j[key] = v;
    return j.dump();
  };
  auto drop = [&](const char* key) {
    auto j = nlohmann::ordered_json::parse(good);
    j.erase(key);
    return j.dump();
  };
  expect_error(drop("chosen"), "chosen");
  expect_error(drop("r_rejected"), "r_rejected");
  expect_error(edit("source_turn", 0), "source_turn");
  expect_error(edit("chosen", Tokens{}), "chosen");
  expect_error(edit("chosen", pairs[0].rejected), "rejected");
  expect_error(edit("rejected", Tokens{500}), "rejected");
  expect_error(edit("r_chosen", pairs[0].r_rejected - 1.0), "r_chosen");
  expect_error(edit("history", nlohmann::ordered_json::array()), "history");
  CHECK_THROWS_AS(read_pairs(dir / "missing.jsonl"), IoError);
}

}
