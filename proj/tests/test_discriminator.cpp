#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace testing;

namespace {

// Puts INSIGHT into every user message (real) or strips it (simulated).
Session mark_insight(const Session& s, bool real) {
  std::vector<Message> msgs(s.messages().begin(), s.messages().end());
  for (auto& m : msgs) {
    if (m.role != Role::user) continue;
    Tokens t;
    for (Token x : m.tokens) {
      if (x != tok::kInsight) t.push_back(x);
    }
    if (real) t.insert(t.begin(), tok::kInsight);
    m.tokens = t;
  }
  return Session(s.context(), msgs, real ? Label::real : Label::simulated,
                 real ? kGroundTruthPolicyId : "gen", s.agent_config_id(), s.rng_seed());
}

std::vector<Session> marked(Rng& rng, std::size_t n, bool real) {
  std::vector<Session> out;
  for (const auto& s : gen_corpus(rng, n, real ? Label::real : Label::simulated, 1, 6)) out.push_back(mark_insight(s, real));
  return out;
}

}  // namespace

TEST_SUITE("discriminator") {

TEST_CASE("zero weights predict 0.5 everywhere") {
  Rng rng(1);
  const DiscriminatorParams d;
  for (int i = 0; i < 30; ++i) {
    for (const auto& p : predict_turns(d, gen_session(rng, 1 + i % 7))) CHECK(p.p_real == 0.5);
  }
}

TEST_CASE("property: predictions are causal in the prefix") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const DiscriminatorParams d = gen_disc(rng);
    const Session s = gen_session(rng, 2 + static_cast<int>(rng.below(8)), Label::simulated, Vocabulary{}, true);
    const auto full = predict_turns(d, s);
    REQUIRE(static_cast<int>(full.size()) == s.user_turns());
    for (int t = 0; t < s.user_turns(); ++t) {
      // cut right after user turn t, and again with the next agent message kept
      const std::size_t cut = s.user_message_index(t) + 1;
      for (std::size_t end : {cut, std::min(cut + 1, s.messages().size())}) {
        const auto part = predict_turns(d, s.truncated(end));
        REQUIRE(static_cast<int>(part.size()) == t + 1);
        for (int k = 0; k <= t; ++k) {
          CHECK(part[static_cast<std::size_t>(k)].turn_index == k + 1);
          CHECK(part[static_cast<std::size_t>(k)].p_real == full[static_cast<std::size_t>(k)].p_real);
        }
      }
    }
  }
}

TEST_CASE("hand-computed features of a two-turn session") {
  const Vocabulary v;
  REQUIRE(v.topic_of(38) == 1);
  REQUIRE(v.topic_of(29) == 0);
  REQUIRE(!v.topic_of(122).has_value());
  REQUIRE(v.question(1) == 19);
  REQUIRE(v.question(2) == 20);

  Context c;
  c.user_id = "hand";
  c.profile = {0.9, 0.2, 0.7, 0.5, 0.5, 0.5, 0.5, 0.5};
  c.current_summary = {0.8, 0.1, 0.5, 0.2, 0, 0, 0, 0};
  c.prior_summaries = {{0.2, 0.4, 0, 0, 0, 0, 0, 0}, {0.4, 0, 0.6, 0, 0, 0, 0, 0}};
  const std::vector<Message> msgs = {
      {Role::agent, {tok::kAck, 19}, 0},
      {Role::user, {38, 38, tok::kClarify, tok::kEndUtterance}, 1},
      {Role::agent, {tok::kConfusing, tok::kSuggest, tok::kContradict, 20}, 2},
      {Role::user, {tok::kEndRequest, 29, tok::kDisagree, 122, tok::kEndUtterance}, 3},
  };
  const Session s(c, msgs, Label::real, kGroundTruthPolicyId, "bot", 1);

  const DiscFeatureSpec spec;
  const int S = spec.stats_offset();
  std::vector<double> x1(static_cast<std::size_t>(spec.feature_dim()), 0.0);
  auto at = [](std::vector<double>& x, int i) -> double& { return x[static_cast<std::size_t>(i)]; };
  at(x1, 0) = 1.0;
  at(x1, 1 + 38) = 0.1;
  at(x1, 1 + tok::kClarify) = 0.1;
  at(x1, S + 0) = 2.0 / 3.0;  // token 38 twice out of 3 words
  at(x1, S + 1) = 2.0 / 3.0;
  at(x1, S + 2) = 1.0 / 30.0;
  at(x1, S + 3) = 0.01;   // summary weight of topic 1
  at(x1, S + 4) = 0.02;   // prior mean of topic 1
  at(x1, S + 6) = 0.1;    // off summary
  at(x1, S + 9) = -0.12;  // clarify trait 4 * (0.2 - 0.5) / 10
  at(x1, S + 16) = 0.1;   // answered Q_1
  at(x1, S + 24) = 0.1;   // repeated token

  std::vector<double> x2 = x1;
  for (Token t : {tok::kEndRequest, Token{29}, tok::kDisagree, Token{122}}) at(x2, 1 + static_cast<int>(t)) = 0.1;
  at(x2, S + 0) = 2.0 / 7.0;
  at(x2, S + 1) = 6.0 / 7.0;
  at(x2, S + 2) = 2.0 / 30.0;
  at(x2, S + 3) = 0.09;
  at(x2, S + 4) = 0.05;
  at(x2, S + 5) = 0.1;   // main topic 0
  at(x2, S + 8) = 0.16;  // end request 4 * 0.4 / 10
  at(x2, S + 10) = 0.08;
  at(x2, S + 17) = 0.1;  // Q_2 unanswered
  at(x2, S + 19) = 0.1;  // confusing without clarify
  at(x2, S + 20) = 0.1;  // disagree reacts to the suggestion
  at(x2, S + 22) = 0.1;  // and to the contradiction

  const auto feats = session_features(spec, s);
  REQUIRE(feats.size() == 2);
  for (std::size_t i = 0; i < x1.size(); ++i) {
    INFO("feature ", i);
    CHECK(std::fabs(feats[0][i] - x1[i]) < 1e-12);
    CHECK(std::fabs(feats[1][i] - x2[i]) < 1e-12);
  }

  Rng rng(3);
  const DiscriminatorParams d = gen_disc(rng, 1.0);
  const auto pred = predict_turns(d, s);
  for (std::size_t t = 0; t < 2; ++t) {
    double z = 0.0;
    for (std::size_t i = 0; i < x1.size(); ++i) z += d.weights()[i] * (t ? x2[i] : x1[i]);
    CHECK(std::fabs(pred[t].p_real - 1.0 / (1.0 + std::exp(-z))) < 1e-12);
  }
}

TEST_CASE("probabilities are clamped away from 0 and 1") {
  DiscriminatorParams d;
  d.weights()[0] = 100.0;
  Rng rng(4);
  const Session s = gen_session(rng, 2);
  for (const auto& p : predict_turns(d, s)) CHECK(p.p_real == 1.0 - kProbClamp);
  d.weights()[0] = -100.0;
  for (const auto& p : predict_turns(d, s)) CHECK(p.p_real == kProbClamp);
  CHECK(logit(0.5) == 0.0);
  CHECK(logit(0.8) == doctest::Approx(oracle_logit(0.8)).epsilon(1e-14));
}

TEST_CASE("same distribution on both sides: held-out accuracy near 50%") {
  Rng rng(5);
  const auto real = gen_corpus(rng, 1000, Label::real);
  const auto sim = gen_corpus(rng, 1000, Label::simulated);
  const auto res = disc_train(DiscriminatorParams{}, real, sim, DiscTrainConfig{});
  const auto real2 = gen_corpus(rng, 1000, Label::real);
  const auto sim2 = gen_corpus(rng, 1000, Label::simulated);
  const auto m = disc_evaluate(res.params, real2, sim2, kDefaultTurnPoints);
  REQUIRE(m[0].present);
  REQUIRE(m[0].n == 2000);
  CHECK(std::fabs(m[0].acc - 0.5) <= 3.0 * std::sqrt(0.25 / 2000.0));
}

TEST_CASE("separable corpora are told apart") {
  Rng rng(6);
  const auto real = marked(rng, 300, true);
  const auto sim = marked(rng, 300, false);
  // bounded features learn slowly; give the convex fit time to converge
  DiscTrainConfig cfg;
  cfg.lr = 2.0;
  cfg.epochs = 3000;
  const auto res = disc_train(DiscriminatorParams{}, real, sim, cfg);
  for (std::size_t e = 1; e < res.loss_curve.size(); ++e) CHECK(res.loss_curve[e] <= res.loss_curve[e - 1] + 1e-12);
  const auto real2 = marked(rng, 300, true);
  const auto sim2 = marked(rng, 300, false);
  const auto m = disc_evaluate(res.params, real2, sim2, kDefaultTurnPoints);
  CHECK(m.back().acc > 0.95);
  CHECK(m[0].acc > 0.95);
}

TEST_CASE("discriminator gradient matches central differences") {
  Rng rng(7);
  const auto real = gen_corpus(rng, 6, Label::real);
  const auto sim = gen_corpus(rng, 6, Label::simulated);
  const auto rows = disc_rows(DiscFeatureSpec{}, real, sim);
  const DiscriminatorParams d = gen_disc(rng, 0.5);
  const auto lg = disc_objective(d, rows);
  auto f = [&](const std::vector<double>& w) { return disc_objective(DiscriminatorParams(d.spec(), w), rows).loss; };
  const std::vector<double> w(d.weights().begin(), d.weights().end());
  CHECK(fd_max_rel_error(f, w, lg.grad, fd_coords(lg.grad, 60, 60, rng)) < 1e-4);
  // the loss is plain BCE of the clamped predictions wherever no clamp is active
  double bce = 0.0;
  for (const auto& r : rows) {
    const double p = predict_prob(d, r.x);
    bce -= r.y * std::log(p) + (1 - r.y) * std::log(1 - p);
  }
  CHECK(lg.loss == doctest::Approx(bce / static_cast<double>(rows.size())).epsilon(1e-12));
}

TEST_CASE("confusion metrics") {
  Confusion c{40, 10, 10, 40};
  CHECK(c.accuracy() == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(c.f1() == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(c.mcc() == doctest::Approx(0.60).epsilon(1e-12));

  Confusion perfect{25, 0, 0, 25};
  CHECK(perfect.accuracy() == 1.0);
  CHECK(perfect.f1() == 1.0);
  CHECK(perfect.mcc() == 1.0);

  // p = 0.5 everywhere: everything is called simulated
  CHECK(!classify_real(0.5));
  CHECK(classify_real(0.5000001));
  Confusion flat;
  for (int i = 0; i < 30; ++i) flat.add(classify_real(0.5), i % 2 == 0);
  CHECK(flat.tp == 0);
  CHECK(flat.fp == 0);
  CHECK(flat.mcc() == 0.0);
  CHECK(flat.accuracy() == 0.5);

  Confusion incremental;
  for (int i = 0; i < 40; ++i) incremental.add(true, true);
  for (int i = 0; i < 10; ++i) incremental.add(true, false);
  for (int i = 0; i < 10; ++i) incremental.add(false, true);
  for (int i = 0; i < 40; ++i) incremental.add(false, false);
  CHECK(incremental.tp == 40);
  CHECK(incremental.fp == 10);
  CHECK(incremental.fn == 10);
  CHECK(incremental.tn == 40);
}

TEST_CASE("disc_evaluate: missing turns, the overall row and the CSV") {
  Rng rng(8);
  const auto real = gen_corpus(rng, 20, Label::real, 1, 6);
  const auto sim = gen_corpus(rng, 20, Label::simulated, 1, 6);
  const auto m = disc_evaluate(DiscriminatorParams{}, real, sim, kDefaultTurnPoints);
  REQUIRE(m.size() == kDefaultTurnPoints.size() + 1);
  CHECK(m[0].n == 40);
  CHECK(!m[2].present);  // nobody reaches turn 10
  CHECK(!m[3].present);
  CHECK(m.back().label() == "overall");
  CHECK(m[1].label() == "5");
  // zero weights call everything simulated
  std::size_t real_turns = 0, sim_turns = 0;
  for (const auto& s : real) real_turns += static_cast<std::size_t>(s.user_turns());
  for (const auto& s : sim) sim_turns += static_cast<std::size_t>(s.user_turns());
  CHECK(m.back().n == real_turns + sim_turns);
  CHECK(m.back().acc == doctest::Approx(static_cast<double>(sim_turns) / static_cast<double>(real_turns + sim_turns)));

  TempDir dir("disc_eval");
  write_disc_eval_csv(m, dir / "e.csv");
  const std::string csv = slurp(dir / "e.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(m.size()) + 1);

  const std::vector<int> bad = {0};
  CHECK_THROWS_AS(disc_evaluate(DiscriminatorParams{}, real, sim, bad), ValidationError);
}

TEST_CASE("training input validation") {
  Rng rng(9);
  const auto real = gen_corpus(rng, 10, Label::real);
  const auto sim = gen_corpus(rng, 5, Label::simulated);
  CHECK_THROWS_AS(disc_train(DiscriminatorParams{}, real, sim, DiscTrainConfig{}), ValidationError);
  CHECK_THROWS_AS(disc_train(DiscriminatorParams{}, real, {}, DiscTrainConfig{}), ValidationError);
  DiscTrainConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(disc_train(DiscriminatorParams{}, real, real, cfg), ValidationError);
  cfg = {};
  cfg.epochs = 0;
  const auto res = disc_train(DiscriminatorParams{}, real, real, cfg);
  CHECK(res.params == DiscriminatorParams{});
  CHECK(res.loss_curve.size() == 1);
  CHECK(res.loss_curve[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("discriminator checkpoints round trip and reject corruption") {
  Rng rng(10);
  TempDir dir("disc");
  const DiscriminatorParams d = gen_disc(rng);
  save_discriminator(d, dir / "d.ckpt");
  CHECK(load_discriminator(dir / "d.ckpt") == d);
  spit(dir / "bad.ckpt", "{\"kind\": 3}");
  CHECK_THROWS(load_discriminator(dir / "bad.ckpt"));
  CHECK_THROWS(load_discriminator(dir / "none.ckpt"));
  CHECK_THROWS_AS(DiscriminatorParams(DiscFeatureSpec{}, std::vector<double>(3, 0.0)), ValidationError);
}

}
