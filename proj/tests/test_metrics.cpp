#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "usersim/metrics.hpp"

using namespace testing;

namespace {

Session user_only(const std::vector<Tokens>& user_msgs) {
  std::vector<Message> msgs;
  for (const auto& u : user_msgs) {
    msgs.push_back({Role::agent, {tok::kAck}, static_cast<int>(msgs.size())});
    Tokens t = u;
    t.push_back(tok::kEndUtterance);
    msgs.push_back({Role::user, t, static_cast<int>(msgs.size())});
  }
  Rng rng(3);
  return Session(gen_context(rng), msgs, Label::real, kGroundTruthPolicyId, "bot", 0);
}

Distribution dist(std::initializer_list<double> xs) {
  Distribution d;
  int i = 0;
  for (double x : xs) d["c" + std::to_string(i++)] = x;
  return d;
}

Distribution random_dist(Rng& rng, std::size_t k, bool with_zeros) {
  std::vector<double> v(k);
  double s = 0.0;
  for (double& x : v) {
    x = with_zeros && rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    s += x;
  }
  if (s == 0.0) {
    v[0] = 1.0;
    s = 1.0;
  }
  Distribution d;
  for (std::size_t i = 0; i < k; ++i) d["c" + std::to_string(i)] = v[i] / s;
  return d;
}

// Welford mean/variance plus a selection-based median.
Summary streaming_summary(const std::vector<double>& xs) {
  Summary s;
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  s.mean = mean;
  s.std = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
  std::vector<double> v = xs;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  s.median = v[mid];
  if (v.size() % 2 == 0) {
    s.median = 0.5 * (s.median + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return s;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("entropy, TTR and bigram diversity: worked examples") {
  CHECK(word_entropy(user_only({{40, 40, 40}})) == 0.0);
  CHECK(word_entropy(user_only({{40, 41}, {40, 41}})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::fabs(word_entropy(user_only({{40, 40}, {40, 41}})) - 0.811278) < 1e-6);

  CHECK(type_token_ratio(user_only({{40, 41, 42, 43, 44}})) == 1.0);
  CHECK(type_token_ratio(user_only({{40, 40, 40, 40}})) == 0.25);
  CHECK(type_token_ratio(user_only({{50, 51}, {50, 52, 50}})) == doctest::Approx(0.6).epsilon(1e-15));

  CHECK(bigram_diversity(user_only({{40, 41, 42, 43}})) == 1.0);
  CHECK(bigram_diversity(user_only({{40, 40, 40}})) == 0.5);
  CHECK(bigram_diversity(user_only({{40, 41, 40, 41, 40}})) == 0.5);
  // no bigram across the message boundary
  CHECK(bigram_diversity(user_only({{40, 41}, {41, 40}})) == 1.0);
  CHECK_THROWS_AS(bigram_diversity(user_only({{40}, {41}})), ValidationError);
  // the end-of-utterance marker is not a word
  CHECK(user_words(user_only({{40}, {41}})) == Tokens{40, 41});
}

TEST_CASE("property: linguistic metrics equal brute-force recomputation") {
  Rng rng(1);
  for (const auto& s : gen_corpus(rng, 500, Label::simulated, 1, 10)) {
    const auto msgs = oracle_user_messages(s);
    std::vector<Token> words;
    for (const auto& m : msgs) words.insert(words.end(), m.begin(), m.end());
    CHECK(std::fabs(word_entropy(s) - oracle_entropy_bits(words)) < 1e-12);
    CHECK(type_token_ratio(s) == oracle_ttr(words));
    const auto b = oracle_bigram(msgs);
    if (b) CHECK(bigram_diversity(s) == *b);
    else CHECK_THROWS_AS(bigram_diversity(s), ValidationError);
  }
}

TEST_CASE("KL divergence") {
  CHECK(kl_divergence(dist({0.5, 0.5}), dist({0.5, 0.5})) == 0.0);
  CHECK(std::fabs(kl_divergence(dist({0.5, 0.5}), dist({0.75, 0.25}), 0.0) - 0.143841) < 1e-6);
  CHECK(std::fabs(kl_divergence(dist({0.5, 0.5}), dist({0.75, 0.25}), 0.0) -
                  (0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0))) < 1e-15);
  // default smoothing barely moves a strictly positive case
  CHECK(std::fabs(kl_divergence(dist({0.5, 0.5}), dist({0.75, 0.25})) - 0.143841) < 1e-6);
  // a zero in q is finite once smoothed
  CHECK(std::isfinite(kl_divergence(dist({0.5, 0.5}), dist({1.0, 0.0}))));
  // asymmetric on a generic fixture
  const auto p = dist({0.7, 0.2, 0.1}), q = dist({0.3, 0.3, 0.4});
  CHECK(std::fabs(kl_divergence(p, q) - kl_divergence(q, p)) > 1e-3);

  Distribution other = {{"x", 0.5}, {"y", 0.5}};
  CHECK_THROWS_AS(kl_divergence(dist({0.5, 0.5}), other), ValidationError);
  CHECK_THROWS_AS(kl_divergence(dist({0.5, 0.6}), dist({0.5, 0.5})), ValidationError);
  CHECK_THROWS_AS(kl_divergence(dist({1.5, -0.5}), dist({0.5, 0.5})), ValidationError);
}

TEST_CASE("property: KL >= 0 over 1000 random pairs, 0 on identical inputs") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(7);
    const auto p = random_dist(rng, k, i % 2), q = random_dist(rng, k, i % 3 == 0);
    CHECK(kl_divergence(p, q) >= 0.0);
    CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("multi-label BCE") {
  const Distribution half = {{"x", 0.5}};
  CHECK(std::fabs(multilabel_bce(half, half) - std::log(2.0)) < 1e-9);
  CHECK(std::fabs(multilabel_bce({{"x", 0.2}}, half) - std::log(2.0)) < 1e-9);
  CHECK(multilabel_bce({{"x", 1.0}}, {{"x", 1.0 - 1e-7}}) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(std::isfinite(multilabel_bce({{"x", 1.0}}, {{"x", 0.0}})));
  // summed over labels
  CHECK(multilabel_bce({{"a", 0.5}, {"b", 0.5}}, {{"a", 0.5}, {"b", 0.5}}) == doctest::Approx(2.0 * std::log(2.0)));
  CHECK_THROWS_AS(multilabel_bce({{"a", 0.5}}, {{"b", 0.5}}), ValidationError);
}

TEST_CASE("Pearson significance by the t formula") {
  const auto r = pearson_significance(0.818, 14);
  CHECK(std::fabs(r.t - 4.93) < 0.01);
  CHECK(std::fabs(r.p - 0.0003) <= 0.0001);
  CHECK(r.p == doctest::Approx(oracle_t_two_tailed(r.t, 12.0)).epsilon(1e-6));
  CHECK(pearson_significance(0.0, 10).p == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(pearson_significance(0.5, 2), ValidationError);
}

TEST_CASE("Pearson on a six-point hand dataset") {
  const std::vector<double> x = {1, 2, 3, 4, 5, 6};
  const std::vector<double> y = {2, 1, 4, 3, 7, 5};
  const auto res = pearson_with_pvalue(x, y);
  const double r = oracle_pearson_r(x, y);
  CHECK(std::fabs(res.r - r) < 1e-12);
  const double t = r * std::sqrt(4.0 / (1.0 - r * r));
  CHECK(std::fabs(res.t - t) < 1e-9);
  CHECK(std::fabs(res.p - oracle_t_two_tailed(t, 4.0)) < 1e-6);
  CHECK(res.n == 6);
}

TEST_CASE("Pearson: perfect correlation, affine invariance, guards") {
  Rng rng(3);
  const std::vector<double> x = {0.3, 1.7, 2.2, 4.0, 5.5};
  std::vector<double> y2;
  for (double v : x) y2.push_back(2.0 * v);
  const auto perfect = pearson_with_pvalue(x, y2);
  CHECK(perfect.r == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(perfect.p == kPValueFloor);

  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 3 + rng.below(20);
    std::vector<double> a(n), b(n);
    for (std::size_t k = 0; k < n; ++k) {
      a[k] = rng.normal();
      b[k] = a[k] + rng.normal();
    }
    const double scale = 0.1 + 10.0 * rng.uniform(), shift = 20.0 * rng.uniform() - 10.0;
    std::vector<double> a2 = a;
    for (double& v : a2) v = scale * v + shift;
    const auto base = pearson_with_pvalue(a, b);
    CHECK(std::fabs(pearson_with_pvalue(a2, b).r - base.r) < 1e-12);
    CHECK(std::fabs(pearson_with_pvalue(b, a2).r - base.r) < 1e-12);
    CHECK(std::fabs(base.r - oracle_pearson_r(a, b)) < 1e-9);
  }

  const std::vector<double> flat = {1, 1, 1};
  const std::vector<double> two = {1, 2};
  CHECK_THROWS_AS(pearson_with_pvalue(flat, x), ValidationError);
  CHECK_THROWS_AS(pearson_with_pvalue(two, two), ValidationError);
  CHECK_THROWS_AS(pearson_with_pvalue(x, two), ValidationError);
}

TEST_CASE("two-proportion z-test") {
  const auto z = two_proportion_ztest(30, 1000, 60, 1000);
  // pooled 0.045
  const double se = std::sqrt(0.045 * 0.955 * (2.0 / 1000.0));
  CHECK(std::fabs(z.z - (0.03 - 0.06) / se) < 1e-12);
  CHECK(std::fabs(z.z - (-3.25)) < 2e-2);
  CHECK(std::fabs(z.p - 0.0012) < 1e-4);
  CHECK(std::fabs(z.p - oracle_normal_two_tailed(z.z)) < 1e-12);

  const auto same = two_proportion_ztest(50, 1000, 5, 100);
  CHECK(same.z == 0.0);
  CHECK(same.p == 1.0);

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n1 = 1 + rng.below(500), n2 = 1 + rng.below(500);
    const std::size_t k1 = rng.below(n1 + 1), k2 = rng.below(n2 + 1);
    const auto a = two_proportion_ztest(k1, n1, k2, n2), b = two_proportion_ztest(k2, n2, k1, n1);
    CHECK(a.z == doctest::Approx(-b.z).epsilon(1e-12));
    CHECK(a.p == doctest::Approx(b.p).epsilon(1e-12));
  }
  CHECK_THROWS_AS(two_proportion_ztest(1, 0, 1, 1), ValidationError);
  CHECK_THROWS_AS(two_proportion_ztest(5, 4, 1, 1), ValidationError);
}

TEST_CASE("summaries match a streaming recomputation") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> xs(1 + rng.below(40));
    for (double& x : xs) x = 5.0 * rng.normal() + 2.0;
    const auto s = summarize(xs);
    const auto o = streaming_summary(xs);
    CHECK(s.mean == doctest::Approx(o.mean).epsilon(1e-12));
    CHECK(s.median == o.median);
    CHECK(std::fabs(s.std - o.std) < 1e-10);
  }
  const auto corpus = gen_corpus(rng, 100, Label::real);
  const auto st = corpus_stats(corpus);
  std::vector<double> ent, ttr, big;
  for (const auto& ss : st.per_session) {
    ent.push_back(ss.entropy);
    ttr.push_back(ss.ttr);
    if (ss.bigram_diversity) big.push_back(*ss.bigram_diversity);
  }
  CHECK(st.entropy.mean == doctest::Approx(streaming_summary(ent).mean).epsilon(1e-12));
  CHECK(st.ttr.median == streaming_summary(ttr).median);
  CHECK(std::fabs(st.bigram.std - streaming_summary(big).std) < 1e-10);
}

TEST_CASE("self comparison: KL 0, BCE is the self-entropy, deltas 0") {
  Rng rng(6);
  auto corpus = gen_corpus(rng, 300, Label::real, 3, 12);
  const auto rep = compare_corpora(corpus, corpus);
  REQUIRE(!rep.real.issue_category_dist.empty());
  REQUIRE(rep.comparison.kl_divergence.has_value());
  CHECK(*rep.comparison.kl_divergence == 0.0);
  double self = 0.0;
  for (const auto& [a, p] : rep.real.action_rates) {
    const double q = std::clamp(p, kBceClamp, 1.0 - kBceClamp);
    self -= p * std::log(q) + (1 - p) * std::log(1 - q);
  }
  CHECK(rep.comparison.bce == doctest::Approx(self).epsilon(1e-12));
  double by_group = 0.0;
  for (const auto& [g, v] : rep.comparison.bce_by_group) by_group += v;
  CHECK(by_group == doctest::Approx(rep.comparison.bce).epsilon(1e-12));
  for (const auto& [c, d] : rep.comparison.category_delta_pp) CHECK(d == 0.0);
  for (const auto& [a, d] : rep.comparison.action_delta_pp) CHECK(d == 0.0);
  double total = 0.0;
  for (const auto& [c, v] : rep.real.issue_category_dist) total += v;
  CHECK(std::fabs(total - 1.0) < 1e-9);
  CHECK_THROWS_AS(compare_corpora(corpus, std::vector<Session>{}), ValidationError);
}

TEST_CASE("issue-rate correlation: rows, aggregate and guards") {
  Rng rng(7);
  std::vector<std::string> agents = {"a", "b", "c", "d"};
  auto corpus_for = [&](std::uint64_t seed) {
    Rng r(seed);
    std::vector<Session> out;
    for (std::size_t i = 0; i < 80; ++i) {
      const Session s = gen_session(r, 2 + static_cast<int>(r.below(8)), Label::simulated);
      out.push_back(Session(s.context(), {s.messages().begin(), s.messages().end()}, Label::simulated, "gen",
                            agents[i % agents.size()], s.rng_seed()));
    }
    return out;
  };
  const auto real = corpus_for(1);
  std::vector<NamedCorpus> sims = {{"same", real}, {"other", corpus_for(2)}};
  const auto t = issue_rate_correlation(sims, agents, real);
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].pearson.r == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(t.rows[0].kl.has_value());
  CHECK(*t.rows[0].kl == 0.0);
  CHECK(t.rows[0].simulated_rates == t.real_rates);
  REQUIRE(t.aggregate.has_value());
  CHECK(t.aggregate->simulator == "aggregate");
  CHECK(t.aggregate->pearson.n == agents.size());

  const std::vector<NamedCorpus> one = {sims[0]};
  CHECK(!issue_rate_correlation(one, agents, real).aggregate.has_value());
  const std::vector<std::string> single = {"a"};
  CHECK_THROWS_AS(issue_rate_correlation(one, single, real), ValidationError);
  const std::vector<std::string> unknown = {"a", "b", "zzz"};
  CHECK_THROWS_AS(issue_rate_correlation(one, unknown, real), ValidationError);
}

}
