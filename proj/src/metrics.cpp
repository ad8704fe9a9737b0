#include "usersim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <boost/math/special_functions/beta.hpp>

namespace usersim {

using nlohmann::ordered_json;

Tokens user_words(const Session& s) {
  Tokens out;
  for (const Message& m : s.messages()) {
    if (m.role != Role::user) continue;
    for (Token t : m.tokens) {
      if (t != tok::kEndUtterance) out.push_back(t);
    }
  }
  return out;
}

double entropy_bits(std::span<const Token> words) {
  if (words.empty()) throw ValidationError("entropy needs at least one token", "tokens");
  std::unordered_map<Token, std::size_t> counts;
  for (Token t : words) ++counts[t];
  // sum in token order so the result does not depend on hash iteration order
  std::vector<std::size_t> c;
  c.reserve(counts.size());
  for (const auto& [t, n] : counts) c.push_back(n);
  std::sort(c.begin(), c.end());
  const double total = static_cast<double>(words.size());
  double h = 0.0;
  for (std::size_t n : c) {
    const double p = static_cast<double>(n) / total;
    h -= p * std::log2(p);
  }
  return h == 0.0 ? 0.0 : h;
}

double type_token_ratio(std::span<const Token> words) {
  if (words.empty()) throw ValidationError("type-token ratio needs at least one token", "tokens");
  const std::unordered_set<Token> types(words.begin(), words.end());
  return static_cast<double>(types.size()) / static_cast<double>(words.size());
}

double bigram_diversity(std::span<const Tokens> messages) {
  std::set<std::pair<Token, Token>> unique;
  std::size_t total = 0;
  for (const Tokens& m : messages) {
    for (std::size_t i = 1; i < m.size(); ++i) {
      unique.emplace(m[i - 1], m[i]);
      ++total;
    }
  }
  if (total == 0) throw ValidationError("no message has two or more tokens", "tokens");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double word_entropy(const Session& s) { return entropy_bits(user_words(s)); }
double type_token_ratio(const Session& s) { return type_token_ratio(user_words(s)); }

double bigram_diversity(const Session& s) {
  std::vector<Tokens> msgs;
  for (const Message& m : s.messages()) {
    if (m.role != Role::user) continue;
    Tokens w;
    for (Token t : m.tokens) {
      if (t != tok::kEndUtterance) w.push_back(t);
    }
    msgs.push_back(std::move(w));
  }
  return bigram_diversity(msgs);
}

Summary summarize(std::span<const double> xs) {
  Summary s;
  if (xs.empty()) return s;
  const double n = static_cast<double>(xs.size());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  std::vector<double> sorted(xs.begin(), xs.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

namespace {

void check_same_keys(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size() ||
      !std::equal(p.begin(), p.end(), q.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw ValidationError("distributions are over different categories", "categories");
  }
}

}  // namespace

double kl_divergence(const Distribution& p, const Distribution& q, double epsilon) {
  check_same_keys(p, q);
  if (p.empty()) throw ValidationError("empty distribution", "categories");
  if (!(epsilon >= 0.0)) throw ValidationError("epsilon must be >= 0", "epsilon");
  auto smooth = [&](const Distribution& d) {
    double sum = 0.0;
    for (const auto& [k, v] : d) {
      if (!(v >= 0.0)) throw ValidationError("negative probability for " + k, "categories");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("distribution does not sum to 1", "categories");
    std::vector<double> out;
    double z = 0.0;
    for (const auto& [k, v] : d) {
      out.push_back(v + epsilon);
      z += v + epsilon;
    }
    for (double& x : out) x /= z;
    return out;
  };
  const auto ps = smooth(p);
  const auto qs = smooth(q);
  double kl = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i] > 0.0) kl += ps[i] * std::log(ps[i] / qs[i]);
  }
  return std::max(0.0, kl);
}

double multilabel_bce(const Distribution& p, const Distribution& q) {
  check_same_keys(p, q);
  double total = 0.0;
  auto qi = q.begin();
  for (const auto& [k, pv] : p) {
    const double qv = std::clamp(qi->second, kBceClamp, 1.0 - kBceClamp);
    total -= pv * std::log(qv) + (1.0 - pv) * std::log(1.0 - qv);
    ++qi;
  }
  return total;
}

double student_t_two_tailed_p(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("degrees of freedom must be > 0", "df");
  if (std::isnan(t)) throw ValidationError("t statistic is NaN", "t");
  if (std::isinf(t)) return kPValueFloor;
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  const double x = df / (df + t * t);
  const double p = boost::math::ibeta(df / 2.0, 0.5, x);
  return std::clamp(p, kPValueFloor, 1.0);
}

PearsonResult pearson_significance(double r, std::size_t n) {
  if (n < 3) throw ValidationError("correlation needs at least 3 points", "n");
  PearsonResult out;
  out.r = r;
  out.n = n;
  const double df = static_cast<double>(n) - 2.0;
  const double one_minus = 1.0 - r * r;
  if (one_minus <= 0.0) {
    out.t = r > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    out.p = kPValueFloor;
    return out;
  }
  out.t = r * std::sqrt(df / one_minus);
  out.p = student_t_two_tailed_p(out.t, df);
  return out;
}

PearsonResult pearson_with_pvalue(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ValidationError("xs and ys differ in length", "n");
  const std::size_t n = xs.size();
  if (n < 3) throw ValidationError("correlation needs at least 3 points", "n");
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw ValidationError("zero variance", "variance");
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return pearson_significance(r, n);
}

ZTest two_proportion_ztest(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2) {
  if (n1 == 0 || n2 == 0) throw ValidationError("group sizes must be >= 1", "n");
  if (k1 > n1 || k2 > n2) throw ValidationError("successes exceed group size", "k");
  const double a = static_cast<double>(n1), b = static_cast<double>(n2);
  const double p1 = static_cast<double>(k1) / a, p2 = static_cast<double>(k2) / b;
  const double pooled = static_cast<double>(k1 + k2) / (a + b);
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b));
  ZTest out;
  if (se == 0.0) return out;
  out.z = (p1 - p2) / se;
  out.p = std::clamp(std::erfc(std::abs(out.z) / std::sqrt(2.0)), kPValueFloor, 1.0);
  return out;
}

CorpusStats corpus_stats(std::span<const Session> sessions) {
  CorpusStats out;
  std::vector<double> ent, ttr, big;
  for (const Session& s : sessions) {
    const Tokens words = user_words(s);
    if (words.empty()) continue;
    SessionStats st;
    st.session_id = s.id();
    st.entropy = entropy_bits(words);
    st.ttr = type_token_ratio(words);
    try {
      st.bigram_diversity = bigram_diversity(s);
      big.push_back(*st.bigram_diversity);
    } catch (const ValidationError&) {
    }
    ent.push_back(st.entropy);
    ttr.push_back(st.ttr);
    out.per_session.push_back(std::move(st));
  }
  out.entropy = summarize(ent);
  out.ttr = summarize(ttr);
  out.bigram = summarize(big);
  out.action_rates = action_rates(sessions);
  out.issue_rate = issue_rate(sessions);
  const auto counts = issue_category_counts(sessions);
  std::size_t total = 0;
  for (const auto& [c, n] : counts) total += n;
  if (total > 0) {
    for (const auto& [c, n] : counts) {
      out.issue_category_dist[c] = static_cast<double>(n) / static_cast<double>(total);
    }
  }
  return out;
}

Distribution to_distribution(const std::map<IssueCategory, double>& m) {
  Distribution d;
  for (IssueCategory c : kAllIssueCategories) {
    auto it = m.find(c);
    d[to_string(c)] = it == m.end() ? 0.0 : it->second;
  }
  return d;
}

Distribution to_distribution(const std::map<Action, double>& m) {
  Distribution d;
  for (Action a : kAllActions) {
    auto it = m.find(a);
    d[to_string(a)] = it == m.end() ? 0.0 : it->second;
  }
  return d;
}

EvalReport compare_corpora(std::span<const Session> real, std::span<const Session> simulated) {
  if (real.empty() || simulated.empty()) {
    throw ValidationError("both corpora must be non-empty", "sessions");
  }
  EvalReport r{corpus_stats(real), corpus_stats(simulated), {}};
  Comparison& c = r.comparison;
  if (!r.real.issue_category_dist.empty() && !r.simulated.issue_category_dist.empty()) {
    c.kl_divergence = kl_divergence(to_distribution(r.real.issue_category_dist),
                                    to_distribution(r.simulated.issue_category_dist));
  }
  c.bce = multilabel_bce(to_distribution(r.real.action_rates), to_distribution(r.simulated.action_rates));
  for (ActionGroup g : kAllActionGroups) {
    Distribution p, q;
    for (Action a : kAllActions) {
      if (group_of(a) != g) continue;
      p[to_string(a)] = r.real.action_rates.at(a);
      q[to_string(a)] = r.simulated.action_rates.at(a);
    }
    c.bce_by_group[g] = multilabel_bce(p, q);
  }
  for (IssueCategory cat : kAllIssueCategories) {
    auto get = [&](const CorpusStats& s) {
      auto it = s.issue_category_dist.find(cat);
      return it == s.issue_category_dist.end() ? 0.0 : it->second;
    };
    c.category_delta_pp[cat] = 100.0 * (get(r.simulated) - get(r.real));
  }
  for (Action a : kAllActions) {
    c.action_delta_pp[a] = 100.0 * (r.simulated.action_rates.at(a) - r.real.action_rates.at(a));
  }
  return r;
}

namespace {

std::vector<double> per_agent_rates(std::span<const Session> sessions,
                                    std::span<const std::string> agent_ids) {
  std::map<std::string, std::vector<Session>> by_agent;
  for (const Session& s : sessions) by_agent[s.agent_config_id()].push_back(s);
  std::vector<double> out;
  for (const auto& id : agent_ids) {
    auto it = by_agent.find(id);
    if (it == by_agent.end()) throw ValidationError("no session for agent " + id, "agent_config_id");
    out.push_back(issue_rate(it->second).percent);
  }
  return out;
}

std::optional<double> category_kl(std::span<const Session> real, std::span<const Session> sim) {
  const auto a = corpus_stats(real).issue_category_dist;
  const auto b = corpus_stats(sim).issue_category_dist;
  if (a.empty() || b.empty()) return std::nullopt;
  return kl_divergence(to_distribution(a), to_distribution(b));
}

CorrelationRow correlation_row(const std::string& name, std::span<const Session> sessions,
                               std::span<const std::string> agent_ids,
                               std::span<const double> real_rates, std::span<const Session> real) {
  CorrelationRow row;
  row.simulator = name;
  row.simulated_rates = per_agent_rates(sessions, agent_ids);
  row.pearson = pearson_with_pvalue(row.simulated_rates, real_rates);
  row.kl = category_kl(real, sessions);
  return row;
}

}  // namespace

CorrelationTable issue_rate_correlation(std::span<const NamedCorpus> simulators,
                                        std::span<const std::string> agent_ids,
                                        std::span<const Session> real) {
  if (agent_ids.size() < 3) throw ValidationError("correlation needs at least 3 agents", "agents");
  CorrelationTable t;
  t.agents.assign(agent_ids.begin(), agent_ids.end());
  t.real_rates = per_agent_rates(real, agent_ids);
  std::vector<Session> pooled;
  for (const auto& sim : simulators) {
    t.rows.push_back(correlation_row(sim.name, sim.sessions, agent_ids, t.real_rates, real));
    pooled.insert(pooled.end(), sim.sessions.begin(), sim.sessions.end());
  }
  if (simulators.size() >= 2) {
    t.aggregate = correlation_row("aggregate", pooled, agent_ids, t.real_rates, real);
  }
  return t;
}

ordered_json to_json(const Summary& s) {
  return ordered_json{{"mean", s.mean}, {"median", s.median}, {"std", s.std}};
}

ordered_json to_json(const CorpusStats& s, bool with_sessions) {
  ordered_json j;
  j["n_sessions"] = s.per_session.size();
  j["entropy"] = to_json(s.entropy);
  j["ttr"] = to_json(s.ttr);
  j["bigram_diversity"] = to_json(s.bigram);
  ordered_json ar = ordered_json::object();
  for (const auto& [a, v] : s.action_rates) ar[to_string(a)] = v;
  j["action_rates"] = ar;
  j["issue_rate"] = {{"percent", s.issue_rate.percent},
                     {"stderr", s.issue_rate.stderr_percent},
                     {"flagged", s.issue_rate.flagged},
                     {"agent_messages", s.issue_rate.agent_messages}};
  ordered_json cd = ordered_json::object();
  for (const auto& [c, v] : s.issue_category_dist) cd[to_string(c)] = v;
  j["issue_category_dist"] = cd;
  if (with_sessions) {
    ordered_json ps = ordered_json::array();
    for (const auto& st : s.per_session) {
      ps.push_back({{"session_id", st.session_id},
                    {"entropy", st.entropy},
                    {"ttr", st.ttr},
                    {"bigram_diversity", st.bigram_diversity ? ordered_json(*st.bigram_diversity)
                                                              : ordered_json(nullptr)}});
    }
    j["per_session"] = ps;
  }
  return j;
}

ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["log_bases"] = {{"entropy", 2}, {"kl", "e"}, {"bce", "e"}};
  j["real"] = to_json(r.real);
  j["simulated"] = to_json(r.simulated);
  const Comparison& c = r.comparison;
  ordered_json cj;
  cj["kl_divergence"] = c.kl_divergence ? ordered_json(*c.kl_divergence) : ordered_json(nullptr);
  cj["bce"] = c.bce;
  ordered_json g = ordered_json::object();
  for (const auto& [grp, v] : c.bce_by_group) g[to_string(grp)] = v;
  cj["bce_by_group"] = g;
  ordered_json cd = ordered_json::object();
  for (const auto& [cat, v] : c.category_delta_pp) cd[to_string(cat)] = v;
  cj["category_delta_pp"] = cd;
  ordered_json ad = ordered_json::object();
  for (const auto& [a, v] : c.action_delta_pp) ad[to_string(a)] = v;
  cj["action_delta_pp"] = ad;
  j["comparison"] = cj;
  return j;
}

ordered_json to_json(const CorrelationTable& t) {
  auto row = [](const CorrelationRow& r) {
    return ordered_json{{"simulator", r.simulator},
                        {"r", r.pearson.r},
                        {"t", std::isfinite(r.pearson.t) ? ordered_json(r.pearson.t) : ordered_json(nullptr)},
                        {"p", r.pearson.p},
                        {"n", r.pearson.n},
                        {"kl", r.kl ? ordered_json(*r.kl) : ordered_json(nullptr)},
                        {"simulated_rates", r.simulated_rates}};
  };
  ordered_json j;
  j["agents"] = t.agents;
  j["real_rates"] = t.real_rates;
  ordered_json rows = ordered_json::array();
  for (const auto& r : t.rows) rows.push_back(row(r));
  j["rows"] = rows;
  j["aggregate"] = t.aggregate ? row(*t.aggregate) : ordered_json(nullptr);
  return j;
}

}  // namespace usersim
