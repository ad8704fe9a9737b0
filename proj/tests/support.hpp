#pragma once

// Hand-rolled generators and independent oracles shared by the tests. The
// oracles deliberately avoid the library code they check.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "usersim/corpus.hpp"
#include "usersim/discriminator.hpp"
#include "usersim/policy.hpp"
#include "usersim/reward_mining.hpp"
#include "usersim/rng.hpp"
#include "usersim/tokens.hpp"

namespace testing {

using namespace usersim;

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path = std::filesystem::temp_directory_path() / ("usersim_" + tag + "_" + std::to_string(rng.next() % 1000000007));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// ---- generators ----

inline Context gen_context(Rng& rng, const std::string& user_id = "u") {
  Context c;
  c.user_id = user_id;
  c.profile.resize(kProfileDim);
  for (double& x : c.profile) x = rng.uniform();
  c.current_summary.resize(kSummaryDim);
  for (double& x : c.current_summary) x = rng.uniform();
  const std::size_t n_prior = rng.below(kMaxPriorSummaries + 1);
  for (std::size_t i = 0; i < n_prior; ++i) {
    std::vector<double> s(kSummaryDim);
    for (double& x : s) x = rng.uniform();
    c.prior_summaries.push_back(std::move(s));
  }
  return c;
}

// Tokens a user may say: behaviors and content.
inline Token gen_user_token(Rng& rng, const Vocabulary& v) {
  if (rng.uniform() < 0.2) return tok::kEndRequest + static_cast<Token>(rng.below(tok::kPosAffect - tok::kEndRequest + 1));
  return tok::kFirstContent + static_cast<Token>(rng.below(static_cast<std::size_t>(v.size()) - tok::kFirstContent));
}

inline Tokens gen_user_utterance(Rng& rng, const Vocabulary& v, int max_len = 6) {
  Tokens u;
  const int n = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(max_len)));
  for (int i = 0; i < n; ++i) u.push_back(gen_user_token(rng, v));
  u.push_back(tok::kEndUtterance);
  return u;
}

inline Tokens gen_agent_message(Rng& rng, const Vocabulary& v) {
  static const Token styles[] = {tok::kAck, tok::kSuggest, tok::kConfusing, tok::kContradict};
  Tokens a{styles[rng.below(4)]};
  if (rng.uniform() < 0.8) a.push_back(v.question(static_cast<int>(rng.below(kNumTopics))));
  return a;
}

// Alternating session with `user_turns` user messages, optionally ending on
// an agent message.
inline Session gen_session(Rng& rng, int user_turns, Label label = Label::simulated,
                           const Vocabulary& v = Vocabulary{}, bool trailing_agent = false) {
  std::vector<Message> msgs;
  for (int t = 0; t < user_turns; ++t) {
    msgs.push_back({Role::agent, gen_agent_message(rng, v), static_cast<int>(msgs.size())});
    msgs.push_back({Role::user, gen_user_utterance(rng, v), static_cast<int>(msgs.size())});
  }
  if (trailing_agent) msgs.push_back({Role::agent, gen_agent_message(rng, v), static_cast<int>(msgs.size())});
  const std::string src = label == Label::real ? kGroundTruthPolicyId : "gen";
  return Session(gen_context(rng, "u" + std::to_string(rng.below(1000))), std::move(msgs), label, src,
                 "bot_" + std::to_string(rng.below(14)), rng.next());
}

inline std::vector<Session> gen_corpus(Rng& rng, std::size_t n, Label label, int min_turns = 1, int max_turns = 8) {
  std::vector<Session> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int turns = min_turns + static_cast<int>(rng.below(static_cast<std::size_t>(max_turns - min_turns + 1)));
    out.push_back(gen_session(rng, turns, label));
  }
  return out;
}

inline PolicyParams gen_policy(Rng& rng, Family family = Family::full, double scale = 0.3) {
  FeatureSpec spec;
  spec.family = family;
  PolicyParams p(spec);
  for (double& w : p.weights()) w = scale * rng.normal();
  return p.with_family(family);
}

inline DiscriminatorParams gen_disc(Rng& rng, double scale = 0.3) {
  DiscriminatorParams d;
  for (double& w : d.weights()) w = scale * rng.normal();
  return d;
}

inline PreferencePair gen_pair(Rng& rng, double r_chosen, double r_rejected) {
  const Vocabulary v;
  PreferencePair p;
  p.history = {{Role::agent, gen_agent_message(rng, v), 0}};
  p.context = gen_context(rng);
  p.chosen = gen_user_utterance(rng, v);
  do {
    p.rejected = gen_user_utterance(rng, v);
  } while (p.rejected == p.chosen);
  p.r_chosen = r_chosen;
  p.r_rejected = r_rejected;
  p.session_ref = "s" + std::to_string(rng.below(100000));
  return p;
}

// ---- oracles ----

inline double oracle_entropy_bits(const std::vector<Token>& words) {
  std::map<Token, double> c;
  for (Token t : words) c[t] += 1.0;
  double h = 0.0;
  for (const auto& [t, k] : c) {
    const double p = k / static_cast<double>(words.size());
    h -= p * std::log(p) / std::log(2.0);
  }
  return h;
}

inline double oracle_ttr(const std::vector<Token>& words) {
  std::set<Token> types(words.begin(), words.end());
  return static_cast<double>(types.size()) / static_cast<double>(words.size());
}

// nullopt when no message has two words.
inline std::optional<double> oracle_bigram(const std::vector<std::vector<Token>>& messages) {
  std::set<std::pair<Token, Token>> unique;
  double total = 0;
  for (const auto& m : messages) {
    for (std::size_t i = 0; i + 1 < m.size(); ++i) {
      unique.insert({m[i], m[i + 1]});
      total += 1;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(unique.size()) / total;
}

// User words per message: user messages with the end-of-utterance marker removed.
inline std::vector<std::vector<Token>> oracle_user_messages(const Session& s) {
  std::vector<std::vector<Token>> out;
  for (const auto& m : s.messages()) {
    if (m.role != Role::user) continue;
    std::vector<Token> w;
    for (Token t : m.tokens) {
      if (t != tok::kEndUtterance) w.push_back(t);
    }
    out.push_back(std::move(w));
  }
  return out;
}

// Student t density integrated with composite Simpson over [|t|, |t| + 200];
// the tail beyond that is below 1e-20 for df >= 4.
inline double oracle_t_two_tailed(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
  auto f = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double a = std::fabs(t), b = a + 200.0;
  const int n = 200000;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return 2.0 * s * h / 3.0;
}

inline double oracle_pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

inline double oracle_normal_two_tailed(double z) { return std::erfc(std::fabs(z) / std::numbers::sqrt2); }

inline double oracle_logit(double p) { return std::log(p) - std::log1p(-p); }

// Max relative error between an analytic gradient and central differences on
// the given coordinates. The denominator is floored so coordinates whose true
// derivative is ~0 are compared on absolute error.
inline double fd_max_rel_error(const std::function<double(const std::vector<double>&)>& f,
                               std::vector<double> w, const std::vector<double>& grad,
                               const std::vector<std::size_t>& coords, double eps = 1e-5) {
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double w0 = w[i];
    w[i] = w0 + eps;
    const double up = f(w);
    w[i] = w0 - eps;
    const double down = f(w);
    w[i] = w0;
    const double num = (up - down) / (2 * eps);
    const double denom = std::max({std::fabs(num), std::fabs(grad[i]), 1e-6});
    worst = std::max(worst, std::fabs(num - grad[i]) / denom);
  }
  return worst;
}

// The k largest-|grad| coordinates plus m random ones.
inline std::vector<std::size_t> fd_coords(const std::vector<double>& grad, std::size_t k, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(grad.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t top = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                    [&](std::size_t a, std::size_t b) { return std::fabs(grad[a]) > std::fabs(grad[b]); });
  std::vector<std::size_t> out(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top));
  for (std::size_t j = 0; j < m; ++j) out.push_back(rng.below(grad.size()));
  return out;
}

}  // namespace testing
