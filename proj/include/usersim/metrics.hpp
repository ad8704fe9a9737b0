#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "usersim/annotate.hpp"
#include "usersim/corpus.hpp"

namespace usersim {

inline constexpr double kPValueFloor = 1e-12;
inline constexpr double kKlEpsilon = 1e-9;
inline constexpr double kBceClamp = 1e-7;

// Linguistic statistics over the user-message tokens of one session. The
// end-of-utterance marker is formatting, not a word, and is left out.
Tokens user_words(const Session& s);
double word_entropy(const Session& s);  // bits
double type_token_ratio(const Session& s);
double bigram_diversity(const Session& s);  // bigrams stay inside one message

double entropy_bits(std::span<const Token> words);
double type_token_ratio(std::span<const Token> words);
// Each inner vector is one message.
double bigram_diversity(std::span<const Tokens> messages);

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

Summary summarize(std::span<const double> xs);

using Distribution = std::map<std::string, double>;

double kl_divergence(const Distribution& p, const Distribution& q, double epsilon = kKlEpsilon);

// Summed over labels; q clamped to [1e-7, 1 - 1e-7].
double multilabel_bce(const Distribution& p, const Distribution& q);

struct PearsonResult {
  double r = 0.0;
  double t = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

// Two-tailed p of Student's t with df degrees of freedom, floored at 1e-12.
double student_t_two_tailed_p(double t, double df);
PearsonResult pearson_with_pvalue(std::span<const double> xs, std::span<const double> ys);
// t and p for a given r and n, by the t = r sqrt((n-2)/(1-r^2)) formula.
PearsonResult pearson_significance(double r, std::size_t n);

struct ZTest {
  double z = 0.0;
  double p = 1.0;
};

ZTest two_proportion_ztest(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2);

struct SessionStats {
  std::string session_id;
  double entropy = 0.0;
  double ttr = 0.0;
  std::optional<double> bigram_diversity;  // absent without any in-message bigram
};

struct CorpusStats {
  std::vector<SessionStats> per_session;
  Summary entropy, ttr, bigram;
  std::map<Action, double> action_rates;
  IssueRate issue_rate;
  std::map<IssueCategory, double> issue_category_dist;  // empty when no issue
};

CorpusStats corpus_stats(std::span<const Session> sessions);

struct Comparison {
  // issue categories, KL(real || simulated); absent when either corpus has no
  // flagged message
  std::optional<double> kl_divergence;
  double bce = 0.0;            // action rates
  std::map<ActionGroup, double> bce_by_group;
  std::map<IssueCategory, double> category_delta_pp;  // simulated - real, percentage points
  std::map<Action, double> action_delta_pp;
};

struct EvalReport {
  CorpusStats real;
  CorpusStats simulated;
  Comparison comparison;
};

EvalReport compare_corpora(std::span<const Session> real, std::span<const Session> simulated);

Distribution to_distribution(const std::map<IssueCategory, double>& m);
Distribution to_distribution(const std::map<Action, double>& m);

struct CorrelationRow {
  std::string simulator;
  PearsonResult pearson;
  std::optional<double> kl;
  std::vector<double> simulated_rates;  // percent, per agent in grid order
};

struct CorrelationTable {
  std::vector<std::string> agents;
  std::vector<double> real_rates;  // percent, per agent
  std::vector<CorrelationRow> rows;
  std::optional<CorrelationRow> aggregate;  // present with >= 2 simulators
};

struct NamedCorpus {
  std::string name;
  std::vector<Session> sessions;
};

// Per-agent issue rates of every simulator against the real per-agent rates.
CorrelationTable issue_rate_correlation(std::span<const NamedCorpus> simulators,
                                        std::span<const std::string> agent_ids,
                                        std::span<const Session> real);

nlohmann::ordered_json to_json(const Summary& s);
nlohmann::ordered_json to_json(const CorpusStats& s, bool with_sessions = false);
nlohmann::ordered_json to_json(const EvalReport& r);
nlohmann::ordered_json to_json(const CorrelationTable& t);

}  // namespace usersim
