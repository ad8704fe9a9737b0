#include "usersim/reward_mining.hpp"

#include <algorithm>
#include <fstream>

#include "usersim/json_io.hpp"
#include "usersim/parallel.hpp"
#include "usersim/rng.hpp"

namespace usersim {

using json_io::ojson;
using json_io::required;

RewardTrace reward_trace_from_probs(std::string session_ref, std::span<const double> p_real) {
  RewardTrace tr;
  tr.session_ref = std::move(session_ref);
  tr.logodds.reserve(p_real.size() + 1);
  tr.logodds.push_back(0.0);
  for (double p : p_real) tr.logodds.push_back(logit(clamp_prob(p)));
  tr.rewards.reserve(p_real.size());
  for (std::size_t t = 1; t < tr.logodds.size(); ++t) {
    tr.rewards.push_back(tr.logodds[t] - tr.logodds[t - 1]);
  }
  return tr;
}

RewardTrace compute_rewards(const DiscriminatorParams& disc, const Session& session) {
  const auto preds = predict_turns(disc, session);
  std::vector<double> p;
  p.reserve(preds.size());
  for (const auto& tp : preds) p.push_back(tp.p_real);
  return reward_trace_from_probs(session.id(), p);
}

std::pair<std::size_t, std::size_t> select_critical_turns(const RewardTrace& trace) {
  if (trace.rewards.empty()) throw ValidationError("reward trace has no user turn", "rewards");
  std::size_t hi = 0, lo = 0;
  for (std::size_t t = 1; t < trace.rewards.size(); ++t) {
    if (trace.rewards[t] > trace.rewards[hi]) hi = t;
    if (trace.rewards[t] < trace.rewards[lo]) lo = t;
  }
  return {hi, lo};
}

namespace {

std::vector<PreferencePair> mine_session(const PolicyParams& policy,
                                         const DiscriminatorParams& disc, const Session& s,
                                         const MiningConfig& config, std::uint64_t seed) {
  std::vector<PreferencePair> out;
  if (s.user_turns() < 1) return out;
  const RewardTrace trace = compute_rewards(disc, s);
  const auto [hi, lo] = select_critical_turns(trace);
  std::vector<std::size_t> turns{hi};
  if (lo != hi) turns.push_back(lo);

  const auto msgs = s.messages();
  for (std::size_t t : turns) {
    const std::size_t user_idx = s.user_message_index(static_cast<int>(t));
    std::span<const Message> history = msgs.first(user_idx);

    PrefixAccumulator acc(disc.spec(), s.context());
    for (const Message& m : history) {
      if (m.role == Role::agent) acc.add_agent(m.tokens);
      else acc.add_user(m.tokens);
    }

    const std::uint64_t turn_seed = mix_seed(seed, t);
    std::vector<Tokens> alts;
    for (int j = 0; j < config.k_alternatives; ++j) {
      Tokens a = sample_utterance(policy, history, s.context(),
                                  mix_seed(turn_seed, static_cast<std::uint64_t>(j)),
                                  config.max_utterance_len);
      if (std::find(alts.begin(), alts.end(), a) == alts.end()) alts.push_back(std::move(a));
    }
    if (alts.size() < 2) continue;

    const double prev = trace.logodds[t];
    std::vector<double> r;
    r.reserve(alts.size());
    for (const Tokens& a : alts) {
      PrefixAccumulator with = acc;
      with.add_user(a);
      r.push_back(logit(predict_prob(disc, with.features())) - prev);
    }
    std::size_t best = 0, worst = 0;
    for (std::size_t i = 1; i < r.size(); ++i) {
      if (r[i] > r[best]) best = i;
      if (r[i] < r[worst]) worst = i;
    }
    if (r[best] == r[worst]) continue;  // no preference signal

    PreferencePair p;
    p.history.assign(history.begin(), history.end());
    p.context = s.context();
    p.chosen = alts[best];
    p.rejected = alts[worst];
    p.r_chosen = r[best];
    p.r_rejected = r[worst];
    p.source_turn = static_cast<int>(t) + 1;
    p.session_ref = s.id();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

std::vector<PreferencePair> mine_pairs(const PolicyParams& policy, const DiscriminatorParams& disc,
                                       std::span<const Session> sessions,
                                       const MiningConfig& config) {
  if (config.k_alternatives < 2) throw ValidationError("k_alternatives must be >= 2", "k_alternatives");
  if (config.max_utterance_len < 1) throw ValidationError("max utterance length must be >= 1", "max_len");
  const std::uint64_t root = derive_seed(config.seed, "mine");
  std::vector<std::vector<PreferencePair>> per(sessions.size());
  parallel_for(sessions.size(), config.workers, [&](std::size_t i) {
    per[i] = mine_session(policy, disc, sessions[i], config, mix_seed(root, i));
  });
  std::vector<PreferencePair> out;
  for (auto& v : per) {
    for (auto& p : v) out.push_back(std::move(p));
  }
  return out;
}

std::vector<PreferencePair> filter_pairs(std::span<const PreferencePair> pairs) {
  std::vector<PreferencePair> out;
  for (const auto& p : pairs) {
    if (p.r_chosen > 0.0 && p.r_rejected < 0.0) out.push_back(p);
  }
  return out;
}

std::string pair_to_json_line(const PreferencePair& p) {
  ojson j;
  j["session_ref"] = p.session_ref;
  j["source_turn"] = p.source_turn;
  j["user_id"] = p.context.user_id;
  j["context"] = json_io::context_to_json(p.context);
  j["history"] = json_io::messages_to_json(p.history);
  j["chosen"] = p.chosen;
  j["rejected"] = p.rejected;
  j["r_chosen"] = p.r_chosen;
  j["r_rejected"] = p.r_rejected;
  return j.dump();
}

PreferencePair pair_from_json_line(const std::string& line, const Vocabulary& vocab,
                                   std::size_t line_no) {
  try {
    const ojson j = json_io::parse_line(line);
    if (!j.is_object()) throw ValidationError("pair is not a JSON object");
    PreferencePair p;
    p.session_ref = required<std::string>(j, "session_ref");
    p.source_turn = required<int>(j, "source_turn");
    if (!j.contains("context")) throw ValidationError("missing field context", "context");
    p.context = json_io::context_from_json(j["context"], required<std::string>(j, "user_id"));
    p.context.validate();
    if (!j.contains("history")) throw ValidationError("missing field history", "history");
    p.history = json_io::messages_from_json(j["history"]);
    p.chosen = required<Tokens>(j, "chosen");
    p.rejected = required<Tokens>(j, "rejected");
    p.r_chosen = required<double>(j, "r_chosen");
    p.r_rejected = required<double>(j, "r_rejected");

    if (p.source_turn < 1) throw ValidationError("source_turn must be >= 1", "source_turn");
    if (p.history.empty() || p.history.back().role != Role::agent) {
      throw ValidationError("history must end with an agent message", "history");
    }
    for (std::size_t i = 0; i < p.history.size(); ++i) {
      const Role expected = i % 2 == 0 ? Role::agent : Role::user;
      if (p.history[i].role != expected || p.history[i].turn_index != static_cast<int>(i)) {
        throw ValidationError("history message " + std::to_string(i) + " is out of order", "history");
      }
    }
    if (p.chosen.empty() || p.rejected.empty()) {
      throw ValidationError("chosen and rejected must be non-empty", "chosen");
    }
    if (p.chosen == p.rejected) throw ValidationError("chosen equals rejected", "rejected");
    if (p.r_chosen < p.r_rejected) throw ValidationError("r_chosen < r_rejected", "r_chosen");
    auto check = [&](const Tokens& ts, const char* field) {
      for (Token t : ts) {
        if (!vocab.contains(t)) throw ValidationError("token out of vocabulary", field);
      }
    };
    check(p.chosen, "chosen");
    check(p.rejected, "rejected");
    for (const auto& m : p.history) check(m.tokens, "history");
    return p;
  } catch (const ValidationError& e) {
    if (line_no == 0 || e.line() != 0) throw;
    throw ValidationError(e.what(), e.field(), line_no);
  }
}

std::size_t write_pairs(std::span<const PreferencePair> pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  std::size_t written = 0;
  for (const auto& p : pairs) {
    out << pair_to_json_line(p) << '\n';
    if (!out) throw IoError("write failed on " + path.string(), written);
    ++written;
  }
  out.flush();
  if (!out) throw IoError("flush failed on " + path.string(), written);
  return written;
}

std::vector<PreferencePair> read_pairs(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PreferencePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(pair_from_json_line(line, vocab, line_no));
  }
  return out;
}

}  // namespace usersim
