#include "usersim/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <stdexcept>

#include <json.hpp>

#include "usersim/checkpoint.hpp"
#include "usersim/parallel.hpp"
#include "usersim/rng.hpp"

namespace usersim {

using nlohmann::ordered_json;

const char* to_string(IssueCategory c) {
  switch (c) {
    case IssueCategory::repetitive: return "repetitive";
    case IssueCategory::confusing: return "confusing";
    case IssueCategory::ignores_end_request: return "ignores_end_request";
    case IssueCategory::contradiction: return "contradiction";
    case IssueCategory::premature_wrapup: return "premature_wrapup";
    case IssueCategory::circular_conversation: return "circular_conversation";
  }
  return "?";
}

IssueCategory issue_category_from_string(const std::string& s) {
  for (IssueCategory c : kAllIssueCategories) {
    if (s == to_string(c)) return c;
  }
  throw ValidationError("unknown issue category '" + s + "'", "issue_rates");
}

double AgentConfig::rate(IssueCategory c) const {
  auto it = issue_rates.find(c);
  return it == issue_rates.end() ? 0.0 : it->second;
}

void AgentConfig::validate() const {
  if (agent_id.empty()) throw ValidationError("agent_id is empty", "agent_id");
  if (max_turns < 2) throw ValidationError("max_turns must be >= 2", "max_turns");
  for (const auto& [c, r] : issue_rates) {
    if (c == IssueCategory::circular_conversation) {
      throw ValidationError("circular_conversation cannot be injected", "issue_rates");
    }
    if (!(r >= 0.0 && r <= 1.0)) {
      throw ValidationError(std::string("issue rate for ") + to_string(c) + " outside [0,1]",
                            "issue_rates");
    }
  }
}

std::vector<AgentConfig> default_agent_grid() {
  // Per-category weights at scale 1; each bot gets its own mix so the
  // category distribution differs between bots, not only the total.
  constexpr std::array<double, 5> kBase = {0.8, 0.5, 3.0, 0.25, 0.7};
  constexpr std::array<std::array<double, 5>, 4> kMix = {{
      {1.3, 0.8, 1.0, 1.0, 0.8},
      {0.8, 1.3, 0.9, 1.2, 1.0},
      {1.0, 1.0, 1.2, 0.7, 1.2},
      {0.9, 0.9, 0.9, 1.1, 1.0},
  }};
  std::vector<AgentConfig> out;
  for (int i = 0; i < 14; ++i) {
    const double scale = 0.01 + 0.04 * i / 13.0;
    AgentConfig a;
    a.agent_id = "bot_" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    a.script_seed = 1000 + static_cast<std::uint64_t>(i);
    const auto& mix = kMix[static_cast<std::size_t>(i) % kMix.size()];
    for (std::size_t c = 0; c < kInjectedCategories.size(); ++c) {
      a.issue_rates[kInjectedCategories[c]] = std::min(1.0, scale * kBase[c] * mix[c]);
    }
    out.push_back(std::move(a));
  }
  return out;
}

namespace {

ordered_json agent_to_json(const AgentConfig& a) {
  ordered_json rates = ordered_json::object();
  for (IssueCategory c : kInjectedCategories) rates[to_string(c)] = a.rate(c);
  return ordered_json{{"agent_id", a.agent_id},
                      {"issue_rates", rates},
                      {"script_seed", a.script_seed},
                      {"max_turns", a.max_turns}};
}

AgentConfig agent_from_json(const ordered_json& j) {
  AgentConfig a;
  a.agent_id = j.at("agent_id").get<std::string>();
  for (const auto& [k, v] : j.at("issue_rates").items()) {
    a.issue_rates[issue_category_from_string(k)] = v.get<double>();
  }
  a.script_seed = j.value("script_seed", std::uint64_t{0});
  a.max_turns = j.value("max_turns", 30);
  a.validate();
  return a;
}

}  // namespace

void write_agent_configs(std::span<const AgentConfig> agents, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  std::size_t n = 0;
  for (const auto& a : agents) {
    out << agent_to_json(a).dump() << '\n';
    if (!out) throw IoError("write failed on " + path.string(), n);
    ++n;
  }
}

std::vector<AgentConfig> read_agent_configs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::vector<AgentConfig> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(agent_from_json(ordered_json::parse(line)));
    } catch (const ValidationError& e) {
      throw ValidationError(e.what(), e.field(), line_no);
    } catch (const std::exception& e) {
      throw ValidationError(std::string("bad agent config: ") + e.what(), "agent", line_no);
    }
  }
  if (out.empty()) throw ValidationError("agent config file is empty", "agents");
  return out;
}

void BehaviorKnobs::validate() const {
  for (double v : {end_request, clarify, disagree, distress}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("behavior knob outside [0,1]", "behavior_knobs");
  }
}

namespace {

// Rough log-mass of the content tokens in a typical state. Behavior logits
// are set relative to it so the knobs read as per-utterance rates.
constexpr double kContentLogMass = 5.6;
constexpr double kMeanUtteranceLen = 3.5;

double behavior_logit(double per_utterance_rate) {
  const double r = std::clamp(per_utterance_rate, 1e-6, 1.0 - 1e-6);
  const double q = 1.0 - std::pow(1.0 - r, 1.0 / kMeanUtteranceLen);
  return std::log(q / (1.0 - q)) + kContentLogMass;
}

// Trait index in the profile for each behavior the profile modulates.
struct TraitLink {
  Token token;
  int trait;
  double gain;
};

constexpr std::array<TraitLink, 10> kTraitLinks = {{
    {tok::kEndRequest, 0, 2.0},
    {tok::kClarify, 1, 2.5},
    {tok::kDisagree, 2, 2.5},
    {tok::kAggressive, 2, 2.0},
    {tok::kDistress, 3, 3.0},
    {tok::kNegAffect, 4, 2.5},
    {tok::kPosAffect, 5, 2.5},
    {tok::kAgree, 6, 2.0},
    {tok::kChangeTalk, 6, 2.0},
    {tok::kInsight, 7, 2.5},
}};

struct Reaction {
  Token agent_token;
  Token user_token;
  double weight;
};

constexpr std::array<Reaction, 13> kReactions = {{
    {tok::kConfusing, tok::kClarify, 4.5},
    {tok::kConfusing, tok::kNegAffect, 0.8},
    {tok::kConfusing, tok::kAggressive, 0.8},
    {tok::kContradict, tok::kDisagree, 4.0},
    {tok::kContradict, tok::kClarify, 1.5},
    {tok::kContradict, tok::kNegAffect, 0.8},
    {tok::kSuggest, tok::kAgree, 1.4},
    {tok::kSuggest, tok::kDisagree, 0.9},
    {tok::kSuggest, tok::kChangeTalk, 1.0},
    {tok::kAck, tok::kPosAffect, 0.4},
    {tok::kAck, tok::kInsight, 0.5},
    {tok::kGreeting, tok::kPosAffect, 0.6},
    {tok::kGreeting, tok::kDistress, 0.5},
}};

}  // namespace

GroundTruthUser make_ground_truth_user(std::uint64_t seed, const BehaviorKnobs& knobs) {
  knobs.validate();
  FeatureSpec spec;
  PolicyParams p(spec);
  const Vocabulary vocab(spec.vocab_size);
  const int v = spec.vocab_size;
  Rng rng(derive_seed(seed, "ground_truth"));

  auto bias = p.row(spec.bias_offset());
  for (int t = 0; t < v; ++t) {
    const auto tk = static_cast<Token>(t);
    if (vocab.is_agent_only(tk)) {
      bias[tk] = -12.0;
    } else if (auto topic = vocab.topic_of(tk)) {
      const int j = t - static_cast<int>(vocab.topic_token(*topic, 0));
      bias[tk] = -0.08 * j + 0.3 * rng.normal();
    } else if (vocab.is_neutral(tk)) {
      bias[tk] = 0.9 + 0.2 * rng.normal();
    }
  }

  const std::array<std::pair<Token, double>, 11> base_rates = {{
      {tok::kEndSession, 0.004},
      {tok::kEndRequest, knobs.end_request},
      {tok::kClarify, knobs.clarify},
      {tok::kDisagree, knobs.disagree},
      {tok::kAgree, 0.12},
      {tok::kAggressive, 0.02},
      {tok::kChangeTalk, 0.08},
      {tok::kInsight, 0.06},
      {tok::kDistress, knobs.distress},
      {tok::kNegAffect, 0.10},
      {tok::kPosAffect, 0.10},
  }};
  for (const auto& [t, r] : base_rates) bias[t] = behavior_logit(r);
  bias[tok::kEndUtterance] = 0.0;

  // Profile traits shift the matching behaviors around their base rate
  // (profile features are centered on 1/2).
  for (const auto& link : kTraitLinks) {
    p.weight(spec.profile_offset() + link.trait, link.token) += link.gain;
  }

  // Topic grounding: the session's salient topics and, more weakly, earlier
  // sessions' topics.
  const int per_topic = vocab.tokens_per_topic();
  for (int k = 0; k < kNumTopics; ++k) {
    for (int j = 0; j < per_topic; ++j) {
      const Token t = vocab.topic_token(k, j);
      p.weight(spec.summary_offset() + k, t) = 2.5 + 0.2 * rng.normal();
      p.weight(spec.prior_offset() + k, t) = 1.0;
      // answering the agent's question on topic k
      const int q = static_cast<int>(vocab.question(k));
      p.weight(spec.agent_offset() + q, t) = 2.0;
    }
  }

  // Reactions to the agent's move. Style markers can sit in either slot.
  for (const auto& r : kReactions) {
    for (int slot = 0; slot < spec.agent_slots; ++slot) {
      p.weight(spec.agent_offset() + slot * v + static_cast<int>(r.agent_token), r.user_token) +=
          r.weight;
    }
  }

  // Conversations wind down: end requests become likelier with turn count.
  constexpr std::array<double, 6> kEndByTurn = {-2.0, -0.9, -0.1, 0.5, 1.0, 1.4};
  for (int b = 0; b < spec.turn_buckets; ++b) {
    p.weight(spec.turn_offset() + b, tok::kEndRequest) = kEndByTurn[static_cast<std::size_t>(b)];
    p.weight(spec.turn_offset() + b, tok::kEndSession) = 0.5 * kEndByTurn[static_cast<std::size_t>(b)];
  }

  // Users avoid repeating themselves within a session.
  for (int t = 0; t < v; ++t) {
    const auto tk = static_cast<Token>(t);
    double d = 0.0;
    if (vocab.topic_of(tk)) d = -2.5;
    else if (vocab.is_neutral(tk)) d = -1.0;
    else if (vocab.is_behavior(tk)) d = -1.5;
    p.weight(spec.unigram_offset() + t, tk) = d;
  }

  // Utterance length: never empty, then a rising stop hazard.
  constexpr std::array<double, 5> kStopHazard = {0.0, 0.22, 0.32, 0.42, 0.55};
  for (int pos = 0; pos < spec.position_buckets; ++pos) {
    const double h = kStopHazard[static_cast<std::size_t>(std::min(pos, 4))];
    p.weight(spec.position_offset() + pos, tok::kEndUtterance) =
        h <= 0.0 ? -20.0 : std::log(h / (1.0 - h)) + kContentLogMass;
  }
  p.weight(spec.position_offset(), tok::kEndSession) = 0.0;

  // The logits above are written for unit context features.
  for (int f = spec.profile_offset(); f < spec.turn_offset(); ++f) {
    for (double& w : p.row(f)) w /= spec.context_scale;
  }

  p.validate();
  return GroundTruthUser{std::move(p), knobs};
}

void save_ground_truth_user(const GroundTruthUser& user, const std::filesystem::path& path) {
  ordered_json meta{{"role", "ground_truth_user"},
                    {"behavior_knobs",
                     {{"end_request", user.knobs.end_request},
                      {"clarify", user.knobs.clarify},
                      {"disagree", user.knobs.disagree},
                      {"distress", user.knobs.distress}}}};
  save_policy(user.params, path, meta);
}

GroundTruthUser load_ground_truth_user(const std::filesystem::path& path) {
  const Checkpoint raw = read_checkpoint(path);
  GroundTruthUser out{load_policy(path), {}};
  if (raw.header.contains("meta") && raw.header["meta"].contains("behavior_knobs")) {
    const auto& k = raw.header["meta"]["behavior_knobs"];
    out.knobs.end_request = k.value("end_request", out.knobs.end_request);
    out.knobs.clarify = k.value("clarify", out.knobs.clarify);
    out.knobs.disagree = k.value("disagree", out.knobs.disagree);
    out.knobs.distress = k.value("distress", out.knobs.distress);
  }
  out.knobs.validate();
  if (out.params.spec().family != Family::full) {
    throw ValidationError("ground-truth user must be a full-family policy", "family_id");
  }
  return out;
}

Context sample_context(std::uint64_t seed, std::string user_id) {
  Rng rng(derive_seed(seed, "context"));
  Context c;
  c.user_id = std::move(user_id);
  c.profile.resize(kProfileDim);
  for (double& x : c.profile) {
    const double s = std::sin(0.5 * std::numbers::pi * rng.uniform());
    x = s * s;
  }
  auto sparse_summary = [&](double main_lo, double main_span) {
    std::vector<double> s(kSummaryDim);
    for (double& x : s) x = 0.15 * rng.uniform();
    const std::size_t m1 = rng.below(kSummaryDim);
    std::size_t m2 = rng.below(kSummaryDim - 1);
    if (m2 >= m1) ++m2;
    s[m1] += main_lo + main_span * rng.uniform();
    s[m2] += 0.3 + 0.3 * rng.uniform();
    for (double& x : s) x = std::clamp(x, 0.0, 1.0);
    return s;
  };
  c.current_summary = sparse_summary(0.6, 0.4);
  const std::size_t n_prior = 3 + rng.below(3);
  for (std::size_t i = 0; i < n_prior; ++i) {
    std::vector<double> other = sparse_summary(0.5, 0.4);
    for (std::size_t k = 0; k < other.size(); ++k) {
      other[k] = std::clamp(0.5 * other[k] + 0.5 * c.current_summary[k], 0.0, 1.0);
    }
    c.prior_summaries.push_back(std::move(other));
  }
  c.validate();
  return c;
}

UserPolicy make_user_policy(const PolicyParams& params, int max_utterance_len) {
  if (max_utterance_len < 1) throw ValidationError("max utterance length must be >= 1", "max_len");
  auto shared = std::make_shared<const PolicyParams>(params);
  return [shared, max_utterance_len](std::span<const Message> history, const Context& ctx,
                                     std::uint64_t seed) {
    return sample_utterance(*shared, history, ctx, seed, max_utterance_len);
  };
}

namespace {

bool contains(const Tokens& ts, Token t) { return std::find(ts.begin(), ts.end(), t) != ts.end(); }

bool mentions_topic(const Tokens& ts, int topic, const Vocabulary& vocab) {
  return std::any_of(ts.begin(), ts.end(), [&](Token t) { return vocab.topic_of(t) == topic; });
}

}  // namespace

RolloutTrace rollout_traced(const UserPolicy& user, const std::string& policy_id,
                            const AgentConfig& agent, const Context& context, std::uint64_t seed,
                            const Vocabulary& vocab) {
  agent.validate();
  context.validate();
  Rng arng(mix_seed(derive_seed(seed, "agent"), agent.script_seed));
  const std::uint64_t user_seed = derive_seed(seed, "user");

  // Topic plan: most salient topics of this session first.
  std::array<double, kNumTopics> key{};
  for (int k = 0; k < kNumTopics; ++k) {
    key[static_cast<std::size_t>(k)] =
        context.current_summary[static_cast<std::size_t>(k)] + 0.35 * arng.uniform();
  }
  std::array<int, kNumTopics> plan{};
  std::iota(plan.begin(), plan.end(), 0);
  std::stable_sort(plan.begin(), plan.end(), [&](int a, int b) {
    return key[static_cast<std::size_t>(a)] > key[static_cast<std::size_t>(b)];
  });

  std::vector<IssueEvent> events;
  std::map<IssueCategory, int> eligible;
  for (IssueCategory c : kInjectedCategories) eligible[c] = 0;

  std::vector<Message> msgs;
  std::size_t plan_pos = 0;
  bool suggested = false;
  auto draw = [&](IssueCategory c) {
    ++eligible[c];
    return arng.bernoulli(agent.rate(c));
  };

  for (int turn = 0; turn < agent.max_turns; ++turn) {
    Tokens a;
    bool closing = false;
    const int idx = static_cast<int>(msgs.size());
    if (turn == 0) {
      a = {tok::kGreeting, vocab.question(plan[0])};
    } else {
      const Tokens& last = msgs.back().tokens;
      if (contains(last, tok::kEndRequest)) {
        if (draw(IssueCategory::ignores_end_request)) {
          events.push_back({IssueCategory::ignores_end_request, idx});
        } else {
          closing = true;
        }
      } else if (contains(last, tok::kDistress) || contains(last, tok::kNegAffect)) {
        if (draw(IssueCategory::premature_wrapup)) {
          events.push_back({IssueCategory::premature_wrapup, idx});
          closing = true;
        }
      }
      if (closing) {
        a = {tok::kWrapup, tok::kEndSession};
      } else {
        const bool has_question = plan_pos < plan.size();
        if (has_question && mentions_topic(last, plan[plan_pos], vocab)) {
          if (draw(IssueCategory::repetitive)) {
            events.push_back({IssueCategory::repetitive, idx});
          } else {
            ++plan_pos;
          }
        }
        Token style = arng.uniform() < 0.35 ? tok::kSuggest : tok::kAck;
        if (draw(IssueCategory::confusing)) {
          events.push_back({IssueCategory::confusing, idx});
          style = tok::kConfusing;
        }
        a.push_back(style);
        if (suggested && draw(IssueCategory::contradiction)) {
          events.push_back({IssueCategory::contradiction, idx});
          a.push_back(tok::kContradict);
        }
        if (plan_pos < plan.size()) a.push_back(vocab.question(plan[plan_pos]));
        if (style == tok::kSuggest) suggested = true;
      }
    }
    msgs.push_back({Role::agent, std::move(a), idx});
    if (closing) break;

    Tokens u = user(msgs, context, mix_seed(user_seed, static_cast<std::uint64_t>(turn)));
    if (u.empty()) {
      throw ValidationError("user policy returned an empty utterance at turn " +
                                std::to_string(turn + 1),
                            "turn");
    }
    for (Token t : u) {
      if (!vocab.contains(t)) {
        throw ValidationError("user policy emitted token " + std::to_string(t) +
                                  " outside the vocabulary at turn " + std::to_string(turn + 1),
                              "turn");
      }
    }
    const bool ends = contains(u, tok::kEndSession);
    msgs.push_back({Role::user, std::move(u), idx + 1});
    if (ends) break;
  }

  const Label label = policy_id == kGroundTruthPolicyId ? Label::real : Label::simulated;
  return RolloutTrace{Session(context, std::move(msgs), label, policy_id, agent.agent_id, seed),
                      std::move(events), std::move(eligible)};
}

Session rollout_session(const UserPolicy& user, const std::string& policy_id,
                        const AgentConfig& agent, const Context& context, std::uint64_t seed,
                        const Vocabulary& vocab) {
  return rollout_traced(user, policy_id, agent, context, seed, vocab).session;
}

World make_default_world(std::uint64_t gt_seed) {
  World w;
  w.user = make_ground_truth_user(gt_seed);
  w.agents = default_agent_grid();
  return w;
}

std::vector<RolloutPlan> plan_rollouts(int n_contexts, int sims_per_context, std::size_t n_agents,
                                       std::uint64_t seed) {
  if (n_contexts < 1) throw ValidationError("n_contexts must be >= 1", "n_contexts");
  if (sims_per_context < 1) throw ValidationError("sims_per_context must be >= 1", "sims_per_context");
  if (n_agents == 0) throw ValidationError("agent list is empty", "agents");
  const std::uint64_t cseed = derive_seed(seed, "contexts");
  const std::uint64_t rseed = derive_seed(seed, "rollouts");
  std::vector<RolloutPlan> out;
  out.reserve(static_cast<std::size_t>(n_contexts) * static_cast<std::size_t>(sims_per_context));
  for (int i = 0; i < n_contexts; ++i) {
    Context ctx = sample_context(mix_seed(cseed, static_cast<std::uint64_t>(i)),
                                 "user_" + std::to_string(i));
    for (int j = 0; j < sims_per_context; ++j) {
      const std::size_t index = out.size();
      out.push_back({ctx, index % n_agents, mix_seed(rseed, index)});
    }
  }
  return out;
}

std::vector<RolloutPlan> reseed(std::span<const RolloutPlan> plan, std::uint64_t seed) {
  const std::uint64_t rseed = derive_seed(seed, "rollouts");
  std::vector<RolloutPlan> out(plan.begin(), plan.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].seed = mix_seed(rseed, i);
  return out;
}

std::vector<RolloutTrace> run_rollouts_traced(const World& world, const UserPolicy& user,
                                              const std::string& policy_id,
                                              std::span<const RolloutPlan> plan, int workers) {
  if (world.agents.empty()) throw ValidationError("agent list is empty", "agents");
  for (const auto& p : plan) {
    if (p.agent >= world.agents.size()) throw ValidationError("plan names a missing agent", "agent");
  }
  std::vector<std::optional<RolloutTrace>> slots(plan.size());
  parallel_for(plan.size(), workers, [&](std::size_t i) {
    slots[i] = rollout_traced(user, policy_id, world.agents[plan[i].agent], plan[i].context,
                              plan[i].seed, world.vocab);
  });
  std::vector<RolloutTrace> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<Session> run_rollouts(const World& world, const UserPolicy& user,
                                  const std::string& policy_id, std::span<const RolloutPlan> plan,
                                  int workers) {
  auto traces = run_rollouts_traced(world, user, policy_id, plan, workers);
  std::vector<Session> out;
  out.reserve(traces.size());
  for (auto& t : traces) out.push_back(std::move(t.session));
  return out;
}

std::vector<Session> generate_real_corpus(const World& world, int n_contexts, int sims_per_context,
                                          std::uint64_t seed, int workers) {
  if (world.agents.empty()) throw ValidationError("agent list is empty", "agents");
  const auto plan = plan_rollouts(n_contexts, sims_per_context, world.agents.size(), seed);
  return run_rollouts(world, make_user_policy(world.user.params, world.max_utterance_len),
                      kGroundTruthPolicyId, plan, workers);
}

}  // namespace usersim
