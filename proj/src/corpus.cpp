#include "usersim/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "usersim/json_io.hpp"

#include "usersim/rng.hpp"

namespace usersim {

using ojson = nlohmann::ordered_json;

const char* to_string(Role r) { return r == Role::agent ? "agent" : "user"; }
const char* to_string(Label l) { return l == Label::real ? "real" : "simulated"; }

int Context::feature_count() const {
  int n = static_cast<int>(profile.size() + current_summary.size());
  for (const auto& s : prior_summaries) n += static_cast<int>(s.size());
  return n;
}

Context Context::truncated() const {
  Context c = *this;
  while (c.feature_count() > c.feature_budget && !c.prior_summaries.empty()) {
    c.prior_summaries.erase(c.prior_summaries.begin());
  }
  return c;
}

void Context::validate() const {
  auto check_vec = [](const std::vector<double>& v, std::size_t dim, const char* field) {
    if (v.size() != dim) {
      throw ValidationError(std::string(field) + " has dimension " + std::to_string(v.size()) +
                                ", expected " + std::to_string(dim),
                            field);
    }
    for (double x : v) {
      if (!std::isfinite(x)) throw ValidationError(std::string(field) + " not finite", field);
    }
  };
  check_vec(profile, kProfileDim, "profile");
  for (double x : profile) {
    if (x < 0.0 || x > 1.0) throw ValidationError("profile entry outside [0,1]", "profile");
  }
  check_vec(current_summary, kSummaryDim, "current_summary");
  if (prior_summaries.size() > kMaxPriorSummaries) {
    throw ValidationError("more than 5 prior summaries", "prior_summaries");
  }
  for (const auto& s : prior_summaries) check_vec(s, kSummaryDim, "prior_summaries");
  if (feature_count() > feature_budget) {
    throw ValidationError("context exceeds feature budget", "feature_budget");
  }
}

Session::Session(Context context, std::vector<Message> messages, Label label,
                 std::string source_policy_id, std::string agent_config_id, std::uint64_t rng_seed)
    : context_(std::move(context)),
      messages_(std::move(messages)),
      label_(label),
      source_policy_id_(std::move(source_policy_id)),
      agent_config_id_(std::move(agent_config_id)),
      rng_seed_(rng_seed) {
  context_.validate();
  for (std::size_t i = 0; i < messages_.size(); ++i) {
    const Message& m = messages_[i];
    const Role expected = i % 2 == 0 ? Role::agent : Role::user;
    if (m.role != expected) {
      throw ValidationError("message " + std::to_string(i) + " breaks agent/user alternation",
                            "role");
    }
    if (m.turn_index != static_cast<int>(i)) {
      throw ValidationError("message " + std::to_string(i) + " has turn_index " +
                                std::to_string(m.turn_index),
                            "turn_index");
    }
    if (m.tokens.empty()) {
      throw ValidationError("message " + std::to_string(i) + " has no tokens", "tokens");
    }
  }
  const bool gt = source_policy_id_ == kGroundTruthPolicyId;
  if (gt != (label_ == Label::real)) {
    throw ValidationError("label must be real exactly when source_policy_id is ground_truth",
                          "label");
  }
}

std::string Session::id() const {
  return context_.user_id + ":" + agent_config_id_ + ":" + std::to_string(rng_seed_);
}

int Session::user_turns() const { return static_cast<int>(messages_.size() / 2); }

std::size_t Session::user_message_index(int t) const {
  return static_cast<std::size_t>(2 * t + 1);
}

Session Session::truncated(std::size_t end) const {
  end = std::min(end, messages_.size());
  return with_messages({messages_.begin(), messages_.begin() + static_cast<std::ptrdiff_t>(end)});
}

Session Session::with_messages(std::vector<Message> messages) const {
  return Session(context_, std::move(messages), label_, source_policy_id_, agent_config_id_,
                 rng_seed_);
}

Session Session::relabeled(Label label, std::string source_policy_id) const {
  return Session(context_, messages_, label, std::move(source_policy_id), agent_config_id_,
                 rng_seed_);
}

void validate_tokens(const Session& s, const Vocabulary& vocab) {
  for (const Message& m : s.messages()) {
    for (Token t : m.tokens) {
      if (!vocab.contains(t)) {
        throw ValidationError("message " + std::to_string(m.turn_index) + " token " +
                                  std::to_string(t) + " >= vocabulary size " +
                                  std::to_string(vocab.size()),
                              "tokens");
      }
    }
  }
}

namespace json_io {

ojson context_to_json(const Context& c) {
  ojson j;
  j["profile"] = c.profile;
  j["prior_summaries"] = c.prior_summaries;
  j["current_summary"] = c.current_summary;
  return j;
}

Context context_from_json(const ojson& j, std::string user_id) {
  if (!j.is_object()) throw ValidationError("missing field context", "context");
  Context c;
  c.user_id = std::move(user_id);
  c.profile = required<std::vector<double>>(j, "profile");
  c.prior_summaries = required<std::vector<std::vector<double>>>(j, "prior_summaries");
  c.current_summary = required<std::vector<double>>(j, "current_summary");
  return c;
}

ojson messages_to_json(const std::vector<Message>& msgs) {
  ojson out = ojson::array();
  for (const Message& m : msgs) {
    ojson mj;
    mj["role"] = to_string(m.role);
    mj["tokens"] = m.tokens;
    mj["turn_index"] = m.turn_index;
    out.push_back(std::move(mj));
  }
  return out;
}

std::vector<Message> messages_from_json(const ojson& j) {
  if (!j.is_array()) throw ValidationError("messages is not an array", "messages");
  std::vector<Message> messages;
  for (const ojson& mj : j) {
    Message m;
    const auto role = required<std::string>(mj, "role");
    if (role == "agent") {
      m.role = Role::agent;
    } else if (role == "user") {
      m.role = Role::user;
    } else {
      throw ValidationError("unknown role '" + role + "'", "role");
    }
    m.tokens = required<Tokens>(mj, "tokens");
    m.turn_index = required<int>(mj, "turn_index");
    messages.push_back(std::move(m));
  }
  return messages;
}

}  // namespace json_io

using json_io::required;

std::string session_to_json_line(const Session& s) {
  ojson j;
  j["user_id"] = s.context().user_id;
  j["agent_config_id"] = s.agent_config_id();
  j["source_policy_id"] = s.source_policy_id();
  j["label"] = to_string(s.label());
  j["rng_seed"] = s.rng_seed();
  j["context"] = json_io::context_to_json(s.context());
  j["messages"] = json_io::messages_to_json({s.messages().begin(), s.messages().end()});
  return j.dump();
}

Session session_from_json_line(const std::string& line, const Vocabulary& vocab,
                               std::size_t line_no) {
  try {
    const ojson j = json_io::parse_line(line);
    if (!j.is_object()) throw ValidationError("session is not a JSON object");
    if (!j.contains("context") || !j["context"].is_object()) {
      throw ValidationError("missing field context", "context");
    }
    Context c = json_io::context_from_json(j["context"], required<std::string>(j, "user_id"));

    const auto label_str = required<std::string>(j, "label");
    Label label;
    if (label_str == "real") {
      label = Label::real;
    } else if (label_str == "simulated") {
      label = Label::simulated;
    } else {
      throw ValidationError("unknown label '" + label_str + "'", "label");
    }

    if (!j.contains("messages") || !j["messages"].is_array()) {
      throw ValidationError("missing field messages", "messages");
    }
    std::vector<Message> messages = json_io::messages_from_json(j["messages"]);
    Session s(std::move(c), std::move(messages), label,
              required<std::string>(j, "source_policy_id"),
              required<std::string>(j, "agent_config_id"),
              required<std::uint64_t>(j, "rng_seed"));
    validate_tokens(s, vocab);
    return s;
  } catch (const ValidationError& e) {
    if (line_no == 0 || e.line() != 0) throw;
    throw ValidationError(e.what(), e.field(), line_no);
  }
}

std::size_t write_sessions(std::span<const Session> sessions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing", 0);
  std::size_t written = 0;
  for (const Session& s : sessions) {
    out << session_to_json_line(s) << '\n';
    if (!out) throw IoError("write failed on " + path.string(), written);
    ++written;
  }
  out.flush();
  if (!out) throw IoError("flush failed on " + path.string(), written);
  return written;
}

std::vector<Session> read_sessions(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Session> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(session_from_json_line(line, vocab, line_no));
  }
  return out;
}

SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0,1)");
  }
  if (n < 2) throw std::invalid_argument("split needs at least 2 sessions");
  std::size_t n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order.begin(), order.end());

  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  return out;
}

std::pair<std::vector<Session>, std::vector<Session>> split_corpus(
    std::span<const Session> sessions, double train_fraction, std::uint64_t seed) {
  const SplitIndices idx = split_indices(sessions.size(), train_fraction, seed);
  return {gather<Session>(sessions, idx.train), gather<Session>(sessions, idx.validation)};
}

}  // namespace usersim
