#include "usersim/tokens.hpp"

#include <array>
#include <stdexcept>

namespace usersim {

namespace {
constexpr std::array<const char*, tok::kFirstQuestion> kMarkerNames = {
    "<end_session>", "<eou>",      "<end_request>", "<clarify>",
    "<disagree>",    "<agree>",    "<aggressive>",  "<change_talk>",
    "<insight>",     "<distress>", "<neg_affect>",  "<pos_affect>",
    "<greeting>",    "<ack>",      "<confusing>",   "<wrapup>",
    "<contradict>",  "<suggest>"};
}

Vocabulary::Vocabulary(int size) : size_(size) {
  const int content = size - static_cast<int>(tok::kFirstContent) - kNumNeutral;
  if (content < kNumTopics) {
    throw std::invalid_argument("vocabulary size " + std::to_string(size) +
                                " too small for the fixed token layout");
  }
  per_topic_ = content / kNumTopics;
}

Token Vocabulary::question(int topic) const {
  return tok::kFirstQuestion + static_cast<Token>(topic);
}

std::optional<int> Vocabulary::question_topic(Token t) const {
  if (t >= tok::kFirstQuestion && t < tok::kFirstContent) {
    return static_cast<int>(t - tok::kFirstQuestion);
  }
  return std::nullopt;
}

Token Vocabulary::topic_token(int topic, int j) const {
  return tok::kFirstContent + static_cast<Token>(topic * per_topic_ + j);
}

std::optional<int> Vocabulary::topic_of(Token t) const {
  if (t < tok::kFirstContent) return std::nullopt;
  const int offset = static_cast<int>(t - tok::kFirstContent);
  if (offset >= per_topic_ * kNumTopics) return std::nullopt;
  return offset / per_topic_;
}

bool Vocabulary::is_neutral(Token t) const {
  return contains(t) && t >= tok::kFirstContent && !topic_of(t);
}

bool Vocabulary::is_agent_only(Token t) const {
  return t >= tok::kGreeting && t < tok::kFirstContent;
}

bool Vocabulary::is_behavior(Token t) const {
  return t >= tok::kEndRequest && t <= tok::kPosAffect;
}

std::string Vocabulary::name(Token t) const {
  if (t < kMarkerNames.size()) return kMarkerNames[t];
  if (auto q = question_topic(t)) return "<q" + std::to_string(*q) + ">";
  if (auto topic = topic_of(t)) {
    const int j = static_cast<int>(t - tok::kFirstContent) - *topic * per_topic_;
    return "t" + std::to_string(*topic) + "w" + std::to_string(j);
  }
  if (contains(t)) return "n" + std::to_string(t);
  return "<oov:" + std::to_string(t) + ">";
}

std::string Vocabulary::render(std::span<const Token> tokens) const {
  std::string out;
  for (Token t : tokens) {
    if (!out.empty()) out += ' ';
    out += name(t);
  }
  return out;
}

}  // namespace usersim
