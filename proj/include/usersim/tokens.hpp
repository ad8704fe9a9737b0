#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace usersim {

using Token = std::uint32_t;
using Tokens = std::vector<Token>;

// Closed vocabulary. Ids below kFirstContent are fixed markers shared by every
// vocabulary size; the content range is split into kNumTopics equal topic
// groups followed by a few neutral filler tokens.
namespace tok {
inline constexpr Token kEndSession = 0;
inline constexpr Token kEndUtterance = 1;
inline constexpr Token kEndRequest = 2;
inline constexpr Token kClarify = 3;
inline constexpr Token kDisagree = 4;
inline constexpr Token kAgree = 5;
inline constexpr Token kAggressive = 6;
inline constexpr Token kChangeTalk = 7;
inline constexpr Token kInsight = 8;
inline constexpr Token kDistress = 9;
inline constexpr Token kNegAffect = 10;
inline constexpr Token kPosAffect = 11;
// agent-side markers
inline constexpr Token kGreeting = 12;
inline constexpr Token kAck = 13;
inline constexpr Token kConfusing = 14;
inline constexpr Token kWrapup = 15;
inline constexpr Token kContradict = 16;
inline constexpr Token kSuggest = 17;
inline constexpr Token kFirstQuestion = 18;  // Q_0 .. Q_7
inline constexpr Token kFirstContent = 26;
}  // namespace tok

inline constexpr int kNumTopics = 8;
inline constexpr int kNumNeutral = 6;
inline constexpr int kDefaultVocabSize = 128;

class Vocabulary {
 public:
  explicit Vocabulary(int size = kDefaultVocabSize);

  int size() const { return size_; }
  int tokens_per_topic() const { return per_topic_; }
  bool contains(Token t) const { return t < static_cast<Token>(size_); }

  Token question(int topic) const;
  std::optional<int> question_topic(Token t) const;

  Token topic_token(int topic, int j) const;
  // Topic group of a content token; nullopt for markers and neutral filler.
  std::optional<int> topic_of(Token t) const;
  bool is_neutral(Token t) const;
  bool is_agent_only(Token t) const;
  bool is_behavior(Token t) const;  // kEndRequest .. kPosAffect

  std::string name(Token t) const;
  std::string render(std::span<const Token> tokens) const;

 private:
  int size_;
  int per_topic_;
};

}  // namespace usersim
