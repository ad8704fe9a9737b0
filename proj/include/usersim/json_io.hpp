#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "usersim/corpus.hpp"

namespace usersim::json_io {

using ojson = nlohmann::ordered_json;

template <typename T>
T required(const ojson& j, const char* field) {
  if (!j.is_object() || !j.contains(field)) {
    throw ValidationError(std::string("missing field ") + field, field);
  }
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad field ") + field + ": " + e.what(), field);
  }
}

inline ojson parse_line(const std::string& line) {
  try {
    return ojson::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON: ") + e.what(), "");
  }
}

ojson context_to_json(const Context& c);
// user_id is stored next to the context in session files, so it is passed in.
Context context_from_json(const ojson& j, std::string user_id);

ojson messages_to_json(const std::vector<Message>& msgs);
std::vector<Message> messages_from_json(const ojson& j);

}  // namespace usersim::json_io
