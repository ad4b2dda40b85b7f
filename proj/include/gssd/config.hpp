#pragma once

#include <map>
#include <optional>
#include <string>

namespace gssd::config {

// Flat "key = value" lines; '#' starts a comment; blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_text(const std::string& text);
KeyValues load_file(const std::string& path);
std::string dump(const KeyValues& kv);

std::optional<std::string> get(const KeyValues& kv, const std::string& key);
std::string get_or(const KeyValues& kv, const std::string& key, const std::string& fallback);
int64_t get_int_or(const KeyValues& kv, const std::string& key, int64_t fallback);
double get_double_or(const KeyValues& kv, const std::string& key, double fallback);
bool get_bool_or(const KeyValues& kv, const std::string& key, bool fallback);

}  // namespace gssd::config
