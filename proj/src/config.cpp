#include "gssd/config.hpp"

#include <fstream>
#include <sstream>

#include "gssd/errors.hpp"

namespace gssd::config {

namespace {
std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace

KeyValues parse_text(const std::string& text) {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got \"" +
                              line + "\"");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

KeyValues load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

std::string dump(const KeyValues& kv) {
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    return os.str();
}

std::optional<std::string> get(const KeyValues& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
}

std::string get_or(const KeyValues& kv, const std::string& key, const std::string& fallback) {
    auto v = get(kv, key);
    return v.has_value() ? *v : fallback;
}

int64_t get_int_or(const KeyValues& kv, const std::string& key, int64_t fallback) {
    auto v = get(kv, key);
    if (!v.has_value()) return fallback;
    try {
        size_t used = 0;
        int64_t r = std::stoll(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected integer, got \"" + *v + "\"");
    }
}

double get_double_or(const KeyValues& kv, const std::string& key, double fallback) {
    auto v = get(kv, key);
    if (!v.has_value()) return fallback;
    try {
        size_t used = 0;
        double r = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got \"" + *v + "\"");
    }
}

bool get_bool_or(const KeyValues& kv, const std::string& key, bool fallback) {
    auto v = get(kv, key);
    if (!v.has_value()) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("config key " + key + ": expected boolean, got \"" + *v + "\"");
}

}  // namespace gssd::config
