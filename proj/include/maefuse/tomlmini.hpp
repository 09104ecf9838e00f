#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "maefuse/errors.hpp"

// Minimal TOML subset: [section] headers (dotted names allowed), key = value
// lines, # comments. Values: "strings", integers, floats, booleans, and flat
// arrays of those. Enough for experiment configs; no dates, no inline or
// array-of-tables.
namespace maefuse::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
    std::variant<std::string, int64_t, double, bool, Array> v;

    bool is_string() const { return std::holds_alternative<std::string>(v); }
    bool is_int() const { return std::holds_alternative<int64_t>(v); }
    bool is_float() const { return std::holds_alternative<double>(v); }
    bool is_bool() const { return std::holds_alternative<bool>(v); }
    bool is_array() const { return std::holds_alternative<Array>(v); }

    const std::string& as_string() const {
        if (!is_string()) throw ConfigError("config: expected a string value");
        return std::get<std::string>(v);
    }
    int64_t as_int() const {
        if (!is_int()) throw ConfigError("config: expected an integer value");
        return std::get<int64_t>(v);
    }
    double as_float() const {
        if (is_int()) return static_cast<double>(std::get<int64_t>(v));
        if (!is_float()) throw ConfigError("config: expected a number");
        return std::get<double>(v);
    }
    bool as_bool() const {
        if (!is_bool()) throw ConfigError("config: expected true/false");
        return std::get<bool>(v);
    }
    const Array& as_array() const {
        if (!is_array()) throw ConfigError("config: expected an array");
        return std::get<Array>(v);
    }
};

// Flat table keyed by "section.key".
using Table = std::map<std::string, Value>;

namespace detail {

inline std::string strip(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// removes a trailing comment that is not inside a quoted string
inline std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

Value parse_value(const std::string& raw, long line_no);

inline Value parse_array(const std::string& raw, long line_no) {
    Array items;
    std::string body = strip(raw.substr(1, raw.size() - 2));
    if (body.empty()) return Value{items};
    size_t start = 0;
    int depth = 0;
    bool in_str = false;
    for (size_t i = 0; i <= body.size(); ++i) {
        if (i < body.size()) {
            const char c = body[i];
            if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_str = !in_str;
            if (in_str) continue;
            if (c == '[') ++depth;
            if (c == ']') --depth;
            if (c != ',' || depth != 0) continue;
        }
        items.push_back(parse_value(strip(body.substr(start, i - start)), line_no));
        start = i + 1;
    }
    return Value{items};
}

inline Value parse_value(const std::string& raw, long line_no) {
    if (raw.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
    if (raw.front() == '[') {
        if (raw.back() != ']') {
            throw ConfigError("config line " + std::to_string(line_no) + ": unterminated array");
        }
        return parse_array(raw, line_no);
    }
    if (raw.front() == '"') {
        if (raw.size() < 2 || raw.back() != '"') {
            throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
        }
        std::string out;
        for (size_t i = 1; i + 1 < raw.size(); ++i) {
            if (raw[i] == '\\' && i + 2 < raw.size()) {
                const char n = raw[i + 1];
                if (n == '"' || n == '\\') {
                    out.push_back(n);
                    ++i;
                    continue;
                }
            }
            out.push_back(raw[i]);
        }
        return Value{out};
    }
    if (raw == "true") return Value{true};
    if (raw == "false") return Value{false};
    // integer?
    {
        int64_t iv{};
        auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), iv);
        if (ec == std::errc{} && p == raw.data() + raw.size()) return Value{iv};
    }
    // float?
    try {
        size_t used = 0;
        const double dv = std::stod(raw, &used);
        if (used == raw.size()) return Value{dv};
    } catch (...) {
    }
    throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value '" + raw + "'");
}

} // namespace detail

inline Table parse(const std::string& text) {
    Table table;
    std::string section;
    std::string line;
    long line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t nl = text.find('\n', pos);
        line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        line = detail::strip(detail::strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
            }
            section = detail::strip(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = detail::strip(line.substr(0, eq));
        const std::string val = detail::strip(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        table[full] = detail::parse_value(val, line_no);
    }
    return table;
}

inline Table parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text);
}

// "--set key=value" override; bare words fall back to strings.
inline void apply_override(Table& table, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = detail::strip(assignment.substr(0, eq));
    const std::string raw = detail::strip(assignment.substr(eq + 1));
    try {
        table[key] = detail::parse_value(raw, 0);
    } catch (const ConfigError&) {
        table[key] = Value{raw}; // unquoted string convenience
    }
}

} // namespace maefuse::toml
