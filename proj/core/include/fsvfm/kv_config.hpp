#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace fsvfm {

// Flat key=value text. '#' starts a comment; blank lines are ignored; keys
// and values are trimmed. Ordered so that formatting is canonical.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

// Typed accessors; malformed values raise ConfigError naming the key.
int kv_int(const std::string& key, const std::string& value);
std::int64_t kv_int64(const std::string& key, const std::string& value);
std::uint64_t kv_uint64(const std::string& key, const std::string& value);
double kv_double(const std::string& key, const std::string& value);
bool kv_bool(const std::string& key, const std::string& value);
// Shortest decimal form that parses back to the same double.
std::string kv_format_double(double v);

// "a,b,c" triplets (normalization constants).
std::string kv_format_triplet(const std::array<double, 3>& v);
std::array<double, 3> kv_triplet(const std::string& key, const std::string& value);
// 16 lowercase hex digits.
std::string kv_hex64(std::uint64_t v);

// Overlays `over` onto `base` (over wins).
KeyValues merge_key_values(KeyValues base, const KeyValues& over);

}  // namespace fsvfm
