#include "fsvfm/kv_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "fsvfm/errors.hpp"

namespace fsvfm {

namespace {
std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size())
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a number");
  return out;
}
}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

int kv_int(const std::string& key, const std::string& value) { return parse_number<int>(key, value); }
std::int64_t kv_int64(const std::string& key, const std::string& value) {
  return parse_number<std::int64_t>(key, value);
}
std::uint64_t kv_uint64(const std::string& key, const std::string& value) {
  return parse_number<std::uint64_t>(key, value);
}
double kv_double(const std::string& key, const std::string& value) { return parse_number<double>(key, value); }

bool kv_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + value + "'");
}

std::string kv_format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string kv_format_triplet(const std::array<double, 3>& v) {
  return kv_format_double(v[0]) + "," + kv_format_double(v[1]) + "," + kv_format_double(v[2]);
}

std::array<double, 3> kv_triplet(const std::string& key, const std::string& value) {
  std::array<double, 3> out{};
  std::stringstream ss(value);
  std::string part;
  for (auto& x : out) {
    if (!std::getline(ss, part, ',')) throw ConfigError("key '" + key + "': expected three comma-separated numbers");
    x = kv_double(key, std::string(trim(part)));
  }
  if (std::getline(ss, part, ',')) throw ConfigError("key '" + key + "': expected three comma-separated numbers");
  return out;
}

std::string kv_hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return out;
}

KeyValues merge_key_values(KeyValues base, const KeyValues& over) {
  for (const auto& [k, v] : over) base[k] = v;
  return base;
}

}  // namespace fsvfm
