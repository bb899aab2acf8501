#include "fsvfm/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "fsvfm/errors.hpp"

namespace fsvfm {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t h) { return fnv1a64(s.data(), s.size(), h); }

Rng Rng::derive(std::uint64_t seed, std::string_view stream,
                std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(seed ^ fnv1a64(stream));
  for (std::uint64_t c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return Rng(h);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw PreconditionError("uniform_index: n must be positive");
  // Rejection sampling on the smallest enclosing power-of-two mask.
  std::uint64_t mask = n - 1;
  mask |= mask >> 1;
  mask |= mask >> 2;
  mask |= mask >> 4;
  mask |= mask >> 8;
  mask |= mask >> 16;
  mask |= mask >> 32;
  while (true) {
    std::uint64_t x = engine_() & mask;
    if (x < n) return x;
  }
}

int Rng::uniform_int(int lo, int hi_inclusive) {
  if (hi_inclusive < lo) throw PreconditionError("uniform_int: empty range");
  auto span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi_inclusive) - lo + 1);
  return lo + static_cast<int>(uniform_index(span));
}

double Rng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_normal_ = true;
  return radius * std::cos(angle);
}

double Rng::truncated_normal(double stddev) {
  while (true) {
    double z = normal();
    if (std::abs(z) <= 2.0) return z * stddev;
  }
}

std::vector<int> Rng::sample_without_replacement(std::span<const int> pool, std::size_t k) {
  if (k > pool.size()) throw PreconditionError("sample_without_replacement: k exceeds pool size");
  std::vector<int> work(pool.begin(), pool.end());
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_index(work.size() - i));
    std::swap(work[i], work[j]);
  }
  work.resize(k);
  return work;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_normal_ ? 1 : 0) << ' ';
  os.precision(17);
  os << std::hexfloat << spare_normal_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  int spare = 0;
  is >> engine_ >> spare;
  std::string spare_text;
  is >> spare_text;
  if (!is && !is.eof()) throw StateError("malformed rng state");
  has_spare_normal_ = spare != 0;
  spare_normal_ = spare_text.empty() ? 0.0 : std::strtod(spare_text.c_str(), nullptr);
}

}  // namespace fsvfm
