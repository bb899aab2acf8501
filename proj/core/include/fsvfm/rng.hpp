#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fsvfm {

// Deterministic random stream. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions below are written out
// explicitly because the std:: distributions are implementation-defined and
// would break bit-exact reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Named sub-stream: all randomness flows from one seed through labels
  // such as "data", "mask", "init" plus optional integer coordinates.
  static Rng derive(std::uint64_t seed, std::string_view stream,
                    std::initializer_list<std::uint64_t> coords = {});

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  int uniform_int(int lo, int hi_inclusive);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Normal truncated to [-2 std, 2 std] by resampling.
  double truncated_normal(double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct elements drawn uniformly without replacement (partial
  // Fisher-Yates over a copy of the pool).
  std::vector<int> sample_without_replacement(std::span<const int> pool, std::size_t k);

  std::string serialize() const;
  void deserialize(const std::string& state);

  bool operator==(const Rng& o) const { return engine_ == o.engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
// FNV-1a over raw bytes; used for config and audit hashes.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace fsvfm
