#include "fsvfm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "fsvfm/errors.hpp"

namespace fsvfm {

const char* strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::fasking_i: return "fasking_i";
    case MaskStrategy::frp: return "frp";
    case MaskStrategy::crfr_r: return "crfr_r";
    case MaskStrategy::crfr_p: return "crfr_p";
  }
  return "unknown";
}

MaskStrategy parse_strategy(const std::string& name) {
  for (auto s : {MaskStrategy::random, MaskStrategy::fasking_i, MaskStrategy::frp, MaskStrategy::crfr_r,
                 MaskStrategy::crfr_p})
    if (name == strategy_name(s)) return s;
  throw ConfigError("unknown mask strategy '" + name + "'");
}

int MaskPair::masked_count() const { return static_cast<int>(std::count(mask.begin(), mask.end(), 1)); }

int MaskPair::region_masked_count() const {
  return static_cast<int>(std::count(region_mask.begin(), region_mask.end(), 1));
}

int mask_budget(int n_patches, double ratio) {
  if (n_patches <= 0) throw PreconditionError("mask budget needs at least one patch");
  if (!(ratio > 0.0 && ratio < 1.0)) throw PreconditionError("mask ratio must lie in (0, 1)");
  const long m = std::lround(static_cast<double>(n_patches) * ratio);
  if (m <= 0 || m >= n_patches)
    throw PreconditionError("mask ratio " + std::to_string(ratio) + " gives a degenerate budget of " +
                            std::to_string(m) + " / " + std::to_string(n_patches));
  return static_cast<int>(m);
}

std::vector<int> largest_remainder(int budget, std::span<const int> sizes) {
  const long long total = std::accumulate(sizes.begin(), sizes.end(), 0LL);
  if (budget < 0 || budget > total) throw PreconditionError("apportionment budget exceeds group sizes");
  std::vector<int> seats(sizes.size(), 0);
  if (total == 0) return seats;
  std::vector<long long> rem(sizes.size(), 0);
  long long assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const long long num = static_cast<long long>(budget) * sizes[i];
    seats[i] = static_cast<int>(num / total);
    rem[i] = num % total;
    assigned += seats[i];
  }
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < budget; ++k, ++assigned) ++seats[order[k]];
  return seats;
}

namespace {

MaskPair empty_pair(const PatchRegionIndex& index, double ratio) {
  MaskPair p;
  const int n = index.n_patches();
  p.target_masked = mask_budget(n, ratio);
  p.mask.assign(static_cast<std::size_t>(n), 0);
  p.region_mask.assign(static_cast<std::size_t>(n), 0);
  return p;
}

void mask_all(std::vector<std::uint8_t>& m, std::span<const int> patches) {
  for (int i : patches) m[static_cast<std::size_t>(i)] = 1;
}

// Picks the covered region uniformly among nonempty selectable regions.
Region select_region(const PatchRegionIndex& index, Rng& rng) {
  std::vector<Region> candidates;
  for (int r = 0; r < kNumRegions; ++r) {
    auto reg = static_cast<Region>(r);
    if (RegionTaxonomy::selectable(reg) && !index.of(reg).empty()) candidates.push_back(reg);
  }
  if (candidates.empty()) throw MaskingError("no nonempty selectable facial region to cover");
  return candidates[rng.uniform_index(candidates.size())];
}

// Shared first half of the covering strategies. Returns true when the
// selected region alone exhausts the budget (extreme case), in which case the
// pair is already final.
bool cover_region(const PatchRegionIndex& index, MaskPair& p, Rng& rng) {
  const Region fr = select_region(index, rng);
  p.selected_region = fr;
  const auto& members = index.of(fr);
  if (static_cast<int>(members.size()) > p.target_masked) {
    auto kept = rng.sample_without_replacement(members, static_cast<std::size_t>(p.target_masked));
    mask_all(p.region_mask, kept);
    p.mask = p.region_mask;
    p.extreme_case = true;
    return true;
  }
  mask_all(p.region_mask, members);
  p.mask = p.region_mask;
  return false;
}

void proportional_fill(const PatchRegionIndex& index, MaskPair& p, int budget, std::optional<Region> skip, Rng& rng) {
  std::vector<int> sizes(kNumRegions, 0);
  for (int r = 0; r < kNumRegions; ++r)
    if (!skip || static_cast<Region>(r) != *skip) sizes[static_cast<std::size_t>(r)] = static_cast<int>(index.members[static_cast<std::size_t>(r)].size());
  auto seats = largest_remainder(budget, sizes);
  for (int r = 0; r < kNumRegions; ++r) {
    const int k = seats[static_cast<std::size_t>(r)];
    if (k == 0) continue;
    auto chosen = rng.sample_without_replacement(index.members[static_cast<std::size_t>(r)], static_cast<std::size_t>(k));
    mask_all(p.mask, chosen);
  }
}

}  // namespace

MaskPair sample_random(const PatchRegionIndex& index, double ratio, Rng& rng) {
  MaskPair p = empty_pair(index, ratio);
  std::vector<int> all(static_cast<std::size_t>(index.n_patches()));
  std::iota(all.begin(), all.end(), 0);
  mask_all(p.mask, rng.sample_without_replacement(all, static_cast<std::size_t>(p.target_masked)));
  return p;
}

MaskPair sample_fasking_i(const PatchRegionIndex& index, double ratio, Rng& rng) {
  MaskPair p = empty_pair(index, ratio);
  std::vector<int> priority, rest;
  for (int i = 0; i < index.n_patches(); ++i) {
    Region r = index.region_of[static_cast<std::size_t>(i)];
    (r == Region::skin || r == Region::background ? rest : priority).push_back(i);
  }
  const auto m = static_cast<std::size_t>(p.target_masked);
  if (priority.size() >= m) {
    mask_all(p.mask, rng.sample_without_replacement(priority, m));
  } else {
    mask_all(p.mask, priority);
    mask_all(p.mask, rng.sample_without_replacement(rest, m - priority.size()));
  }
  return p;
}

MaskPair sample_frp(const PatchRegionIndex& index, double ratio, Rng& rng) {
  MaskPair p = empty_pair(index, ratio);
  proportional_fill(index, p, p.target_masked, std::nullopt, rng);
  return p;
}

MaskPair sample_crfr_r(const PatchRegionIndex& index, double ratio, Rng& rng) {
  MaskPair p = empty_pair(index, ratio);
  if (cover_region(index, p, rng)) return p;
  const int residual = p.target_masked - p.region_masked_count();
  std::vector<int> remaining;
  for (int i = 0; i < index.n_patches(); ++i)
    if (!p.mask[static_cast<std::size_t>(i)]) remaining.push_back(i);
  mask_all(p.mask, rng.sample_without_replacement(remaining, static_cast<std::size_t>(residual)));
  return p;
}

MaskPair sample_crfr_p(const PatchRegionIndex& index, double ratio, Rng& rng) {
  MaskPair p = empty_pair(index, ratio);
  if (cover_region(index, p, rng)) return p;
  const int residual = p.target_masked - p.region_masked_count();
  proportional_fill(index, p, residual, p.selected_region, rng);
  return p;
}

MaskPair sample_mask(MaskStrategy strategy, const PatchRegionIndex& index, double ratio, Rng& rng) {
  switch (strategy) {
    case MaskStrategy::random: return sample_random(index, ratio, rng);
    case MaskStrategy::fasking_i: return sample_fasking_i(index, ratio, rng);
    case MaskStrategy::frp: return sample_frp(index, ratio, rng);
    case MaskStrategy::crfr_r: return sample_crfr_r(index, ratio, rng);
    case MaskStrategy::crfr_p: return sample_crfr_p(index, ratio, rng);
  }
  throw ConfigError("unknown mask strategy");
}

MaskAudit audit_mask(MaskStrategy strategy, const PatchRegionIndex& index, double ratio, const MaskPair& pair) {
  MaskAudit a;
  a.budget = mask_budget(index.n_patches(), ratio);
  a.masked = pair.masked_count();
  a.budget_deviation = std::abs(a.masked - a.budget);
  for (std::size_t i = 0; i < pair.mask.size(); ++i)
    if (pair.region_mask[i] && !pair.mask[i]) a.region_subset = false;
  const bool covering = strategy == MaskStrategy::crfr_p || strategy == MaskStrategy::crfr_r;
  if (covering && !pair.selected_region) a.region_fully_covered = false;
  if (covering && pair.selected_region) {
    const auto& fr = index.of(*pair.selected_region);
    if (pair.extreme_case) {
      a.region_fully_covered = pair.region_masked_count() == a.budget && pair.mask == pair.region_mask;
    } else {
      for (int i : fr)
        if (!pair.region_mask[static_cast<std::size_t>(i)]) a.region_fully_covered = false;
    }
  }
  const bool proportional = strategy == MaskStrategy::frp || (strategy == MaskStrategy::crfr_p && !pair.extreme_case);
  if (proportional) {
    std::optional<Region> skip = strategy == MaskStrategy::crfr_p ? pair.selected_region : std::nullopt;
    long long pool = 0;
    int residual = a.budget;
    if (skip) residual -= static_cast<int>(index.of(*skip).size());
    for (int r = 0; r < kNumRegions; ++r)
      if (!skip || static_cast<Region>(r) != *skip) pool += static_cast<long long>(index.members[static_cast<std::size_t>(r)].size());
    for (int r = 0; r < kNumRegions; ++r) {
      if ((skip && static_cast<Region>(r) == *skip) || pool == 0) continue;
      const auto& members = index.members[static_cast<std::size_t>(r)];
      int count = 0;
      for (int i : members) count += pair.mask[static_cast<std::size_t>(i)];
      const double share = static_cast<double>(residual) * static_cast<double>(members.size()) / static_cast<double>(pool);
      const double dev = std::abs(count - share);
      a.max_share_deviation = std::max(a.max_share_deviation, dev);
      if (dev >= 1.0) ++a.proportionality_violations;
    }
  }
  return a;
}

std::vector<std::uint8_t> pack_mask(const MaskPair& pair) {
  const auto n = static_cast<std::uint32_t>(pair.mask.size());
  std::vector<std::uint8_t> out;
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((n >> (8 * i)) & 0xff));
  auto pack = [&](const std::vector<std::uint8_t>& bits) {
    std::vector<std::uint8_t> bytes((n + 7) / 8, 0);
    for (std::uint32_t i = 0; i < n; ++i)
      if (bits[i]) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    out.insert(out.end(), bytes.begin(), bytes.end());
  };
  pack(pair.mask);
  pack(pair.region_mask);
  out.push_back(pair.selected_region ? static_cast<std::uint8_t>(*pair.selected_region) : 255);
  out.push_back(pair.extreme_case ? 1 : 0);
  const auto t = static_cast<std::uint32_t>(pair.target_masked);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((t >> (8 * i)) & 0xff));
  return out;
}

MaskPair unpack_mask(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw CodecError(bytes.size(), "truncated mask header");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  const std::size_t nb = (n + 7) / 8;
  const std::size_t need = 4 + 2 * nb + 6;
  if (bytes.size() < need) throw CodecError(bytes.size(), "truncated mask payload");
  MaskPair p;
  p.mask.resize(n);
  p.region_mask.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    p.mask[i] = (bytes[4 + i / 8] >> (i % 8)) & 1;
    p.region_mask[i] = (bytes[4 + nb + i / 8] >> (i % 8)) & 1;
  }
  const std::uint8_t sel = bytes[4 + 2 * nb];
  if (sel != 255) {
    if (sel >= kNumRegions) throw CodecError(4 + 2 * nb, "invalid region code");
    p.selected_region = static_cast<Region>(sel);
  }
  p.extreme_case = bytes[4 + 2 * nb + 1] != 0;
  std::uint32_t t = 0;
  for (int i = 0; i < 4; ++i) t |= static_cast<std::uint32_t>(bytes[4 + 2 * nb + 2 + i]) << (8 * i);
  p.target_masked = static_cast<int>(t);
  return p;
}

}  // namespace fsvfm
