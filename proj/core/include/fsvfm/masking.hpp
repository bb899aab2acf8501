#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsvfm/region_atlas.hpp"
#include "fsvfm/rng.hpp"

namespace fsvfm {

enum class MaskStrategy { random, fasking_i, frp, crfr_r, crfr_p };

const char* strategy_name(MaskStrategy s);
MaskStrategy parse_strategy(const std::string& name);

// Binary masks over N patches, 1 = masked. region_mask marks the patches of
// the fully covered region and is always a subset of mask.
struct MaskPair {
  std::vector<std::uint8_t> mask;
  std::vector<std::uint8_t> region_mask;
  std::optional<Region> selected_region;
  int target_masked = 0;
  bool extreme_case = false;

  int masked_count() const;
  int region_masked_count() const;
  int n_patches() const { return static_cast<int>(mask.size()); }
  bool operator==(const MaskPair&) const = default;
};

// m = round(N * r); rejects r outside (0, 1) and budgets of 0 or N.
int mask_budget(int n_patches, double ratio);

// Largest-remainder apportionment of `budget` seats over groups with the
// given sizes, proportional to size. Exact integer arithmetic; ties on the
// remainder go to the lower group index. Requires budget <= sum(sizes).
std::vector<int> largest_remainder(int budget, std::span<const int> sizes);

MaskPair sample_random(const PatchRegionIndex& index, double ratio, Rng& rng);
MaskPair sample_fasking_i(const PatchRegionIndex& index, double ratio, Rng& rng);
MaskPair sample_frp(const PatchRegionIndex& index, double ratio, Rng& rng);
MaskPair sample_crfr_r(const PatchRegionIndex& index, double ratio, Rng& rng);
MaskPair sample_crfr_p(const PatchRegionIndex& index, double ratio, Rng& rng);

MaskPair sample_mask(MaskStrategy strategy, const PatchRegionIndex& index, double ratio, Rng& rng);

// Structural checks of one draw.
struct MaskAudit {
  int budget = 0;
  int masked = 0;
  int budget_deviation = 0;         // |masked - budget|
  bool region_subset = true;        // region_mask within mask
  bool region_fully_covered = true;  // non-extreme covering strategies
  int proportionality_violations = 0;  // regions off their exact share by >= 1 patch
  double max_share_deviation = 0.0;

  bool ok() const {
    return budget_deviation == 0 && region_subset && region_fully_covered && proportionality_violations == 0;
  }
};
MaskAudit audit_mask(MaskStrategy strategy, const PatchRegionIndex& index, double ratio, const MaskPair& pair);

// u32le N | ceil(N/8) bytes of mask (LSB first) | same for region_mask |
// u8 selected region (255 = none) | u8 extreme flag | u32le target_masked.
std::vector<std::uint8_t> pack_mask(const MaskPair& pair);
MaskPair unpack_mask(std::span<const std::uint8_t> bytes);

}  // namespace fsvfm
