#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fsvfm/synth_data.hpp"

namespace fsvfm {

// Merged facial-region taxonomy, in canonical order.
enum class Region : std::uint8_t {
  eyebrows = 0,
  eyes = 1,
  mouth = 2,
  face_boundary = 3,
  nose = 4,
  hair = 5,
  skin = 6,
  background = 7,
};
inline constexpr int kNumRegions = 8;

const char* region_name(Region r);
Region parse_region(const std::string& name);

struct RegionTaxonomy {
  std::array<Region, kNumRegions> regions;
  // Raw label -> merged region (never face_boundary; that one is derived).
  std::array<Region, kNumRawLabels> merge_rules;
  // Majority-vote tie-break, highest priority first.
  std::array<Region, kNumRegions - 1> priority;

  static const RegionTaxonomy& standard();
  // Regions a covering strategy may select: everything but skin/background.
  static bool selectable(Region r) { return r != Region::skin && r != Region::background; }
  Region merge(std::uint8_t raw_code) const;
};

struct PatchRegionIndex {
  int grid_h = 0;
  int grid_w = 0;
  int patch_size = 0;
  std::vector<Region> region_of;                          // length N
  std::array<std::vector<int>, kNumRegions> members;      // sorted patch indices

  int n_patches() const { return grid_h * grid_w; }
  const std::vector<int>& of(Region r) const { return members[static_cast<std::size_t>(r)]; }
  // Rebuilds members from region_of.
  void rebuild_members();
  static PatchRegionIndex from_regions(int grid_h, int grid_w, int patch_size, std::vector<Region> regions);
};

PatchRegionIndex patchify_parsing(const ParsingMap& map, int patch_size,
                                  const RegionTaxonomy& taxonomy = RegionTaxonomy::standard());

std::array<int, kNumRegions> region_sizes(const PatchRegionIndex& index);

}  // namespace fsvfm
