#include "fsvfm/region_atlas.hpp"

#include "fsvfm/errors.hpp"

namespace fsvfm {

const char* region_name(Region r) {
  switch (r) {
    case Region::eyebrows: return "eyebrows";
    case Region::eyes: return "eyes";
    case Region::mouth: return "mouth";
    case Region::face_boundary: return "face_boundary";
    case Region::nose: return "nose";
    case Region::hair: return "hair";
    case Region::skin: return "skin";
    case Region::background: return "background";
  }
  return "unknown";
}

Region parse_region(const std::string& name) {
  for (int i = 0; i < kNumRegions; ++i)
    if (name == region_name(static_cast<Region>(i))) return static_cast<Region>(i);
  throw TaxonomyError("unknown region '" + name + "'");
}

const RegionTaxonomy& RegionTaxonomy::standard() {
  static const RegionTaxonomy t = [] {
    RegionTaxonomy x{};
    x.regions = {Region::eyebrows, Region::eyes, Region::mouth, Region::face_boundary,
                 Region::nose,     Region::hair, Region::skin,  Region::background};
    x.merge_rules = {
        Region::background,  // background
        Region::skin,        // skin
        Region::hair,        // hair
        Region::eyebrows,    // left_eyebrow
        Region::eyebrows,    // right_eyebrow
        Region::eyes,        // left_eye
        Region::eyes,        // right_eye
        Region::nose,        // nose
        Region::mouth,       // upper_lip
        Region::mouth,       // inner_mouth
        Region::mouth,       // lower_lip
    };
    x.priority = {Region::eyebrows, Region::eyes, Region::mouth, Region::nose,
                  Region::hair,     Region::skin, Region::background};
    return x;
  }();
  return t;
}

Region RegionTaxonomy::merge(std::uint8_t raw_code) const {
  if (raw_code >= kNumRawLabels) throw TaxonomyError("unknown raw label code " + std::to_string(raw_code));
  return merge_rules[raw_code];
}

void PatchRegionIndex::rebuild_members() {
  for (auto& m : members) m.clear();
  for (int i = 0; i < static_cast<int>(region_of.size()); ++i)
    members[static_cast<std::size_t>(region_of[static_cast<std::size_t>(i)])].push_back(i);
}

PatchRegionIndex PatchRegionIndex::from_regions(int grid_h, int grid_w, int patch_size, std::vector<Region> regions) {
  if (static_cast<int>(regions.size()) != grid_h * grid_w) throw ShapeError("region vector does not match grid");
  PatchRegionIndex idx;
  idx.grid_h = grid_h;
  idx.grid_w = grid_w;
  idx.patch_size = patch_size;
  idx.region_of = std::move(regions);
  idx.rebuild_members();
  return idx;
}

PatchRegionIndex patchify_parsing(const ParsingMap& map, int patch_size, const RegionTaxonomy& taxonomy) {
  if (patch_size <= 0 || map.height % static_cast<std::uint32_t>(patch_size) != 0 ||
      map.width % static_cast<std::uint32_t>(patch_size) != 0)
    throw ShapeError("parsing map " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                     " is not divisible by patch size " + std::to_string(patch_size));
  const int gh = static_cast<int>(map.height) / patch_size;
  const int gw = static_cast<int>(map.width) / patch_size;
  std::vector<Region> regions(static_cast<std::size_t>(gh) * gw);
  const auto skin = static_cast<std::uint8_t>(RawLabel::skin);
  const auto bg = static_cast<std::uint8_t>(RawLabel::background);
  const auto hair = static_cast<std::uint8_t>(RawLabel::hair);

  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      std::array<int, kNumRawLabels> raw{};
      for (int y = py * patch_size; y < (py + 1) * patch_size; ++y)
        for (int x = px * patch_size; x < (px + 1) * patch_size; ++x) {
          std::uint8_t code = map.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x));
          if (code >= kNumRawLabels) throw TaxonomyError("unknown raw label code " + std::to_string(code));
          ++raw[code];
        }
      Region chosen;
      if (raw[skin] > 0 && (raw[bg] > 0 || raw[hair] > 0)) {
        chosen = Region::face_boundary;
      } else {
        std::array<int, kNumRegions> merged{};
        for (int code = 0; code < kNumRawLabels; ++code)
          merged[static_cast<std::size_t>(taxonomy.merge(static_cast<std::uint8_t>(code)))] += raw[code];
        chosen = taxonomy.priority[0];
        int best = -1;
        for (Region r : taxonomy.priority) {
          int c = merged[static_cast<std::size_t>(r)];
          if (c > best) {
            best = c;
            chosen = r;
          }
        }
      }
      regions[static_cast<std::size_t>(py * gw + px)] = chosen;
    }
  }
  return PatchRegionIndex::from_regions(gh, gw, patch_size, std::move(regions));
}

std::array<int, kNumRegions> region_sizes(const PatchRegionIndex& index) {
  std::array<int, kNumRegions> out{};
  for (int i = 0; i < kNumRegions; ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(index.members[static_cast<std::size_t>(i)].size());
  return out;
}

}  // namespace fsvfm
