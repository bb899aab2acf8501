#include <gtest/gtest.h>

#include "fsvfm/errors.hpp"
#include "fsvfm/region_atlas.hpp"
#include "fsvfm/synth_data.hpp"

using namespace fsvfm;

namespace {
constexpr auto kSkin = static_cast<std::uint8_t>(RawLabel::skin);
constexpr auto kBg = static_cast<std::uint8_t>(RawLabel::background);

// Majority vote written from scratch: face_boundary when a patch mixes skin
// with background or hair, otherwise the merged region with most pixels and
// ties broken in taxonomy priority order.
Region oracle_region(const ParsingMap& m, int py, int px, int p) {
  const auto& t = RegionTaxonomy::standard();
  std::array<int, kNumRawLabels> raw{};
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x) ++raw[m.at(static_cast<std::uint32_t>(py * p + y), static_cast<std::uint32_t>(px * p + x))];
  if (raw[kSkin] && (raw[kBg] || raw[static_cast<int>(RawLabel::hair)])) return Region::face_boundary;
  std::array<int, kNumRegions> merged{};
  for (int c = 0; c < kNumRawLabels; ++c) merged[static_cast<std::size_t>(t.merge_rules[static_cast<std::size_t>(c)])] += raw[c];
  Region best = t.priority[0];
  for (Region r : t.priority)
    if (merged[static_cast<std::size_t>(r)] > merged[static_cast<std::size_t>(best)]) best = r;
  return best;
}
}  // namespace

TEST(RegionAtlas, TaxonomyOrderAndSelectable) {
  const auto& t = RegionTaxonomy::standard();
  const std::array<const char*, kNumRegions> names = {"eyebrows", "eyes", "mouth", "face_boundary",
                                                      "nose",     "hair", "skin",  "background"};
  for (int i = 0; i < kNumRegions; ++i) {
    EXPECT_STREQ(region_name(t.regions[static_cast<std::size_t>(i)]), names[static_cast<std::size_t>(i)]);
    EXPECT_EQ(parse_region(names[static_cast<std::size_t>(i)]), static_cast<Region>(i));
  }
  EXPECT_FALSE(RegionTaxonomy::selectable(Region::skin));
  EXPECT_FALSE(RegionTaxonomy::selectable(Region::background));
  EXPECT_TRUE(RegionTaxonomy::selectable(Region::face_boundary));
  EXPECT_THROW(parse_region("ear"), TaxonomyError);
}

TEST(RegionAtlas, UniformSkinMap) {
  const auto idx = patchify_parsing(ParsingMap(32, 32, kSkin), 8);
  ASSERT_EQ(idx.n_patches(), 16);
  EXPECT_EQ(idx.of(Region::skin).size(), 16u);
  for (int r = 0; r < kNumRegions; ++r)
    if (static_cast<Region>(r) != Region::skin) EXPECT_TRUE(idx.members[static_cast<std::size_t>(r)].empty());
}

TEST(RegionAtlas, HalfSkinHalfBackground) {
  ParsingMap m(16, 16, kSkin);
  for (std::uint32_t y = 0; y < 16; ++y)
    for (std::uint32_t x = 8; x < 16; ++x) m.at(y, x) = kBg;
  const auto idx = patchify_parsing(m, 8);
  EXPECT_EQ(idx.region_of, (std::vector<Region>{Region::skin, Region::background, Region::skin, Region::background}));
  // shift the edge into the left patch column: those patches mix both codes
  for (std::uint32_t y = 0; y < 16; ++y)
    for (std::uint32_t x = 4; x < 8; ++x) m.at(y, x) = kBg;
  const auto idx2 = patchify_parsing(m, 8);
  EXPECT_EQ(idx2.region_of,
            (std::vector<Region>{Region::face_boundary, Region::background, Region::face_boundary, Region::background}));
}

TEST(RegionAtlas, SyntheticFacesMatchMajorityOracle) {
  SynthConfig c;
  c.n_real = 12;
  c.seed = 3;
  for (const auto& s : generate_synthetic(c)) {
    const auto idx = patchify_parsing(s.parsing, c.patch_size);
    for (int py = 0; py < idx.grid_h; ++py)
      for (int px = 0; px < idx.grid_w; ++px)
        ASSERT_EQ(idx.region_of[static_cast<std::size_t>(py * idx.grid_w + px)], oracle_region(s.parsing, py, px, c.patch_size));
    // members partition the grid
    int total = 0;
    for (int n : region_sizes(idx)) total += n;
    EXPECT_EQ(total, idx.n_patches());
  }
}

TEST(RegionAtlas, ErrorsAndDeterminism) {
  EXPECT_THROW(patchify_parsing(ParsingMap(10, 16), 8), ShapeError);
  ParsingMap m(8, 8, 1);
  m.at(3, 3) = 42;
  EXPECT_THROW(patchify_parsing(m, 8), TaxonomyError);
  SynthConfig c;
  c.n_real = 1;
  const auto s = generate_synthetic(c);
  EXPECT_EQ(patchify_parsing(s[0].parsing, 8).region_of, patchify_parsing(s[0].parsing, 8).region_of);
}

TEST(RegionAtlas, TieBreakFollowsPriority) {
  // 2x2 patch, half eyes half nose -> eyes outranks nose
  ParsingMap m(2, 2);
  m.labels = {static_cast<std::uint8_t>(RawLabel::left_eye), static_cast<std::uint8_t>(RawLabel::nose),
              static_cast<std::uint8_t>(RawLabel::nose), static_cast<std::uint8_t>(RawLabel::right_eye)};
  EXPECT_EQ(patchify_parsing(m, 2).region_of[0], Region::eyes);
}
