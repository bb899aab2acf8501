#include <gtest/gtest.h>

#include <fstream>

#include "fsvfm/errors.hpp"
#include "fsvfm/region_atlas.hpp"
#include "fsvfm/synth_data.hpp"
#include "test_support.hpp"

using namespace fsvfm;
using fsvfm::testing::TempDir;

TEST(Rng, DeriveIsStableAndSeparatesStreams) {
  Rng a = Rng::derive(5, "mask");
  Rng b = Rng::derive(5, "mask");
  Rng c = Rng::derive(5, "data");
  Rng d = Rng::derive(5, "data", {1});
  EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng::derive(5, "mask").next_u64(), c.next_u64());
  EXPECT_NE(Rng::derive(5, "data").next_u64(), d.next_u64());
}

TEST(Rng, SerializeRoundTripContinuesTheStream) {
  Rng a(42);
  for (int i = 0; i < 7; ++i) a.normal();
  Rng b;
  b.deserialize(a.serialize());
  for (int i = 0; i < 20; ++i) ASSERT_EQ(a.normal(), b.normal());
}

TEST(Rng, UniformIndexStaysInRange) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) ASSERT_LT(r.uniform_index(7), 7u);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
  Rng r(9);
  std::vector<int> pool(50);
  for (int i = 0; i < 50; ++i) pool[static_cast<std::size_t>(i)] = i * 3;
  auto s = r.sample_without_replacement(pool, 20);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_EQ(s.size(), 20u);
}

// ---------------------------------------------------------------------------

TEST(SynthData, SameConfigIsBitwiseIdentical) {
  SynthConfig c;
  c.seed = 1;
  c.n_real = 4;
  const auto a = generate_synthetic(c);
  const auto b = generate_synthetic(c);
  ASSERT_EQ(a.size(), 4u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].parsing, b[i].parsing);
    EXPECT_EQ(a[i].sample_id, b[i].sample_id);
  }
}

TEST(SynthData, EmptyConfigGivesEmptyList) {
  SynthConfig c;
  EXPECT_TRUE(generate_synthetic(c).empty());
}

TEST(SynthData, InvalidConfigsAreRejected) {
  SynthConfig c;
  c.image_size = 0;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = SynthConfig{};
  c.n_fake = 3;  // no source reals
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = SynthConfig{};
  c.n_real = 2;
  c.n_fake = 2;
  c.corruption_kinds.clear();
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  EXPECT_THROW(parse_corruption("nope"), ConfigError);
}

// Every color-shift fake differs from its source inside the corrupted region
// and nowhere else.
TEST(SynthData, ColorShiftTouchesOnlyTheCorruptedRegion) {
  SynthConfig c;
  c.seed = 7;
  c.n_real = 100;
  c.n_fake = 100;
  const auto samples = generate_synthetic(c);
  ASSERT_EQ(samples.size(), 200u);
  for (int i = 100; i < 200; ++i) {
    const auto& fake = samples[static_cast<std::size_t>(i)];
    ASSERT_TRUE(fake.corruption.has_value());
    ASSERT_EQ(fake.label, Label::fake);
    const auto& rec = *fake.corruption;
    const auto& src = samples[static_cast<std::size_t>(rec.source_index)];
    ASSERT_EQ(src.label, Label::real);
    int inside_diff = 0, outside_diff = 0;
    for (int y = 0; y < c.image_size; ++y)
      for (int x = 0; x < c.image_size; ++x) {
        const auto code = src.parsing.at(static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(x));
        const bool inside = std::find(rec.region_codes.begin(), rec.region_codes.end(), code) != rec.region_codes.end();
        bool diff = false;
        for (int ch = 0; ch < 3; ++ch) diff |= fake.image.at(y, x, ch) != src.image.at(y, x, ch);
        (inside ? inside_diff : outside_diff) += diff ? 1 : 0;
      }
    EXPECT_GE(inside_diff, 1) << fake.sample_id;
    EXPECT_EQ(outside_diff, 0) << fake.sample_id;
  }
}

TEST(SynthData, ImagesAreQuantizedAndInRange) {
  SynthConfig c;
  c.n_real = 3;
  c.n_fake = 3;
  c.corruption_kinds = {CorruptionKind::region_swap, CorruptionKind::region_blur, CorruptionKind::region_color_shift};
  for (const auto& s : generate_synthetic(c))
    for (double v : s.image.pixels) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      ASSERT_DOUBLE_EQ(std::round(v * 255.0) / 255.0, v);
    }
}

TEST(SynthData, FramesShareVideoGroups) {
  SynthConfig c;
  c.n_real = 6;
  c.n_fake = 6;
  c.frames_per_video = 3;
  const auto s = generate_synthetic(c);
  ASSERT_TRUE(s[0].group_id && s[2].group_id && s[3].group_id);
  EXPECT_EQ(*s[0].group_id, *s[2].group_id);
  EXPECT_NE(*s[0].group_id, *s[3].group_id);
  // fakes never share a group with a real
  for (int i = 6; i < 12; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NE(*s[static_cast<std::size_t>(i)].group_id, *s[static_cast<std::size_t>(j)].group_id);
}

// ---------------------------------------------------------------------------

TEST(Fspm, HeaderExampleIsByteExact) {
  ParsingMap m(2, 2);
  m.labels = {0, 1, 2, 3};
  const auto bytes = encode_parsing(m);
  const std::vector<std::uint8_t> expect = {'F', 'S', 'P', 'M', 1, 2, 0, 0, 0, 2, 0, 0, 0, 0, 1, 2, 3};
  EXPECT_EQ(bytes, expect);
  EXPECT_EQ(decode_parsing(bytes), m);
}

TEST(Fspm, TruncatedAfterHeaderFailsAtOffset13) {
  ParsingMap m(2, 2);
  auto bytes = encode_parsing(m);
  bytes.resize(kFspmHeaderSize);
  try {
    decode_parsing(bytes);
    FAIL() << "expected a codec error";
  } catch (const CodecError& e) {
    EXPECT_EQ(e.offset(), 13u);
  }
}

TEST(Fspm, BadMagicAndVersionAreRejected) {
  auto bytes = encode_parsing(ParsingMap(1, 1));
  auto bad = bytes;
  bad[1] = 'X';
  try {
    decode_parsing(bad);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
  bad = bytes;
  bad[4] = 2;
  try {
    decode_parsing(bad);
    FAIL();
  } catch (const CodecError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_parsing(bad), CodecError);
}

TEST(FspmProperty, RoundTripOverRandomMaps) {
  Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    const ParsingMap m = fsvfm::testing::random_parsing_map(rng);
    const auto bytes = encode_parsing(m);
    ASSERT_EQ(bytes.size(), kFspmHeaderSize + m.labels.size());
    ASSERT_EQ(decode_parsing(bytes), m);
  }
}

TEST(FspmProperty, EveryTruncationIsACodecError) {
  Rng rng(11);
  const ParsingMap m = fsvfm::testing::random_parsing_map(rng, 6);
  const auto bytes = encode_parsing(m);
  for (std::size_t k = 0; k < bytes.size(); ++k) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(k));
    EXPECT_THROW(decode_parsing(cut), CodecError) << k;
  }
}

// ---------------------------------------------------------------------------

TEST(Dataset, WriteThenLoadPreservesSamples) {
  TempDir dir("dataset");
  SynthConfig c;
  c.n_real = 3;
  c.n_fake = 2;
  c.seed = 4;
  const auto samples = generate_synthetic(c);
  write_dataset(dir.path(), samples);
  const auto loaded = load_dataset(dir.path(), "manifest.tsv");
  ASSERT_EQ(loaded.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(loaded[i].sample_id, samples[i].sample_id);
    EXPECT_EQ(loaded[i].image, samples[i].image);  // already quantized, so PPM is lossless
    EXPECT_EQ(loaded[i].parsing, samples[i].parsing);
    EXPECT_EQ(loaded[i].label, samples[i].label);
    EXPECT_EQ(loaded[i].group_id, samples[i].group_id);
  }
}

TEST(Dataset, MissingFilesNameThePath) {
  TempDir dir("dataset_missing");
  EXPECT_THROW(load_dataset(dir.path(), "manifest.tsv"), IngestionError);
  {
    std::ofstream(dir / "manifest.tsv") << "images/a.ppm\tparsing/a.fspm\treal\n";
  }
  try {
    load_dataset(dir.path(), "manifest.tsv");
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(e.path().find("a.ppm"), std::string::npos);
  }
}

TEST(Dataset, DimensionMismatchIsAnIngestionError) {
  TempDir dir("dataset_dims");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "parsing");
  write_ppm(dir / "images/a.ppm", Image(8, 8, 0.5));
  write_fspm(dir / "parsing/a.fspm", ParsingMap(8, 16, 1));
  { std::ofstream(dir / "manifest.tsv") << "images/a.ppm\tparsing/a.fspm\n"; }
  EXPECT_THROW(load_dataset(dir.path(), "manifest.tsv"), IngestionError);
}
