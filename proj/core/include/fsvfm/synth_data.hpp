#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsvfm {

// Raw per-pixel parsing codes. External parsers are mapped onto these at
// ingestion time.
enum class RawLabel : std::uint8_t {
  background = 0,
  skin = 1,
  hair = 2,
  left_eyebrow = 3,
  right_eyebrow = 4,
  left_eye = 5,
  right_eye = 6,
  nose = 7,
  upper_lip = 8,
  inner_mouth = 9,
  lower_lip = 10,
};
inline constexpr int kNumRawLabels = 11;

const char* raw_label_name(RawLabel label);

struct ParsingMap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::uint8_t> labels;  // row-major

  ParsingMap() = default;
  ParsingMap(std::uint32_t h, std::uint32_t w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t at(std::uint32_t y, std::uint32_t x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(std::uint32_t y, std::uint32_t x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::array<std::size_t, kNumRawLabels> histogram() const;
  bool operator==(const ParsingMap&) const = default;
};

// H x W x 3, channel-last, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

enum class Label { real = 0, fake = 1 };
enum class CorruptionKind { region_swap, region_color_shift, region_blur };

const char* corruption_name(CorruptionKind kind);
CorruptionKind parse_corruption(const std::string& name);
const char* label_name(Label label);

struct CorruptionRecord {
  CorruptionKind kind;
  std::vector<std::uint8_t> region_codes;  // raw labels making up the corrupted region
  int source_index = -1;                   // index of the source real in the output list
  int donor_index = -1;                    // region_swap only
};

struct FaceSample {
  std::string sample_id;
  Image image;
  ParsingMap parsing;
  std::optional<Label> label;
  std::optional<std::string> group_id;
  std::optional<CorruptionRecord> corruption;
};

struct SynthConfig {
  int image_size = 64;
  int patch_size = 8;
  int n_real = 0;
  int n_fake = 0;
  std::uint64_t seed = 0;
  std::vector<CorruptionKind> corruption_kinds{CorruptionKind::region_color_shift};
  // Consecutive samples sharing an identity form one video group.
  int frames_per_video = 1;
};

// Reals first (indices 0..n_real-1), then fakes. Fake i is derived from real
// (i mod n_real).
std::vector<FaceSample> generate_synthetic(const SynthConfig& config);

// FSPM codec: "FSPM" | u8 version=1 | u32le height | u32le width | labels.
inline constexpr std::size_t kFspmHeaderSize = 13;
std::vector<std::uint8_t> encode_parsing(const ParsingMap& map);
ParsingMap decode_parsing(std::span<const std::uint8_t> bytes);

// Binary PPM (P6, 8-bit). Pixel values are quantized to k/255 on write.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_fspm(const std::filesystem::path& path, const ParsingMap& map);
ParsingMap read_fspm(const std::filesystem::path& path);

// One line per sample: image_path<TAB>parsing_path[<TAB>label[<TAB>group_id]].
// Relative paths resolve against root.
std::vector<FaceSample> load_dataset(const std::filesystem::path& root, const std::filesystem::path& manifest);
// Writes images/, parsing/ and the manifest under root.
void write_dataset(const std::filesystem::path& root, const std::vector<FaceSample>& samples,
                   const std::string& manifest_name = "manifest.tsv");

}  // namespace fsvfm
