#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fsvfm/backbone.hpp"

namespace fsvfm {

// [layer][head] statistics; distances in pixels, KL in nats.
struct AttentionSummary {
  std::vector<std::vector<double>> mean_distance;
  std::vector<std::vector<double>> mean_kl;

  int n_layers() const { return static_cast<int>(std::max(mean_distance.size(), mean_kl.size())); }
  double layer_mean_distance(int layer) const;
  double layer_mean_kl(int layer) const;
  // layer<TAB>head<TAB>mean_distance<TAB>mean_kl, one line per head.
  std::string to_tsv() const;
};

// Patch-to-patch block of a T x T attention matrix, rows renormalized.
Matrix patch_attention(const Matrix& probs, bool has_cls);

AttentionSummary mean_attention_distance(const AttentionTrace& trace, int grid, int patch_size);
AttentionSummary head_kl_diversity(const AttentionTrace& trace, double clamp = 1e-12);
AttentionSummary summarize_attention(const AttentionTrace& trace, int grid, int patch_size);

// KL(p || q) over one row, logs of entries clamped at `clamp`.
double row_kl(const Eigen::Ref<const Matrix>& p, const Eigen::Ref<const Matrix>& q, double clamp);

// Full-view forward of each patch matrix, capturing every block.
AttentionTrace capture_attention(const VisionEncoder& encoder, const std::vector<Matrix>& patch_sets,
                                 const BlockHook* hook = nullptr);

struct Heatmap {
  Matrix mass;    // grid x grid, sums to 1
  Image overlay;  // input blended with the upsampled map
};

// Received attention per key patch for sample `sample` of the trace at
// `layer` (negative counts from the end): mean over heads and query patches.
Matrix attention_mass(const AttentionTrace& trace, int layer, int sample, int grid);
// Bilinear upsampling of a grid map sampled at patch centers.
Matrix upsample_bilinear(const Matrix& grid_map, int height, int width);
Heatmap render_heatmap(const Matrix& mass, const Image& image, double alpha = 0.5);

// Forward one image, export its last-block (by default) map as a PPM.
Heatmap export_attention_map(const VisionEncoder& encoder, const ImageNormalization& norm, const Image& image,
                             const std::filesystem::path& out_ppm, int layer = -1, const BlockHook* hook = nullptr);

}  // namespace fsvfm
