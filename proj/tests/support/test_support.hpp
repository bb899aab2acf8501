#pragma once

// Shared fixtures for unit, property and acceptance tests: hand-rolled
// generators, brute-force oracles, finite differences and a stand-alone
// masked-autoencoder step used as a reduction reference.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fsvfm/autograd.hpp"
#include "fsvfm/backbone.hpp"
#include "fsvfm/downstream.hpp"
#include "fsvfm/masking.hpp"
#include "fsvfm/pretrainer.hpp"
#include "fsvfm/region_atlas.hpp"
#include "fsvfm/rng.hpp"
#include "fsvfm/synth_data.hpp"

namespace fsvfm::testing {

// ---- generators -----------------------------------------------------------

// Random region assignment on a grid. Each region draws a random weight
// (some zero), so sizes vary widely and some regions are empty. At least one
// selectable region is always nonempty.
PatchRegionIndex random_region_index(Rng& rng, int grid_h, int grid_w);
// One selectable region holding `big` patches, the rest spread randomly.
PatchRegionIndex oversized_region_index(Rng& rng, int grid, Region big_region, int big);
ParsingMap random_parsing_map(Rng& rng, std::uint32_t max_side = 40);
// Row-stochastic n x n matrix with random sparsity.
Matrix random_stochastic(Rng& rng, int n);
Matrix random_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0);
// Scores with ties and labels with both classes.
void random_scores(Rng& rng, int n, std::vector<double>& scores, std::vector<int>& labels);

// ---- oracles --------------------------------------------------------------

// Largest remainder via long-double shares and an explicit sort.
std::vector<int> apportion_oracle(int budget, const std::vector<int>& sizes);
// Mann-Whitney statistic by counting every (fake, real) pair; ties count half.
double auc_pair_oracle(const std::vector<double>& scores, const std::vector<int>& labels);
struct SweepPoint {
  double hter = 0.0;
  double far = 0.0;
  double frr = 0.0;
};
SweepPoint rates_oracle(const std::vector<double>& scores, const std::vector<int>& labels, double threshold);
// Every candidate threshold scanned in increasing order.
EerPoint eer_sweep_oracle(const std::vector<double>& scores, const std::vector<int>& labels);

// ---- finite differences ---------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  std::string worst;
};

// Central differences of loss() for up to `per_tensor` random entries of
// each tensor, against the gradient left by one backward pass.
// relative error = |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<ag::Tensor()>& loss, const std::vector<std::pair<std::string, ag::Tensor>>& params,
                           Rng& rng, int per_tensor = 6, double h = 1e-5, double floor = 1e-6);

// ---- reference masked autoencoder ------------------------------------------

// Plain MAE forward written against parameter names only: shuffled keep
// indices, encoder blocks, mask-token append and unshuffle, decoder, norm_pix
// targets, mean masked MSE. Reads the JointModel's online parameters, so its
// backward accumulates into the same leaves.
class ReferenceMae {
 public:
  ReferenceMae(const ParameterSet& online, const ViTProfile& profile);
  // Batch mean of the per-image masked loss. shuffle_seed permutes the keep
  // order (attention is permutation-equivariant, so results must not change).
  ag::Tensor loss(const std::vector<const Matrix*>& patches, const std::vector<std::vector<std::uint8_t>>& masks,
                  std::uint64_t shuffle_seed) const;

 private:
  ag::Tensor p(const std::string& name) const;
  ag::Tensor block(const std::string& prefix, const ag::Tensor& x, int heads) const;
  ag::Tensor ln(const std::string& prefix, const ag::Tensor& x) const;
  ag::Tensor lin(const std::string& prefix, const ag::Tensor& x) const;

  const ParameterSet& ps_;
  ViTProfile profile_;
  Matrix pos_;
};

// ---- filesystem -----------------------------------------------------------

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

// Small micro-profile pre-training config (narrow ID heads for speed).
PretrainConfig small_pretrain_config();

}  // namespace fsvfm::testing
