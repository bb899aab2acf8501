#pragma once

#include <cstdint>
#include <vector>

#include "fsvfm/autograd.hpp"
#include "fsvfm/masking.hpp"

namespace fsvfm {

// Per-patch standardized pixels (MAE "norm_pix"): each row is shifted by its
// mean and divided by sqrt(unbiased variance + eps).
Matrix normalized_pixel_targets(const Matrix& patches, double eps = 1e-6);

// Mean over rows with mask == 1 of the row-wise mean squared error. Rows with
// mask == 0 receive exactly zero gradient. Returns a constant 0 when no row is
// selected.
ag::Tensor masked_patch_mse(const ag::Tensor& pred, const Matrix& targets, const std::vector<std::uint8_t>& mask);

// Reconstruction loss over the masked patches; requires at least one.
ag::Tensor loss_rec_m(const ag::Tensor& pred, const Matrix& targets, const std::vector<std::uint8_t>& mask);
// Same form over the covered-region mask; 0 when the strategy covers nothing.
ag::Tensor loss_rec_fr(const ag::Tensor& pred, const Matrix& targets, const std::vector<std::uint8_t>& region_mask);

struct RecLoss {
  ag::Tensor total;  // rec_m + lambda_fr * rec_fr
  ag::Tensor rec_m;
  ag::Tensor rec_fr;
};

inline constexpr double kDefaultLambdaFr = 0.007;

RecLoss loss_rec(const ag::Tensor& pred, const Matrix& targets, const MaskPair& masks,
                 double lambda_fr = kDefaultLambdaFr);

}  // namespace fsvfm
