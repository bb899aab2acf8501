#include "fsvfm/mim.hpp"

#include <cmath>

#include "fsvfm/errors.hpp"

namespace fsvfm {

Matrix normalized_pixel_targets(const Matrix& patches, double eps) {
  Matrix out(patches.rows(), patches.cols());
  const double n = static_cast<double>(patches.cols());
  for (Index r = 0; r < patches.rows(); ++r) {
    const double mean = patches.row(r).mean();
    const double var = (patches.row(r).array() - mean).square().sum() / (n - 1.0);
    out.row(r) = (patches.row(r).array() - mean) / std::sqrt(var + eps);
  }
  return out;
}

ag::Tensor masked_patch_mse(const ag::Tensor& pred, const Matrix& targets, const std::vector<std::uint8_t>& mask) {
  if (pred.rows() != targets.rows() || pred.cols() != targets.cols())
    throw ShapeError("reconstruction prediction and target shapes differ");
  if (static_cast<Index>(mask.size()) != pred.rows()) throw ShapeError("mask length does not match patch count");
  std::vector<int> rows;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[static_cast<std::size_t>(i)]) rows.push_back(i);
  Matrix out = Matrix::Zero(1, 1);
  if (rows.empty()) return ag::constant(out);
  const double inv_rows = 1.0 / static_cast<double>(rows.size());
  const double inv_cols = 1.0 / static_cast<double>(pred.cols());
  double acc = 0.0;
  for (int r : rows) acc += (pred.value().row(r) - targets.row(r)).squaredNorm() * inv_cols;
  out(0, 0) = acc * inv_rows;
  return ag::make_op(std::move(out), {pred}, [targets, rows, inv_rows, inv_cols](ag::Node& self) {
    Matrix& g = self.inputs[0]->grad_buffer();
    const double up = self.grad(0, 0) * 2.0 * inv_rows * inv_cols;
    for (int r : rows) g.row(r) += up * (self.inputs[0]->value.row(r) - targets.row(r));
  });
}

ag::Tensor loss_rec_m(const ag::Tensor& pred, const Matrix& targets, const std::vector<std::uint8_t>& mask) {
  bool any = false;
  for (auto v : mask) any = any || v;
  if (!any) throw PreconditionError("loss_rec_m needs at least one masked patch");
  return masked_patch_mse(pred, targets, mask);
}

ag::Tensor loss_rec_fr(const ag::Tensor& pred, const Matrix& targets, const std::vector<std::uint8_t>& region_mask) {
  return masked_patch_mse(pred, targets, region_mask);
}

RecLoss loss_rec(const ag::Tensor& pred, const Matrix& targets, const MaskPair& masks, double lambda_fr) {
  RecLoss out;
  out.rec_m = loss_rec_m(pred, targets, masks.mask);
  out.rec_fr = loss_rec_fr(pred, targets, masks.region_mask);
  out.total = ag::weighted_sum({out.rec_m, out.rec_fr}, {1.0, lambda_fr});
  return out;
}

}  // namespace fsvfm
