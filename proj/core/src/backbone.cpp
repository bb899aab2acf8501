#include "fsvfm/backbone.hpp"

#include <cmath>

#include "fsvfm/errors.hpp"

namespace fsvfm {

void ViTProfile::validate() const {
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
    throw ConfigError("profile " + name + ": image size must be a positive multiple of the patch size");
  if (depth < 1) throw ConfigError("profile " + name + ": depth must be >= 1");
  if (heads < 1 || embed_dim % heads != 0) throw ConfigError("profile " + name + ": embed_dim not divisible by heads");
  if (embed_dim % 4 != 0) throw ConfigError("profile " + name + ": embed_dim must be divisible by 4");
  if (decoder_heads < 1 || decoder_dim % decoder_heads != 0)
    throw ConfigError("profile " + name + ": decoder_dim not divisible by decoder_heads");
  if (decoder_depth < 0 || rep_depth < 0) throw ConfigError("profile " + name + ": negative decoder depth");
  if (mlp_ratio <= 0) throw ConfigError("profile " + name + ": mlp_ratio must be positive");
}

ViTProfile ViTProfile::micro() { return ViTProfile{}; }

ViTProfile ViTProfile::tiny() {
  ViTProfile p;
  p.name = "tiny";
  p.image_size = 224;
  p.patch_size = 16;
  p.embed_dim = 192;
  p.depth = 12;
  p.heads = 3;
  p.decoder_dim = 128;
  p.decoder_depth = 4;
  p.decoder_heads = 4;
  return p;
}

namespace {
ViTProfile mae_sized(const char* name, int dim, int depth, int heads) {
  ViTProfile p;
  p.name = name;
  p.image_size = 224;
  p.patch_size = 16;
  p.embed_dim = dim;
  p.depth = depth;
  p.heads = heads;
  p.decoder_dim = 512;
  p.decoder_depth = 8;
  p.decoder_heads = 16;
  return p;
}
}  // namespace

ViTProfile ViTProfile::small() { return mae_sized("small", 384, 12, 6); }
ViTProfile ViTProfile::base() { return mae_sized("base", 768, 12, 12); }
ViTProfile ViTProfile::large() { return mae_sized("large", 1024, 24, 16); }

ViTProfile ViTProfile::from_name(const std::string& name) {
  if (name == "micro") return micro();
  if (name == "tiny") return tiny();
  if (name == "small" || name == "S") return small();
  if (name == "base" || name == "B") return base();
  if (name == "large" || name == "L") return large();
  throw ConfigError("unknown profile '" + name + "'");
}

// ---------------------------------------------------------------------------

ag::Tensor ParameterSet::add(std::string name, Matrix init, bool decay, bool trainable) {
  if (find(name)) throw StateError("duplicate parameter name " + name);
  ag::Tensor t = ag::leaf(std::move(init), trainable);
  params_.push_back({std::move(name), t, decay});
  return t;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& p : params_) p.tensor.set_requires_grad(trainable);
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

std::size_t ParameterSet::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.tensor.requires_grad()) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

std::uint64_t ParameterSet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    h = fnv1a64(p.name, h);
    const Matrix& v = p.tensor.value();
    h = fnv1a64(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
  }
  return h;
}

// ---------------------------------------------------------------------------

namespace {

Matrix xavier_uniform(int in, int out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  return w;
}

Matrix normal_matrix(int rows, int cols, double std, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * std;
  return m;
}

}  // namespace

Linear::Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& init, bool with_bias) {
  weight = ps.add(name + ".weight", xavier_uniform(in, out, init), true);
  if (with_bias) bias = ps.add(name + ".bias", Matrix::Zero(1, out), false);
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, int dim) {
  gamma = ps.add(name + ".weight", Matrix::Ones(1, dim), false);
  beta = ps.add(name + ".bias", Matrix::Zero(1, dim), false);
}

Block::Block(ParameterSet& ps, const std::string& prefix, int dim, int heads, double mlp_ratio, Rng& init)
    : dim_(dim), heads_(heads) {
  const int hidden = static_cast<int>(std::lround(dim * mlp_ratio));
  ln1_ = LayerNorm(ps, prefix + ".norm1", dim);
  qkv_ = Linear(ps, prefix + ".attn.qkv", dim, 3 * dim, init);
  proj_ = Linear(ps, prefix + ".attn.proj", dim, dim, init);
  ln2_ = LayerNorm(ps, prefix + ".norm2", dim);
  fc1_ = Linear(ps, prefix + ".mlp.fc1", dim, hidden, init);
  fc2_ = Linear(ps, prefix + ".mlp.fc2", hidden, dim, init);
}

ag::Tensor Block::forward(const ag::Tensor& x, std::vector<Matrix>* attn_probs) const {
  ag::Tensor qkv = qkv_.forward(ln1_.forward(x));
  ag::Tensor q = ag::slice_cols(qkv, 0, dim_);
  ag::Tensor k = ag::slice_cols(qkv, dim_, dim_);
  ag::Tensor v = ag::slice_cols(qkv, 2 * dim_, dim_);
  ag::Tensor h = ag::add(x, proj_.forward(ag::attention(q, k, v, heads_, attn_probs)));
  return ag::add(h, fc2_.forward(ag::gelu(fc1_.forward(ln2_.forward(h)))));
}

MlpHead::MlpHead(ParameterSet& ps, const std::string& prefix, int in, int hidden, int out, Rng& init)
    : fc1_(ps, prefix + ".fc1", in, hidden, init), norm_(ps, prefix + ".norm", hidden), fc2_(ps, prefix + ".fc2", hidden, out, init) {}

ag::Tensor MlpHead::forward(const ag::Tensor& x) const {
  return fc2_.forward(ag::relu(norm_.forward(fc1_.forward(x))));
}

void AttentionTrace::add_sample(std::vector<std::vector<Matrix>> per_layer, std::vector<int> pos, bool cls) {
  if (probs.empty()) probs.resize(per_layer.size());
  if (probs.size() != per_layer.size()) throw StateError("attention trace layer count mismatch");
  for (std::size_t l = 0; l < per_layer.size(); ++l) probs[l].push_back(std::move(per_layer[l]));
  positions.push_back(std::move(pos));
  has_cls = cls;
}

// ---------------------------------------------------------------------------

Matrix sincos_pos_table_2d(int dim, int grid) {
  if (dim % 4 != 0) throw ShapeError("sin-cos positional embedding needs dim divisible by 4");
  const int quarter = dim / 4;
  Matrix table(grid * grid, dim);
  for (int row = 0; row < grid; ++row) {
    for (int col = 0; col < grid; ++col) {
      const int i = row * grid + col;
      for (int k = 0; k < quarter; ++k) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        table(i, k) = std::sin(col * omega);
        table(i, quarter + k) = std::cos(col * omega);
        table(i, 2 * quarter + k) = std::sin(row * omega);
        table(i, 3 * quarter + k) = std::cos(row * omega);
      }
    }
  }
  return table;
}

Matrix patchify_image(const Image& image, int p) {
  if (p <= 0 || image.height % p != 0 || image.width % p != 0)
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by patch size " + std::to_string(p));
  const int gh = image.height / p;
  const int gw = image.width / p;
  Matrix out(gh * gw, p * p * 3);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const int row = py * gw + px;
      int col = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < 3; ++c) out(row, col++) = image.at(py * p + y, px * p + x, c);
    }
  return out;
}

Image unpatchify(const Matrix& patches, int p, int height, int width) {
  const int gw = width / p;
  Image img(height, width);
  for (Index row = 0; row < patches.rows(); ++row) {
    const int py = static_cast<int>(row) / gw;
    const int px = static_cast<int>(row) % gw;
    int col = 0;
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        for (int c = 0; c < 3; ++c) img.at(py * p + y, px * p + x, c) = patches(row, col++);
  }
  return img;
}

Image normalize_image(const Image& image, const ImageNormalization& norm) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const std::size_t c = i % 3;
    out.pixels[i] = (image.pixels[i] - norm.mean[c]) / norm.std[c];
  }
  return out;
}

// ---------------------------------------------------------------------------

VisionEncoder::VisionEncoder(ParameterSet& ps, const std::string& prefix, const ViTProfile& profile, Rng& init)
    : profile_(profile) {
  profile_.validate();
  const int d = profile_.embed_dim;
  patch_embed_ = Linear(ps, prefix + ".patch_embed", profile_.patch_dim(), d, init);
  if (profile_.use_cls_token) cls_token_ = ps.add(prefix + ".cls_token", normal_matrix(1, d, 0.02, init), false);
  for (int i = 0; i < profile_.depth; ++i)
    blocks_.emplace_back(ps, prefix + ".blocks." + std::to_string(i), d, profile_.heads, profile_.mlp_ratio, init);
  norm_ = LayerNorm(ps, prefix + ".norm", d);
  pos_ = sincos_pos_table_2d(d, profile_.grid());
}

TokenSet VisionEncoder::embed_positions(const Matrix& patches, const std::vector<int>& positions) const {
  if (patches.rows() != profile_.n_patches() || patches.cols() != profile_.patch_dim())
    throw ShapeError("patch matrix does not match the profile's grid");
  Matrix sel(static_cast<Index>(positions.size()), patches.cols());
  Matrix pos(static_cast<Index>(positions.size()), profile_.embed_dim);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const int p = positions[i];
    if (p < 0 || p >= profile_.n_patches()) throw ShapeError("token position out of range");
    sel.row(static_cast<Index>(i)) = patches.row(p);
    pos.row(static_cast<Index>(i)) = pos_.row(p);
  }
  TokenSet out;
  out.positions = positions;
  ag::Tensor x = ag::add_constant(patch_embed_.forward(ag::constant(std::move(sel))), pos);
  if (profile_.use_cls_token) {
    out.tokens = ag::concat_rows({cls_token_, x});
    out.has_cls = true;
  } else {
    out.tokens = x;
  }
  return out;
}

TokenSet VisionEncoder::embed_visible(const Matrix& patches, const std::vector<std::uint8_t>& mask) const {
  if (static_cast<int>(mask.size()) != profile_.n_patches()) throw ShapeError("mask length does not match patch count");
  std::vector<int> visible;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (!mask[static_cast<std::size_t>(i)]) visible.push_back(i);
  return embed_positions(patches, visible);
}

TokenSet VisionEncoder::embed_full(const Matrix& patches) const {
  std::vector<int> all(static_cast<std::size_t>(profile_.n_patches()));
  for (int i = 0; i < profile_.n_patches(); ++i) all[static_cast<std::size_t>(i)] = i;
  return embed_positions(patches, all);
}

TokenSet VisionEncoder::encode(const TokenSet& tokens, std::vector<std::vector<Matrix>>* capture,
                               const BlockHook* hook) const {
  ag::Tensor x = tokens.tokens;
  if (capture) capture->assign(blocks_.size(), {});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x, capture ? &(*capture)[i] : nullptr);
    if (hook && *hook) x = (*hook)(static_cast<int>(i), x);
  }
  TokenSet out = tokens;
  out.tokens = norm_.forward(x);
  return out;
}

TokenSet assemble_full(const TokenSet& visible, const std::vector<std::uint8_t>& mask, const ag::Tensor& mask_token,
                       const Matrix& pos_table) {
  const int n = static_cast<int>(mask.size());
  if (pos_table.rows() != n) throw ShapeError("positional table does not match mask length");
  const int off = visible.patch_row_begin();
  std::vector<int> slot_of(static_cast<std::size_t>(n), -1);
  for (std::size_t j = 0; j < visible.positions.size(); ++j) {
    const int p = visible.positions[j];
    if (mask[static_cast<std::size_t>(p)]) throw ShapeError("visible token at a masked position");
    slot_of[static_cast<std::size_t>(p)] = static_cast<int>(j) + off;
  }
  std::vector<int> source;
  source.reserve(static_cast<std::size_t>(n + off));
  if (visible.has_cls) source.push_back(0);
  for (int p = 0; p < n; ++p) {
    if (!mask[static_cast<std::size_t>(p)] && slot_of[static_cast<std::size_t>(p)] < 0)
      throw ShapeError("visible position without an encoded token");
    source.push_back(mask[static_cast<std::size_t>(p)] ? -1 : slot_of[static_cast<std::size_t>(p)]);
  }
  Matrix pos = Matrix::Zero(n + off, pos_table.cols());
  pos.bottomRows(n) = pos_table;
  TokenSet out;
  out.has_cls = visible.has_cls;
  out.positions.resize(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) out.positions[static_cast<std::size_t>(p)] = p;
  out.tokens = ag::add_constant(ag::assemble_rows(visible.tokens, mask_token, source), pos);
  return out;
}

ag::Tensor mean_pool_patches(const TokenSet& tokens) {
  return ag::mean_rows(tokens.tokens, tokens.patch_row_begin(), tokens.n_tokens());
}

PixelDecoder::PixelDecoder(ParameterSet& ps, const std::string& prefix, const ViTProfile& profile, Rng& init) {
  embed_ = Linear(ps, prefix + ".embed", profile.embed_dim, profile.decoder_dim, init);
  for (int i = 0; i < profile.decoder_depth; ++i)
    blocks_.emplace_back(ps, prefix + ".blocks." + std::to_string(i), profile.decoder_dim, profile.decoder_heads,
                         profile.mlp_ratio, init);
  norm_ = LayerNorm(ps, prefix + ".norm", profile.decoder_dim);
  head_ = Linear(ps, prefix + ".pred", profile.decoder_dim, profile.patch_dim(), init);
}

ag::Tensor PixelDecoder::decode(const TokenSet& full) const {
  ag::Tensor x = embed_.forward(full.tokens);
  for (const auto& b : blocks_) x = b.forward(x);
  x = head_.forward(norm_.forward(x));
  if (!full.has_cls) return x;
  std::vector<int> rows(static_cast<std::size_t>(full.n_tokens() - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i) + 1;
  return ag::gather_rows(x, rows);
}

RepDecoder::RepDecoder(ParameterSet& ps, const std::string& prefix, const ViTProfile& profile, Rng& init) {
  const int d = profile.embed_dim;
  for (int i = 0; i < profile.rep_depth; ++i)
    blocks_.emplace_back(ps, prefix + ".blocks." + std::to_string(i), d, profile.heads, profile.mlp_ratio, init);
  norm_ = LayerNorm(ps, prefix + ".norm", d);
  head_ = Linear(ps, prefix + ".head", d, d, init);
}

ag::Tensor RepDecoder::decode(const TokenSet& tokens) const {
  ag::Tensor x = tokens.tokens;
  for (const auto& b : blocks_) x = b.forward(x);
  TokenSet out = tokens;
  out.tokens = head_.forward(norm_.forward(x));
  return mean_pool_patches(out);
}

}  // namespace fsvfm
