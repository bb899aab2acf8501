#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fsvfm/autograd.hpp"
#include "fsvfm/rng.hpp"
#include "fsvfm/synth_data.hpp"

namespace fsvfm {

struct ViTProfile {
  std::string name = "micro";
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  int decoder_dim = 32;
  int decoder_depth = 2;
  int decoder_heads = 4;
  int rep_depth = 2;  // Siamese rep decoders, at encoder width
  bool use_cls_token = true;

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;

  static ViTProfile micro();
  static ViTProfile tiny();
  static ViTProfile small();
  static ViTProfile base();
  static ViTProfile large();
  static ViTProfile from_name(const std::string& name);
};

struct Parameter {
  std::string name;
  ag::Tensor tensor;
  bool decay = true;  // weight decay applies (2-D weights only)
};

// Ordered, named parameter container. Names are stable strings used as
// checkpoint keys.
class ParameterSet {
 public:
  ag::Tensor add(std::string name, Matrix init, bool decay, bool trainable = true);
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  void set_trainable(bool trainable);
  void zero_grad();
  std::size_t scalar_count() const;
  std::size_t trainable_scalar_count() const;
  // FNV-1a over names and raw parameter bytes.
  std::uint64_t hash() const;

 private:
  std::vector<Parameter> params_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, int in, int out, Rng& init, bool bias = true);
  ag::Tensor forward(const ag::Tensor& x) const { return ag::linear(x, weight, bias); }
  ag::Tensor weight;
  ag::Tensor bias;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& name, int dim);
  ag::Tensor forward(const ag::Tensor& x) const { return ag::layer_norm(x, gamma, beta, kEps); }
  static constexpr double kEps = 1e-6;
  ag::Tensor gamma;
  ag::Tensor beta;
};

// Pre-norm transformer block: x + attn(ln1(x)); x + mlp(ln2(x)).
class Block {
 public:
  Block(ParameterSet& ps, const std::string& prefix, int dim, int heads, double mlp_ratio, Rng& init);
  ag::Tensor forward(const ag::Tensor& x, std::vector<Matrix>* attn_probs = nullptr) const;

 private:
  int dim_;
  int heads_;
  LayerNorm ln1_, ln2_;
  Linear qkv_, proj_, fc1_, fc2_;
};

// Linear -> LayerNorm -> ReLU -> Linear, the projector/predictor shape.
class MlpHead {
 public:
  MlpHead(ParameterSet& ps, const std::string& prefix, int in, int hidden, int out, Rng& init);
  ag::Tensor forward(const ag::Tensor& x) const;

 private:
  Linear fc1_;
  LayerNorm norm_;
  Linear fc2_;
};

struct TokenSet {
  ag::Tensor tokens;           // T x d, CLS (if any) in row 0
  std::vector<int> positions;  // grid index of each non-CLS row
  bool has_cls = false;

  int n_tokens() const { return static_cast<int>(tokens.rows()); }
  int patch_row_begin() const { return has_cls ? 1 : 0; }
};

// Captured attention probabilities: probs[layer][sample][head] is T x T.
struct AttentionTrace {
  std::vector<std::vector<std::vector<Matrix>>> probs;
  std::vector<std::vector<int>> positions;  // per sample
  bool has_cls = false;

  int n_layers() const { return static_cast<int>(probs.size()); }
  int batch() const { return static_cast<int>(positions.size()); }
  void add_sample(std::vector<std::vector<Matrix>> per_layer, std::vector<int> pos, bool cls);
};

// Called after each encoder block; used to splice in per-block adapters.
using BlockHook = std::function<ag::Tensor(int layer, const ag::Tensor& x)>;

// Fixed 2-D sine-cosine table, grid*grid x dim. Half of the channels encode
// the column coordinate and half the row coordinate; each half is
// [sin(pos * w_k), cos(pos * w_k)] with w_k = 10000^(-k / (dim/4)).
Matrix sincos_pos_table_2d(int dim, int grid);

// Flattens an image into N x (p*p*3) patch rows (row-major grid; inside a
// patch row-major pixels, channel-last).
Matrix patchify_image(const Image& image, int patch_size);
Image unpatchify(const Matrix& patches, int patch_size, int height, int width);

struct ImageNormalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};
Image normalize_image(const Image& image, const ImageNormalization& norm);

class VisionEncoder {
 public:
  VisionEncoder(ParameterSet& ps, const std::string& prefix, const ViTProfile& profile, Rng& init);

  // Tokens at positions where mask == 0, plus CLS if enabled.
  TokenSet embed_visible(const Matrix& patches, const std::vector<std::uint8_t>& mask) const;
  // Tokens at the given positions (any subset of the grid).
  TokenSet embed_positions(const Matrix& patches, const std::vector<int>& positions) const;
  TokenSet embed_full(const Matrix& patches) const;
  TokenSet encode(const TokenSet& tokens, std::vector<std::vector<Matrix>>* capture = nullptr,
                  const BlockHook* hook = nullptr) const;

  const ViTProfile& profile() const { return profile_; }
  const Matrix& pos_table() const { return pos_; }

 private:
  ViTProfile profile_;
  Linear patch_embed_;
  ag::Tensor cls_token_;
  std::vector<Block> blocks_;
  LayerNorm norm_;
  Matrix pos_;
};

// Full token set: encoded value where visible, shared mask token where
// masked, positional embedding added to every patch row; CLS carried over.
TokenSet assemble_full(const TokenSet& visible, const std::vector<std::uint8_t>& mask, const ag::Tensor& mask_token,
                       const Matrix& pos_table);

class PixelDecoder {
 public:
  PixelDecoder(ParameterSet& ps, const std::string& prefix, const ViTProfile& profile, Rng& init);
  // N x patch_dim predictions at every grid position (CLS dropped).
  ag::Tensor decode(const TokenSet& full) const;

 private:
  Linear embed_;
  std::vector<Block> blocks_;
  LayerNorm norm_;
  Linear head_;
};

class RepDecoder {
 public:
  RepDecoder(ParameterSet& ps, const std::string& prefix, const ViTProfile& profile, Rng& init);
  // 1 x d: blocks, norm, linear feature head, mean over non-CLS rows.
  ag::Tensor decode(const TokenSet& tokens) const;

 private:
  std::vector<Block> blocks_;
  LayerNorm norm_;
  Linear head_;
};

// Mean of the non-CLS rows.
ag::Tensor mean_pool_patches(const TokenSet& tokens);

}  // namespace fsvfm
