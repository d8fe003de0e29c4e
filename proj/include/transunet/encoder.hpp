#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "transunet/layers.hpp"
#include "transunet/model_config.hpp"

namespace transunet {

// Splits C x H x W into N = (H/P)(W/P) flattened patches, one per row.
// Patches are ordered row-major over the patch grid; each row is laid out
// channel-major (c, py, px). Throws ConfigError when P does not divide H, W.
template <typename T>
Tensor<T> sequentialize(const Tensor<T>& x, std::size_t patch);

// Inverse of sequentialize.
template <typename T>
Tensor<T> unsequentialize(const Tensor<T>& patches, std::size_t channels, std::size_t height,
                          std::size_t width, std::size_t patch);

template <typename T>
struct PatchEmbedding {
  Tensor<T> projection;  // (P^2 * C) x D
  Tensor<T> position;    // N x D
  std::size_t patch = 16;
  std::size_t tokens = 0;

  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// z0 = patches * E + E_pos.
template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const PatchEmbedding<T>& embedding);

// Bilinearly resamples an N x D position table laid out on a
// src_h x src_w token grid onto a dst_h x dst_w grid.
template <typename T>
Tensor<T> resize_position_embedding(const Tensor<T>& position, std::size_t src_h,
                                    std::size_t src_w, std::size_t dst_h, std::size_t dst_w);

template <typename T>
struct TransformerLayer {
  LayerNorm<T> attn_norm;
  Linear<T> query, key, value, out;
  LayerNorm<T> mlp_norm;
  Linear<T> fc1, fc2;
  std::size_t heads = 1;

  static TransformerLayer create(std::size_t hidden, std::size_t heads, std::size_t mlp_dim,
                                 Rng& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// Multi-head scaled dot-product self-attention on already-normalized input.
// Per-head attention matrices (N x N) are appended to `attention` if given.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const TransformerLayer<T>& layer,
                         std::vector<Tensor<T>>* attention = nullptr);

// z' = MSA(LN(z)) + z
template <typename T>
Tensor<T> msa_block(const Tensor<T>& z, const TransformerLayer<T>& layer,
                    std::vector<Tensor<T>>* attention = nullptr);

// z = MLP(LN(z')) + z', MLP = linear -> gelu -> linear
template <typename T>
Tensor<T> mlp_block(const Tensor<T>& z, const TransformerLayer<T>& layer);

// L layers of (msa_block; mlp_block) followed by the final layer norm.
template <typename T>
Tensor<T> transformer_stack(const Tensor<T>& z0, const std::vector<TransformerLayer<T>>& layers,
                            const LayerNorm<T>& final_norm);

template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1;
  GroupNorm<T> norm1;
  Conv2d<T> conv2;
  GroupNorm<T> norm2;  // gain starts at zero, making the block an identity
  std::optional<Conv2d<T>> projection;
  std::optional<GroupNorm<T>> projection_norm;

  static ResidualBlock create(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

// Small residual CNN emitting features at 1/2, 1/4, 1/8 and 1/16 of the
// input resolution: a stride-2 3x3 stem then three stages of two residual
// blocks whose first block downsamples.
template <typename T>
struct CnnBackbone {
  Conv2d<T> stem;
  GroupNorm<T> stem_norm;
  std::array<std::array<ResidualBlock<T>, 2>, 3> stages;

  static CnnBackbone create(std::size_t in_channels, const std::array<std::size_t, 4>& widths,
                            Rng& rng);
  std::array<Tensor<T>, 4> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> tokens;            // N x D
  std::vector<Tensor<T>> skips;  // f1/2, f1/4, f1/8 (hybrid only)
  std::size_t grid_height = 0;
  std::size_t grid_width = 0;
};

template <typename T>
class Encoder {
 public:
  Encoder(const ModelConfig& config, Rng& rng);

  EncoderOutput<T> operator()(const Tensor<T>& image) const;
  void collect(const std::string& prefix, ParameterList<T>& out) const;

  const ModelConfig& config() const noexcept { return config_; }
  PatchEmbedding<T>& embedding() noexcept { return embedding_; }
  const PatchEmbedding<T>& embedding() const noexcept { return embedding_; }
  std::vector<TransformerLayer<T>>& layers() noexcept { return layers_; }
  const std::vector<TransformerLayer<T>>& layers() const noexcept { return layers_; }
  const LayerNorm<T>& final_norm() const noexcept { return final_norm_; }
  const std::optional<CnnBackbone<T>>& backbone() const noexcept { return backbone_; }

 private:
  ModelConfig config_;
  std::optional<CnnBackbone<T>> backbone_;
  PatchEmbedding<T> embedding_;
  std::vector<TransformerLayer<T>> layers_;
  LayerNorm<T> final_norm_;
};

template <typename T>
EncoderOutput<T> encode_vit(const Tensor<T>& image, const Encoder<T>& encoder);

template <typename T>
EncoderOutput<T> encode_hybrid(const Tensor<T>& image, const Encoder<T>& encoder);

}  // namespace transunet
