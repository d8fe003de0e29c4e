#include "transunet/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace transunet {

namespace {

// out[i] = x[source[i]]; backward scatters into x.
template <typename T>
Tensor<T> gather(const char* name, const Tensor<T>& x, Shape shape,
                 std::shared_ptr<const std::vector<std::size_t>> source) {
  const auto d = x.data();
  std::vector<T> out(source->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[(*source)[i]];
  return Tensor<T>::record(name, std::move(shape), std::move(out), {x},
                           [x, source](std::span<const T> g) mutable {
                             auto gx = x.grad_accumulator();
                             for (std::size_t i = 0; i < g.size(); ++i) gx[(*source)[i]] += g[i];
                           });
}

// Flat index into C x H x W for every element of the N x (P*P*C) layout.
std::vector<std::size_t> patch_indices(std::size_t channels, std::size_t height,
                                       std::size_t width, std::size_t patch) {
  const std::size_t gh = height / patch, gw = width / patch;
  std::vector<std::size_t> idx;
  idx.reserve(channels * height * width);
  for (std::size_t ty = 0; ty < gh; ++ty)
    for (std::size_t tx = 0; tx < gw; ++tx)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            idx.push_back((c * height + ty * patch + py) * width + tx * patch + px);
  return idx;
}

void check_patch_grid(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide input " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
}

}  // namespace

template <typename T>
Tensor<T> sequentialize(const Tensor<T>& x, std::size_t patch) {
  if (x.rank() != 3) throw DimensionError("sequentialize: expected C x H x W, got " +
                                          shape_string(x.shape()));
  const std::size_t c = x.size(0), h = x.size(1), w = x.size(2);
  check_patch_grid(h, w, patch);
  auto idx = std::make_shared<const std::vector<std::size_t>>(patch_indices(c, h, w, patch));
  const std::size_t n = (h / patch) * (w / patch);
  return gather("sequentialize", x, {n, patch * patch * c}, idx);
}

template <typename T>
Tensor<T> unsequentialize(const Tensor<T>& patches, std::size_t channels, std::size_t height,
                          std::size_t width, std::size_t patch) {
  check_patch_grid(height, width, patch);
  const std::size_t n = (height / patch) * (width / patch);
  if (patches.shape() != Shape{n, patch * patch * channels}) {
    throw DimensionError("unsequentialize: patches " + shape_string(patches.shape()) +
                         " do not tile " + std::to_string(channels) + "x" +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const auto forward = patch_indices(channels, height, width, patch);
  auto inverse = std::make_shared<std::vector<std::size_t>>(forward.size());
  for (std::size_t i = 0; i < forward.size(); ++i) (*inverse)[forward[i]] = i;
  return gather<T>("unsequentialize", patches, {channels, height, width}, std::move(inverse));
}

template <typename T>
void PatchEmbedding<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  out.push_back({prefix + ".projection", projection});
  out.push_back({prefix + ".position", position});
}

template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const PatchEmbedding<T>& embedding) {
  if (patches.rank() != 2 || patches.size(1) != embedding.projection.size(0)) {
    throw ConfigError("patch width " + shape_string(patches.shape()) +
                      " does not match projection " + shape_string(embedding.projection.shape()));
  }
  if (patches.size(0) != embedding.position.size(0)) {
    throw ConfigError("sequence length " + std::to_string(patches.size(0)) +
                      " does not match position embedding " +
                      shape_string(embedding.position.shape()));
  }
  return add(matmul(patches, embedding.projection), embedding.position);
}

template <typename T>
Tensor<T> resize_position_embedding(const Tensor<T>& position, std::size_t src_h,
                                    std::size_t src_w, std::size_t dst_h, std::size_t dst_w) {
  if (position.rank() != 2 || position.size(0) != src_h * src_w) {
    throw DimensionError("position embedding " + shape_string(position.shape()) +
                         " does not cover a " + std::to_string(src_h) + "x" +
                         std::to_string(src_w) + " grid");
  }
  if (dst_h == 0 || dst_w == 0) throw DimensionError("empty target token grid");
  const std::size_t dim = position.size(1);
  const auto src = position.data();
  auto sample = [](std::size_t i, std::size_t in, std::size_t out, std::size_t& lo,
                   std::size_t& hi) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    return s - static_cast<double>(lo);
  };
  std::vector<T> out(dst_h * dst_w * dim);
  for (std::size_t y = 0; y < dst_h; ++y) {
    std::size_t y0, y1;
    const T fy = static_cast<T>(sample(y, src_h, dst_h, y0, y1));
    for (std::size_t x = 0; x < dst_w; ++x) {
      std::size_t x0, x1;
      const T fx = static_cast<T>(sample(x, src_w, dst_w, x0, x1));
      for (std::size_t d = 0; d < dim; ++d) {
        const T a = src[(y0 * src_w + x0) * dim + d], b = src[(y0 * src_w + x1) * dim + d];
        const T c = src[(y1 * src_w + x0) * dim + d], e = src[(y1 * src_w + x1) * dim + d];
        const T top = a + fx * (b - a);
        const T bottom = c + fx * (e - c);
        out[(y * dst_w + x) * dim + d] = top + fy * (bottom - top);
      }
    }
  }
  return Tensor<T>({dst_h * dst_w, dim}, std::move(out), position.requires_grad());
}

template <typename T>
TransformerLayer<T> TransformerLayer<T>::create(std::size_t hidden, std::size_t heads,
                                                std::size_t mlp_dim, Rng& rng) {
  TransformerLayer layer;
  layer.attn_norm = LayerNorm<T>::create(hidden);
  layer.query = Linear<T>::create(hidden, hidden, rng);
  layer.key = Linear<T>::create(hidden, hidden, rng);
  layer.value = Linear<T>::create(hidden, hidden, rng);
  layer.out = Linear<T>::create(hidden, hidden, rng);
  layer.mlp_norm = LayerNorm<T>::create(hidden);
  layer.fc1 = Linear<T>::create(hidden, mlp_dim, rng);
  layer.fc2 = Linear<T>::create(mlp_dim, hidden, rng);
  layer.heads = heads;
  return layer;
}

template <typename T>
void TransformerLayer<T>::collect(const std::string& prefix, ParameterList<T>& out_list) const {
  attn_norm.collect(prefix + ".attn_norm", out_list);
  query.collect(prefix + ".attn.query", out_list);
  key.collect(prefix + ".attn.key", out_list);
  value.collect(prefix + ".attn.value", out_list);
  out.collect(prefix + ".attn.out", out_list);
  mlp_norm.collect(prefix + ".mlp_norm", out_list);
  fc1.collect(prefix + ".mlp.fc1", out_list);
  fc2.collect(prefix + ".mlp.fc2", out_list);
}

template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const TransformerLayer<T>& layer,
                         std::vector<Tensor<T>>* attention) {
  const std::size_t hidden = x.size(1);
  const std::size_t head_dim = hidden / layer.heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(head_dim));
  const auto q = layer.query(x);
  const auto k = layer.key(x);
  const auto v = layer.value(x);
  std::vector<Tensor<T>> heads;
  heads.reserve(layer.heads);
  for (std::size_t h = 0; h < layer.heads; ++h) {
    const auto qh = slice_cols(q, h * head_dim, head_dim);
    const auto kh = slice_cols(k, h * head_dim, head_dim);
    const auto vh = slice_cols(v, h * head_dim, head_dim);
    const auto probs = softmax(scale(matmul(qh, transpose(kh)), scale_factor), 1);
    if (attention) attention->push_back(probs);
    heads.push_back(matmul(probs, vh));
  }
  return layer.out(concat_cols<T>(heads));
}

template <typename T>
Tensor<T> msa_block(const Tensor<T>& z, const TransformerLayer<T>& layer,
                    std::vector<Tensor<T>>* attention) {
  return add(self_attention(layer.attn_norm(z), layer, attention), z);
}

template <typename T>
Tensor<T> mlp_block(const Tensor<T>& z, const TransformerLayer<T>& layer) {
  return add(layer.fc2(gelu(layer.fc1(layer.mlp_norm(z)))), z);
}

template <typename T>
Tensor<T> transformer_stack(const Tensor<T>& z0, const std::vector<TransformerLayer<T>>& layers,
                            const LayerNorm<T>& final_norm) {
  Tensor<T> z = z0;
  for (const auto& layer : layers) z = mlp_block(msa_block(z, layer), layer);
  return final_norm(z);
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::create(std::size_t in, std::size_t out, std::size_t stride,
                                          Rng& rng) {
  ResidualBlock block;
  block.conv1 = Conv2d<T>::create(in, out, 3, stride, false, rng);
  block.norm1 = GroupNorm<T>::create(out);
  block.conv2 = Conv2d<T>::create(out, out, 3, 1, false, rng);
  block.norm2 = GroupNorm<T>::create(out);
  std::fill(block.norm2.gain.data().begin(), block.norm2.gain.data().end(), T(0));
  if (stride != 1 || in != out) {
    block.projection = Conv2d<T>::create(in, out, 1, stride, false, rng);
    block.projection_norm = GroupNorm<T>::create(out);
  }
  return block;
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  const auto y = norm2(conv2(relu(norm1(conv1(x)))));
  const auto shortcut = projection ? (*projection_norm)((*projection)(x)) : x;
  return relu(add(y, shortcut));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  conv1.collect(prefix + ".conv1", out);
  norm1.collect(prefix + ".norm1", out);
  conv2.collect(prefix + ".conv2", out);
  norm2.collect(prefix + ".norm2", out);
  if (projection) {
    projection->collect(prefix + ".projection", out);
    projection_norm->collect(prefix + ".projection_norm", out);
  }
}

template <typename T>
CnnBackbone<T> CnnBackbone<T>::create(std::size_t in_channels,
                                      const std::array<std::size_t, 4>& widths, Rng& rng) {
  CnnBackbone net;
  net.stem = Conv2d<T>::create(in_channels, widths[0], 3, 2, false, rng);
  net.stem_norm = GroupNorm<T>::create(widths[0]);
  for (std::size_t s = 0; s < 3; ++s) {
    net.stages[s][0] = ResidualBlock<T>::create(widths[s], widths[s + 1], 2, rng);
    net.stages[s][1] = ResidualBlock<T>::create(widths[s + 1], widths[s + 1], 1, rng);
  }
  return net;
}

template <typename T>
std::array<Tensor<T>, 4> CnnBackbone<T>::operator()(const Tensor<T>& x) const {
  std::array<Tensor<T>, 4> features;
  features[0] = relu(stem_norm(stem(x)));
  for (std::size_t s = 0; s < 3; ++s) {
    features[s + 1] = stages[s][1](stages[s][0](features[s]));
  }
  return features;
}

template <typename T>
void CnnBackbone<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  stem.collect(prefix + ".stem", out);
  stem_norm.collect(prefix + ".stem_norm", out);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t b = 0; b < 2; ++b)
      stages[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + "." + std::to_string(b),
                           out);
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  std::size_t patch_width = 0;
  if (config_.encoder == EncoderKind::Hybrid) {
    backbone_ = CnnBackbone<T>::create(config_.channels, config_.backbone_widths, rng);
    const std::size_t p = config_.patch_size / 16;
    patch_width = p * p * config_.backbone_widths[3];
    embedding_.patch = p;
  } else {
    patch_width = config_.patch_size * config_.patch_size * config_.channels;
    embedding_.patch = config_.patch_size;
  }
  embedding_.tokens = config_.tokens();
  embedding_.projection = truncated_normal<T>({patch_width, config_.hidden}, 0.02, rng);
  embedding_.position = truncated_normal<T>({embedding_.tokens, config_.hidden}, 0.02, rng);
  layers_.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers_.push_back(
        TransformerLayer<T>::create(config_.hidden, config_.heads, config_.mlp_dim, rng));
  }
  final_norm_ = LayerNorm<T>::create(config_.hidden);
}

template <typename T>
EncoderOutput<T> encode_vit(const Tensor<T>& image, const Encoder<T>& encoder) {
  const auto& cfg = encoder.config();
  if (cfg.encoder != EncoderKind::ViT) throw ConfigError("encode_vit on a hybrid encoder");
  const auto patches = sequentialize(image, encoder.embedding().patch);
  EncoderOutput<T> out;
  out.tokens = transformer_stack(embed(patches, encoder.embedding()), encoder.layers(),
                                 encoder.final_norm());
  out.grid_height = image.size(1) / encoder.embedding().patch;
  out.grid_width = image.size(2) / encoder.embedding().patch;
  return out;
}

template <typename T>
EncoderOutput<T> encode_hybrid(const Tensor<T>& image, const Encoder<T>& encoder) {
  const auto& cfg = encoder.config();
  if (cfg.encoder != EncoderKind::Hybrid) throw ConfigError("encode_hybrid on a ViT encoder");
  const auto features = (*encoder.backbone())(image);
  const auto patches = sequentialize(features[3], encoder.embedding().patch);
  EncoderOutput<T> out;
  out.tokens = transformer_stack(embed(patches, encoder.embedding()), encoder.layers(),
                                 encoder.final_norm());
  out.skips = {features[0], features[1], features[2]};
  out.grid_height = features[3].size(1) / encoder.embedding().patch;
  out.grid_width = features[3].size(2) / encoder.embedding().patch;
  return out;
}

template <typename T>
EncoderOutput<T> Encoder<T>::operator()(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.size(0) != config_.channels) {
    throw DimensionError("encoder expects a " + std::to_string(config_.channels) +
                         "-channel image, got " + shape_string(image.shape()));
  }
  return config_.encoder == EncoderKind::Hybrid ? encode_hybrid(image, *this)
                                                : encode_vit(image, *this);
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, ParameterList<T>& out) const {
  if (backbone_) backbone_->collect(prefix + ".backbone", out);
  embedding_.collect(prefix + ".embedding", out);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    layers_[l].collect(prefix + ".layers." + std::to_string(l), out);
  final_norm_.collect(prefix + ".final_norm", out);
}

#define TRANSUNET_INSTANTIATE_ENCODER(T)                                                      \
  template Tensor<T> sequentialize(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> unsequentialize(const Tensor<T>&, std::size_t, std::size_t, std::size_t, \
                                     std::size_t);                                            \
  template struct PatchEmbedding<T>;                                                          \
  template Tensor<T> embed(const Tensor<T>&, const PatchEmbedding<T>&);                       \
  template Tensor<T> resize_position_embedding(const Tensor<T>&, std::size_t, std::size_t,    \
                                               std::size_t, std::size_t);                     \
  template struct TransformerLayer<T>;                                                        \
  template Tensor<T> self_attention(const Tensor<T>&, const TransformerLayer<T>&,             \
                                    std::vector<Tensor<T>>*);                                 \
  template Tensor<T> msa_block(const Tensor<T>&, const TransformerLayer<T>&,                  \
                               std::vector<Tensor<T>>*);                                      \
  template Tensor<T> mlp_block(const Tensor<T>&, const TransformerLayer<T>&);                 \
  template Tensor<T> transformer_stack(const Tensor<T>&,                                      \
                                       const std::vector<TransformerLayer<T>>&,               \
                                       const LayerNorm<T>&);                                  \
  template struct ResidualBlock<T>;                                                           \
  template struct CnnBackbone<T>;                                                             \
  template class Encoder<T>;                                                                  \
  template EncoderOutput<T> encode_vit(const Tensor<T>&, const Encoder<T>&);                  \
  template EncoderOutput<T> encode_hybrid(const Tensor<T>&, const Encoder<T>&);

TRANSUNET_INSTANTIATE_ENCODER(float)
TRANSUNET_INSTANTIATE_ENCODER(double)

#undef TRANSUNET_INSTANTIATE_ENCODER

}  // namespace transunet
