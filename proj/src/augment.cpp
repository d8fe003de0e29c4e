#include <algorithm>
#include <cmath>
#include <numbers>

#include "transunet/data.hpp"
#include "transunet/random.hpp"

namespace transunet {

namespace {

void check_slice(const Slice& s) {
  if (s.image.rank() != 3) throw DimensionError("slice image must be C x H x W");
  if (s.labels.size() != s.image.size(1) * s.image.size(2)) {
    throw DimensionError("slice labels hold " + std::to_string(s.labels.size()) +
                         " pixels, image is " + shape_string(s.image.shape()));
  }
}

std::size_t clamp_index(double v, std::size_t n) {
  const double c = std::clamp(v, 0.0, static_cast<double>(n - 1));
  return static_cast<std::size_t>(c);
}

float bilinear_at(const float* plane, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const float fy = static_cast<float>(y - static_cast<double>(y0));
  const float fx = static_cast<float>(x - static_cast<double>(x0));
  const float a = plane[y0 * w + x0], b = plane[y0 * w + x1];
  const float c = plane[y1 * w + x0], d = plane[y1 * w + x1];
  const float top = a + fx * (b - a), bottom = c + fx * (d - c);
  return top + fy * (bottom - top);
}

}  // namespace

AugmentParams draw_augment_params(std::uint64_t seed, const AugmentConfig& config) {
  Rng rng(Rng::derive(seed, {0xa06}));
  AugmentParams p;
  p.flip_horizontal = rng.bernoulli(config.flip_probability);
  p.flip_vertical = rng.bernoulli(config.flip_probability);
  p.angle_deg = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  return p;
}

Slice apply_augment(const Slice& slice, const AugmentParams& params) {
  check_slice(slice);
  const std::size_t c = slice.image.size(0), h = slice.image.size(1), w = slice.image.size(2);
  Slice out{Tensor<float>(slice.image.shape()), std::vector<std::uint8_t>(h * w)};
  const float* src = slice.image.data().data();
  float* dst = out.image.data().data();

  const bool rotate = params.angle_deg != 0.0;
  const double theta = params.angle_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double cy = static_cast<double>(h - 1) / 2.0, cx = static_cast<double>(w - 1) / 2.0;

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map: undo the rotation, then the flips.
      double sy = static_cast<double>(y), sx = static_cast<double>(x);
      if (rotate) {
        const double dy = sy - cy, dx = sx - cx;
        sy = cy + cos_t * dy - sin_t * dx;
        sx = cx + sin_t * dy + cos_t * dx;
      }
      if (params.flip_vertical) sy = static_cast<double>(h - 1) - sy;
      if (params.flip_horizontal) sx = static_cast<double>(w - 1) - sx;

      const std::size_t ny = clamp_index(std::round(sy), h), nx = clamp_index(std::round(sx), w);
      out.labels[y * w + x] = slice.labels[ny * w + nx];
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[(ch * h + y) * w + x] =
            rotate ? bilinear_at(src + ch * h * w, h, w, sy, sx) : src[(ch * h + ny) * w + nx];
      }
    }
  }
  return out;
}

Slice augment(const Slice& slice, std::uint64_t seed, const AugmentConfig& config) {
  return apply_augment(slice, draw_augment_params(seed, config));
}

Slice resize_slice(const Slice& slice, std::size_t height, std::size_t width) {
  check_slice(slice);
  if (height == 0 || width == 0) throw ConfigError("resize target must be non-empty");
  const std::size_t c = slice.image.size(0), h = slice.image.size(1), w = slice.image.size(2);
  if (h == height && w == width) return {slice.image.detach(), slice.labels};
  Slice out{Tensor<float>({c, height, width}), std::vector<std::uint8_t>(height * width)};
  const double ry = static_cast<double>(h) / static_cast<double>(height);
  const double rx = static_cast<double>(w) / static_cast<double>(width);
  const float* src = slice.image.data().data();
  float* dst = out.image.data().data();
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = (static_cast<double>(y) + 0.5) * ry;
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = (static_cast<double>(x) + 0.5) * rx;
      out.labels[y * width + x] =
          slice.labels[clamp_index(std::floor(sy), h) * w + clamp_index(std::floor(sx), w)];
      for (std::size_t ch = 0; ch < c; ++ch) {
        dst[(ch * height + y) * width + x] = bilinear_at(src + ch * h * w, h, w, sy - 0.5, sx - 0.5);
      }
    }
  }
  return out;
}

EvalCase resize_case(const EvalCase& c, std::size_t height, std::size_t width) {
  const Extents e{c.image.extents.depth, height, width};
  EvalCase out{c.id, IntensityVolume(e, c.image.spacing), LabelVolume(e, c.labels.spacing, c.labels.classes)};
  // Keep the physical field of view.
  out.image.spacing.x *= static_cast<double>(c.image.extents.width) / static_cast<double>(width);
  out.image.spacing.y *= static_cast<double>(c.image.extents.height) / static_cast<double>(height);
  out.labels.spacing = out.image.spacing;
  const std::size_t plane = height * width;
  for (std::size_t z = 0; z < e.depth; ++z) {
    const auto s = resize_slice(make_slice(c.image, c.labels, z), height, width);
    std::copy(s.image.data().begin(), s.image.data().end(), out.image.voxels.begin() + z * plane);
    std::copy(s.labels.begin(), s.labels.end(), out.labels.voxels.begin() + z * plane);
  }
  return out;
}

}  // namespace transunet
