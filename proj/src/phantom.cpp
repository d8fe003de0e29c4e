#include <algorithm>
#include <cmath>

#include "transunet/data.hpp"
#include "transunet/random.hpp"

namespace transunet {

namespace {

constexpr int kMaxPlacementAttempts = 64;

struct Placement {
  std::array<double, 3> center;  // z, y, x
  std::array<double, 3> radius;
};

bool contains(ShapeFamily shape, const Placement& p, double z, double y, double x) {
  const double dz = (z - p.center[0]) / p.radius[0];
  const double dy = (y - p.center[1]) / p.radius[1];
  const double dx = (x - p.center[2]) / p.radius[2];
  if (shape == ShapeFamily::Ellipsoid) return dz * dz + dy * dy + dx * dx <= 1.0;
  return std::abs(dz) <= 1.0 && std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
}

Placement draw_placement(const StructureSpec& s, const Extents& e, Rng& rng) {
  const std::array<double, 3> extent{static_cast<double>(e.depth), static_cast<double>(e.height),
                                     static_cast<double>(e.width)};
  Placement p{};
  for (int a = 0; a < 3; ++a) {
    p.radius[a] = std::max(0.5, rng.uniform(s.size_min, s.size_max) * extent[a]);
  }
  for (int a = 0; a < 3; ++a) {
    if (s.center) {
      p.center[a] = (*s.center)[a];
      continue;
    }
    const double lo = std::min(p.radius[a], (extent[a] - 1.0) / 2.0);
    const double hi = std::max(lo, extent[a] - 1.0 - p.radius[a]);
    p.center[a] = rng.uniform(lo, hi);
  }
  return p;
}

}  // namespace

void PhantomSpec::validate() const {
  if (extents.depth < 8 || extents.height < 8 || extents.width < 8) {
    throw ConfigError("data.extents: every axis needs at least 8 voxels, got " +
                      std::to_string(extents.depth) + "x" + std::to_string(extents.height) +
                      "x" + std::to_string(extents.width));
  }
  if (!(spacing.x > 0) || !(spacing.y > 0) || !(spacing.z > 0)) {
    throw ConfigError("data.spacing: spacing must be strictly positive");
  }
  if (structures.size() > 254) throw ConfigError("data.structures: too many structures");
  if (noise_sigma < 0) throw ConfigError("data.noise: noise sigma must be non-negative");
  for (std::size_t i = 0; i < structures.size(); ++i) {
    const auto& s = structures[i];
    if (!(s.size_min > 0) || s.size_max < s.size_min || s.size_max > 1.0) {
      throw ConfigError("data.structure" + std::to_string(i + 1) +
                        ".size: need 0 < size_min <= size_max <= 1");
    }
    if (s.intensity_sigma < 0) {
      throw ConfigError("data.structure" + std::to_string(i + 1) +
                        ".intensity_sigma: must be non-negative");
    }
  }
}

PhantomSpec default_phantom_spec(Extents extents, std::uint64_t seed) {
  PhantomSpec spec;
  spec.extents = extents;
  spec.seed = seed;
  spec.noise_sigma = 0.25;
  spec.structures = {
      {ShapeFamily::Ellipsoid, 0.22, 0.34, 1.0, 0.1, std::nullopt},
      {ShapeFamily::Box, 0.10, 0.18, -1.0, 0.1, std::nullopt},
      {ShapeFamily::Ellipsoid, 0.05, 0.10, 2.0, 0.1, std::nullopt},
  };
  return spec;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const auto& e = spec.extents;
  Rng rng(Rng::derive(spec.seed, {0x9a47}));
  const std::size_t k = spec.classes();

  LabelVolume labels(e, spec.spacing, k);
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxPlacementAttempts) {
      throw ConfigError("data.structures: could not place every structure with a visible voxel");
    }
    std::fill(labels.voxels.begin(), labels.voxels.end(), std::uint8_t{0});
    for (std::size_t s = 0; s < spec.structures.size(); ++s) {
      const auto& structure = spec.structures[s];
      const auto placement = draw_placement(structure, e, rng);
      const auto label = static_cast<std::uint8_t>(s + 1);
      for (std::size_t z = 0; z < e.depth; ++z)
        for (std::size_t y = 0; y < e.height; ++y)
          for (std::size_t x = 0; x < e.width; ++x)
            if (contains(structure.shape, placement, static_cast<double>(z),
                         static_cast<double>(y), static_cast<double>(x))) {
              labels.at(z, y, x) = label;
            }
    }
    std::vector<std::size_t> counts(k, 0);
    for (auto v : labels.voxels) ++counts[v];
    if (std::all_of(counts.begin() + 1, counts.end(), [](std::size_t c) { return c > 0; })) break;
  }

  std::vector<double> means(k, spec.background_mean);
  for (std::size_t s = 0; s < spec.structures.size(); ++s) {
    const auto& st = spec.structures[s];
    means[s + 1] = st.intensity_mean + st.intensity_sigma * rng.normal();
  }
  IntensityVolume image(e, spec.spacing);
  for (std::size_t i = 0; i < image.voxels.size(); ++i) {
    image.voxels[i] = static_cast<float>(means[labels.voxels[i]] + spec.noise_sigma * rng.normal());
  }
  return {std::move(image), std::move(labels)};
}

Slice make_slice(const IntensityVolume& image, const LabelVolume& labels, std::size_t z) {
  return {slice_image(image, z), slice_labels(labels, z)};
}

Slice make_slice(const Phantom& phantom, std::size_t z) {
  return make_slice(phantom.image, phantom.labels, z);
}

std::size_t richest_slice(const LabelVolume& labels) {
  std::size_t best = 0;
  std::pair<std::size_t, std::size_t> best_score{0, 0};
  for (std::size_t z = 0; z < labels.extents.depth; ++z) {
    std::vector<std::size_t> counts(labels.classes, 0);
    for (auto v : slice_labels(labels, z)) ++counts[v];
    std::pair<std::size_t, std::size_t> score{0, 0};
    for (std::size_t c = 1; c < counts.size(); ++c) {
      score.first += counts[c] > 0;
      score.second += counts[c];
    }
    if (score > best_score) {
      best_score = score;
      best = z;
    }
  }
  return best;
}

std::vector<Slice> slices_of(const std::vector<EvalCase>& cases) {
  std::vector<Slice> out;
  for (const auto& c : cases)
    for (std::size_t z = 0; z < c.image.extents.depth; ++z)
      out.push_back(make_slice(c.image, c.labels, z));
  return out;
}

}  // namespace transunet
