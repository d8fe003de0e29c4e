#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "transunet/tensor.hpp"

namespace transunet {

// Physical voxel size in mm along the width (x), height (y) and slice (z)
// axes.
struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  bool operator==(const Spacing&) const = default;
};

struct Extents {
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t voxels() const { return depth * height * width; }
  std::size_t slice_voxels() const { return height * width; }
  bool operator==(const Extents&) const = default;
};

// Integer label grid, D slices of H x W. Labels lie in [0, classes).
struct LabelVolume {
  Extents extents;
  Spacing spacing;
  std::size_t classes = 2;
  std::vector<std::uint8_t> voxels;

  LabelVolume() = default;
  LabelVolume(Extents e, Spacing s, std::size_t k)
      : extents(e), spacing(s), classes(k), voxels(e.voxels(), 0) {}

  std::uint8_t& at(std::size_t z, std::size_t y, std::size_t x) {
    return voxels[(z * extents.height + y) * extents.width + x];
  }
  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const {
    return voxels[(z * extents.height + y) * extents.width + x];
  }

  // Throws ValidationError on a broken invariant.
  void validate() const;
  bool operator==(const LabelVolume&) const = default;
};

struct IntensityVolume {
  Extents extents;
  Spacing spacing;
  std::vector<float> voxels;

  IntensityVolume() = default;
  IntensityVolume(Extents e, Spacing s) : extents(e), spacing(s), voxels(e.voxels(), 0.0f) {}

  float& at(std::size_t z, std::size_t y, std::size_t x) {
    return voxels[(z * extents.height + y) * extents.width + x];
  }
  float at(std::size_t z, std::size_t y, std::size_t x) const {
    return voxels[(z * extents.height + y) * extents.width + x];
  }

  void validate() const;
  bool operator==(const IntensityVolume&) const = default;
};

// Slice z as a 1 x H x W tensor.
Tensor<float> slice_image(const IntensityVolume& volume, std::size_t z);
std::vector<std::uint8_t> slice_labels(const LabelVolume& volume, std::size_t z);

}  // namespace transunet
