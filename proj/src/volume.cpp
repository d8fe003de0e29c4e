#include "transunet/volume.hpp"

#include <cmath>
#include <string>

namespace transunet {

namespace {

void validate_geometry(const Extents& e, const Spacing& s, std::size_t stored) {
  if (e.voxels() == 0) throw ValidationError("volume has an empty extent");
  if (!(s.x > 0.0) || !(s.y > 0.0) || !(s.z > 0.0) || !std::isfinite(s.x) ||
      !std::isfinite(s.y) || !std::isfinite(s.z)) {
    throw ValidationError("voxel spacing must be strictly positive");
  }
  if (stored != e.voxels()) {
    throw ValidationError("volume stores " + std::to_string(stored) + " voxels, extents need " +
                          std::to_string(e.voxels()));
  }
}

}  // namespace

void LabelVolume::validate() const {
  validate_geometry(extents, spacing, voxels.size());
  if (classes == 0 || classes > 256) throw ValidationError("class count out of range");
  for (auto v : voxels) {
    if (v >= classes) {
      throw ValidationError("label " + std::to_string(v) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }
}

void IntensityVolume::validate() const {
  validate_geometry(extents, spacing, voxels.size());
}

Tensor<float> slice_image(const IntensityVolume& volume, std::size_t z) {
  if (z >= volume.extents.depth) throw ContractError("slice index out of range");
  const auto n = volume.extents.slice_voxels();
  const auto first = volume.voxels.begin() + static_cast<std::ptrdiff_t>(z * n);
  return Tensor<float>({1, volume.extents.height, volume.extents.width},
                       std::vector<float>(first, first + static_cast<std::ptrdiff_t>(n)));
}

std::vector<std::uint8_t> slice_labels(const LabelVolume& volume, std::size_t z) {
  if (z >= volume.extents.depth) throw ContractError("slice index out of range");
  const auto n = volume.extents.slice_voxels();
  const auto first = volume.voxels.begin() + static_cast<std::ptrdiff_t>(z * n);
  return {first, first + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace transunet
