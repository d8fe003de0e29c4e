#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "transunet/metrics.hpp"
#include "transunet/volume.hpp"

namespace transunet {

// ---------------------------------------------------------------------------
// Synthetic phantoms

enum class ShapeFamily { Ellipsoid, Box };

struct StructureSpec {
  ShapeFamily shape = ShapeFamily::Ellipsoid;
  // Radius (half-size for boxes) per axis as a fraction of that axis'
  // extent, drawn uniformly from [size_min, size_max] for each case.
  double size_min = 0.1;
  double size_max = 0.2;
  double intensity_mean = 1.0;
  // Case-to-case jitter of the structure's mean intensity.
  double intensity_sigma = 0.0;
  // Fixed centre (z, y, x) in voxel coordinates; random when unset.
  std::optional<std::array<double, 3>> center;
};

struct PhantomSpec {
  Extents extents{8, 64, 64};
  Spacing spacing{1.0, 1.0, 2.5};
  std::vector<StructureSpec> structures;
  double background_mean = 0.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  std::size_t classes() const { return structures.size() + 1; }
  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Three structures of decreasing size and distinct contrast.
PhantomSpec default_phantom_spec(Extents extents = {8, 64, 64}, std::uint64_t seed = 0);

struct Phantom {
  IntensityVolume image;
  LabelVolume labels;
};

// Deterministic in spec.seed. Structures are drawn in label order, later
// labels overwriting earlier ones; placements are redrawn until every
// structure keeps at least one voxel.
Phantom generate_phantom(const PhantomSpec& spec);

// ---------------------------------------------------------------------------
// 2D slices and augmentation

struct Slice {
  Tensor<float> image;                // C x H x W
  std::vector<std::uint8_t> labels;   // H x W
};

Slice make_slice(const Phantom& phantom, std::size_t z);
Slice make_slice(const IntensityVolume& image, const LabelVolume& labels, std::size_t z);

// Slice with the most distinct foreground labels, ties broken by foreground
// area, then by the lower index.
std::size_t richest_slice(const LabelVolume& labels);

struct AugmentConfig {
  double flip_probability = 0.5;
  double max_rotation_deg = 20.0;
};

struct AugmentParams {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double angle_deg = 0.0;
};

AugmentParams draw_augment_params(std::uint64_t seed, const AugmentConfig& config = {});

// Flips, then rotation about the slice centre. Intensities are sampled
// bilinearly, labels by nearest neighbour; both clamp to the border.
Slice apply_augment(const Slice& slice, const AugmentParams& params);
Slice augment(const Slice& slice, std::uint64_t seed, const AugmentConfig& config = {});

// Resamples a slice to new extents (bilinear intensities, nearest labels).
Slice resize_slice(const Slice& slice, std::size_t height, std::size_t width);
EvalCase resize_case(const EvalCase& c, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Volume files: text header then little-endian raw payload.
//
//   TUVOL1
//   extents <D> <H> <W>
//   spacing <sx> <sy> <sz>
//   type <f32|u8>
//   classes <K>
//   payload
//   <raw bytes>

void save_volume(const std::filesystem::path& path, const IntensityVolume& volume);
void save_volume(const std::filesystem::path& path, const LabelVolume& volume);
IntensityVolume load_intensity_volume(const std::filesystem::path& path);
LabelVolume load_label_volume(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(const std::string& text);

struct DatasetSplit {
  std::vector<std::string> train, val, test;
};

// Deterministic shuffle of `ids` into disjoint train/val/test lists.
DatasetSplit make_split(const std::vector<std::string>& ids, double train_fraction,
                        double val_fraction, std::uint64_t seed);

struct DatasetEntry {
  std::string id;
  Split split = Split::Train;
  std::string image_file;
  std::string label_file;
};

// manifest.txt in the dataset directory:
//   TUDATA1
//   case <id> <split> <image file> <label file>
struct DatasetManifest {
  std::vector<DatasetEntry> entries;

  void save(const std::filesystem::path& dir) const;
  static DatasetManifest load(const std::filesystem::path& dir);
};

struct DatasetSpec {
  PhantomSpec phantom;  // template; per-case seeds derive from `seed`
  std::size_t cases = 10;
  double train_fraction = 0.7;
  double val_fraction = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string case_id(std::size_t index);

// Per-case phantoms, in memory.
std::vector<EvalCase> generate_cases(const DatasetSpec& spec);

// Writes one image + one label volume per case and the manifest.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

std::vector<EvalCase> load_cases(const std::filesystem::path& dir, std::optional<Split> split);

// All axial slices of the given cases.
std::vector<Slice> slices_of(const std::vector<EvalCase>& cases);

}  // namespace transunet
