#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "transunet/volume.hpp"

namespace transunet {

// 2|A n B| / (|A| + |B|) over the masks of `class_id`; 1.0 when both are
// empty. Throws ContractError when the grids differ.
double dice(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id);

// Symmetric max Hausdorff distance in mm between the boundaries of the two
// masks. Boundary voxels have at least one face neighbor outside the mask
// (voxels on the grid edge count as boundary). Exactly one empty mask
// yields the grid diagonal in mm; two empty masks yield 0.
double hausdorff(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id,
                 const Spacing& spacing);
double hausdorff(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id);

// Physical diagonal of the grid, the empty-mask penalty.
double grid_diagonal_mm(const Extents& extents, const Spacing& spacing);

// Per-pixel argmax over K x H x W logits (ties go to the lower class),
// stacked in order into a depth = slices.size() volume.
template <typename T>
LabelVolume stack_slices(const std::vector<Tensor<T>>& slice_logits,
                         const Spacing& spacing = {});

struct CaseMetrics {
  // Indexed by class id; entry 0 (background) is unused.
  std::vector<double> dsc;
  // nullopt when the class is absent from both prediction and ground truth.
  std::vector<std::optional<double>> hd_mm;
};

// Foreground classes 1..K-1 of one case.
CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& gt);

struct ClassMetrics {
  std::size_t class_id = 0;
  double dsc = 0.0;
  double hd_mm = 0.0;
  std::size_t hd_cases = 0;  // cases contributing to hd_mm
};

struct MetricReport {
  std::vector<ClassMetrics> classes;
  double mean_dsc = 0.0;
  double mean_hd_mm = 0.0;
  std::size_t case_count = 0;

  std::string to_table() const;
  nlohmann::json to_json() const;
};

// Averages per-class metrics over cases. A class absent from both masks
// contributes DSC 1.0 but is skipped in that case's HD average.
MetricReport aggregate(const std::vector<CaseMetrics>& cases, std::size_t classes);

struct EvalCase {
  std::string id;
  IntensityVolume image;
  LabelVolume labels;
};

// Maps one 1 x H x W slice to K x H x W logits.
using SlicePredictor = std::function<Tensor<float>(const Tensor<float>& slice)>;

// Slice-by-slice inference, 3D reassembly, then per-class metrics.
LabelVolume predict_volume(const IntensityVolume& image, const SlicePredictor& predictor);
MetricReport evaluate_case_set(const std::vector<EvalCase>& cases, const SlicePredictor& predictor,
                               std::size_t classes);

}  // namespace transunet
