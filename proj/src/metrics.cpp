#include "transunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace transunet {

namespace {

void require_same_grid(const LabelVolume& a, const LabelVolume& b) {
  if (a.extents != b.extents || a.voxels.size() != b.voxels.size()) {
    throw ContractError("label volumes have different grids (" +
                        std::to_string(a.extents.depth) + "x" + std::to_string(a.extents.height) +
                        "x" + std::to_string(a.extents.width) + " vs " +
                        std::to_string(b.extents.depth) + "x" + std::to_string(b.extents.height) +
                        "x" + std::to_string(b.extents.width) + ")");
  }
}

struct Point {
  double x, y, z;
};

std::vector<Point> boundary_points(const LabelVolume& v, std::uint8_t label,
                                   const Spacing& spacing) {
  const auto& e = v.extents;
  std::vector<Point> out;
  auto inside = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(e.depth) ||
        y >= static_cast<std::ptrdiff_t>(e.height) || x >= static_cast<std::ptrdiff_t>(e.width)) {
      return false;
    }
    return v.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y),
                static_cast<std::size_t>(x)) == label;
  };
  for (std::size_t z = 0; z < e.depth; ++z)
    for (std::size_t y = 0; y < e.height; ++y)
      for (std::size_t x = 0; x < e.width; ++x) {
        if (v.at(z, y, x) != label) continue;
        const auto zi = static_cast<std::ptrdiff_t>(z), yi = static_cast<std::ptrdiff_t>(y),
                   xi = static_cast<std::ptrdiff_t>(x);
        const bool interior = inside(zi - 1, yi, xi) && inside(zi + 1, yi, xi) &&
                              inside(zi, yi - 1, xi) && inside(zi, yi + 1, xi) &&
                              inside(zi, yi, xi - 1) && inside(zi, yi, xi + 1);
        if (!interior) {
          out.push_back({static_cast<double>(x) * spacing.x, static_cast<double>(y) * spacing.y,
                         static_cast<double>(z) * spacing.z});
        }
      }
  return out;
}

double squared(const Point& a, const Point& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

// max over a of min over b, with the usual early break once a point is
// known not to raise the running maximum.
double directed_squared(const std::vector<Point>& from, const std::vector<Point>& to) {
  double worst = 0.0;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      best = std::min(best, squared(a, b));
      if (best <= worst) break;
    }
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

double dice(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id) {
  require_same_grid(pred, gt);
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
    const bool in_a = pred.voxels[i] == class_id;
    const bool in_b = gt.voxels[i] == class_id;
    a += in_a;
    b += in_b;
    both += in_a && in_b;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double grid_diagonal_mm(const Extents& e, const Spacing& s) {
  const double dx = static_cast<double>(e.width) * s.x;
  const double dy = static_cast<double>(e.height) * s.y;
  const double dz = static_cast<double>(e.depth) * s.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double hausdorff(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id,
                 const Spacing& spacing) {
  require_same_grid(pred, gt);
  const auto a = boundary_points(pred, class_id, spacing);
  const auto b = boundary_points(gt, class_id, spacing);
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return grid_diagonal_mm(gt.extents, spacing);
  return std::sqrt(std::max(directed_squared(a, b), directed_squared(b, a)));
}

double hausdorff(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id) {
  return hausdorff(pred, gt, class_id, gt.spacing);
}

template <typename T>
LabelVolume stack_slices(const std::vector<Tensor<T>>& slice_logits, const Spacing& spacing) {
  if (slice_logits.empty()) throw ContractError("stack_slices: no slices");
  const auto& first = slice_logits.front().shape();
  if (first.size() != 3) throw DimensionError("stack_slices: expected K x H x W logits");
  const std::size_t k = first[0], h = first[1], w = first[2];
  LabelVolume out({slice_logits.size(), h, w}, spacing, k);
  const std::size_t plane = h * w;
  for (std::size_t z = 0; z < slice_logits.size(); ++z) {
    const auto& logits = slice_logits[z];
    if (logits.shape() != first) {
      throw DimensionError("stack_slices: slice " + std::to_string(z) + " has shape " +
                           shape_string(logits.shape()) + ", expected " + shape_string(first));
    }
    const auto d = logits.data();
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (d[c * plane + p] > d[best * plane + p]) best = c;
      out.voxels[z * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_grid(pred, gt);
  CaseMetrics m;
  m.dsc.assign(gt.classes, 1.0);
  m.hd_mm.assign(gt.classes, std::nullopt);
  for (std::size_t c = 1; c < gt.classes; ++c) {
    const auto label = static_cast<std::uint8_t>(c);
    m.dsc[c] = dice(pred, gt, label);
    const bool in_pred = std::find(pred.voxels.begin(), pred.voxels.end(), label) !=
                         pred.voxels.end();
    const bool in_gt = std::find(gt.voxels.begin(), gt.voxels.end(), label) != gt.voxels.end();
    if (in_pred || in_gt) m.hd_mm[c] = hausdorff(pred, gt, label);
  }
  return m;
}

MetricReport aggregate(const std::vector<CaseMetrics>& cases, std::size_t classes) {
  MetricReport report;
  report.case_count = cases.size();
  if (cases.empty() || classes < 2) return report;
  double dsc_total = 0.0, hd_total = 0.0;
  std::size_t hd_classes = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    ClassMetrics cm;
    cm.class_id = c;
    double hd_sum = 0.0;
    for (const auto& m : cases) {
      cm.dsc += m.dsc.at(c);
      if (m.hd_mm.at(c)) {
        hd_sum += *m.hd_mm[c];
        ++cm.hd_cases;
      }
    }
    cm.dsc /= static_cast<double>(cases.size());
    if (cm.hd_cases) {
      cm.hd_mm = hd_sum / static_cast<double>(cm.hd_cases);
      hd_total += cm.hd_mm;
      ++hd_classes;
    }
    dsc_total += cm.dsc;
    report.classes.push_back(cm);
  }
  report.mean_dsc = dsc_total / static_cast<double>(classes - 1);
  report.mean_hd_mm = hd_classes ? hd_total / static_cast<double>(hd_classes) : 0.0;
  return report;
}

std::string MetricReport::to_table() const {
  std::ostringstream out;
  out << std::fixed;
  out << "class    DSC(%)    HD(mm)\n";
  for (const auto& c : classes) {
    out << std::setw(5) << c.class_id << std::setw(10) << std::setprecision(2) << 100.0 * c.dsc
        << std::setw(10) << std::setprecision(2) << c.hd_mm << '\n';
  }
  out << " mean" << std::setw(10) << std::setprecision(2) << 100.0 * mean_dsc << std::setw(10)
      << std::setprecision(2) << mean_hd_mm << '\n';
  out << "cases: " << case_count << '\n';
  return out.str();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : classes) {
    j["classes"].push_back(
        {{"class_id", c.class_id}, {"dsc", c.dsc}, {"hd_mm", c.hd_mm}, {"hd_cases", c.hd_cases}});
  }
  j["mean_dsc"] = mean_dsc;
  j["mean_hd_mm"] = mean_hd_mm;
  j["case_count"] = case_count;
  return j;
}

LabelVolume predict_volume(const IntensityVolume& image, const SlicePredictor& predictor) {
  std::vector<Tensor<float>> logits;
  logits.reserve(image.extents.depth);
  for (std::size_t z = 0; z < image.extents.depth; ++z) {
    logits.push_back(predictor(slice_image(image, z)));
  }
  return stack_slices(logits, image.spacing);
}

MetricReport evaluate_case_set(const std::vector<EvalCase>& cases, const SlicePredictor& predictor,
                               std::size_t classes) {
  std::vector<CaseMetrics> per_case;
  per_case.reserve(cases.size());
  for (const auto& c : cases) {
    auto pred = predict_volume(c.image, predictor);
    pred.spacing = c.labels.spacing;
    if (pred.classes != c.labels.classes) {
      throw ContractError("predictor emits " + std::to_string(pred.classes) +
                          " classes, case " + c.id + " has " + std::to_string(c.labels.classes));
    }
    per_case.push_back(evaluate_case(pred, c.labels));
  }
  return aggregate(per_case, classes);
}

template LabelVolume stack_slices<float>(const std::vector<Tensor<float>>&, const Spacing&);
template LabelVolume stack_slices<double>(const std::vector<Tensor<double>>&, const Spacing&);

}  // namespace transunet
