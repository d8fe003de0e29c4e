#include <charconv>
#include <cmath>
#include <sstream>

#include "transunet/training.hpp"

namespace transunet {

namespace {

std::size_t parse_size(AblationAxis axis, const std::string& text) {
  std::size_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size() || text.empty()) {
    throw ConfigError("ablation." + to_string(axis) + ": '" + text + "' is not an integer");
  }
  return v;
}

std::vector<EvalCase> resized(const std::vector<EvalCase>& cases, std::size_t h, std::size_t w) {
  std::vector<EvalCase> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    out.push_back(c.image.extents.height == h && c.image.extents.width == w ? c
                                                                            : resize_case(c, h, w));
  }
  return out;
}

}  // namespace

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Skips: return "skips";
    case AblationAxis::Patch: return "patch";
    case AblationAxis::Resolution: return "resolution";
    case AblationAxis::Scale: return "scale";
  }
  return "skips";
}

AblationAxis parse_ablation_axis(const std::string& text) {
  if (text == "skips") return AblationAxis::Skips;
  if (text == "patch") return AblationAxis::Patch;
  if (text == "resolution") return AblationAxis::Resolution;
  if (text == "scale") return AblationAxis::Scale;
  throw ConfigError("ablation.axis: unknown axis '" + text +
                    "' (expected skips, patch, resolution or scale)");
}

std::vector<std::string> default_axis_values(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Skips: return {"0", "1", "3"};
    case AblationAxis::Patch: return {"8", "16", "32"};
    case AblationAxis::Resolution: return {"64", "224"};
    case AblationAxis::Scale: return {"tiny", "base"};
  }
  return {};
}

ModelConfig ablation_config(const ModelConfig& base, AblationAxis axis, const std::string& value) {
  ModelConfig c = base;
  switch (axis) {
    case AblationAxis::Skips:
      c.skip_count = parse_size(axis, value);
      break;
    case AblationAxis::Patch:
      c.encoder = EncoderKind::ViT;
      c.decoder = DecoderKind::Cup;
      c.skip_count = 0;
      c.patch_size = parse_size(axis, value);
      break;
    case AblationAxis::Resolution:
      c.height = c.width = parse_size(axis, value);
      break;
    case AblationAxis::Scale: {
      const auto preset = parse_scale_preset(value);
      if (preset == ScalePreset::Custom) {
        throw ConfigError("ablation.scale: a named preset is required");
      }
      c.apply_preset(preset);
      break;
    }
  }
  c.validate();
  return c;
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  out << to_string(axis) << ",seq_length,parameters,mean_dsc,mean_hd_mm,final_loss\n";
  out.precision(6);
  for (const auto& r : rows) {
    out << r.value << ',' << r.seq_length << ',' << r.parameters << ',' << r.mean_dsc << ','
        << r.mean_hd_mm << ',' << r.final_loss << '\n';
  }
  return out.str();
}

AblationTable run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                           const ModelConfig& base, const TrainConfig& train_config,
                           const std::vector<EvalCase>& train_cases,
                           const std::vector<EvalCase>& val_cases,
                           const std::function<void(const AblationRow&)>& on_row) {
  train_config.validate();
  if (train_cases.empty()) throw DataError("ablation needs at least one training case");
  const auto axis_values = values.empty() ? default_axis_values(axis) : values;
  std::vector<ModelConfig> configs;
  for (const auto& v : axis_values) configs.push_back(ablation_config(base, axis, v));

  AblationTable table{axis, {}};
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& cfg = configs[i];
    const auto train_set = resized(train_cases, cfg.height, cfg.width);
    const auto val_set = resized(val_cases, cfg.height, cfg.width);

    TransUNet<float> model(cfg, train_config.seed);
    TrainConfig tc = train_config;
    tc.eval_every = 0;
    const auto result = train(model, tc, slices_of(train_set));

    AblationRow row;
    row.value = axis_values[i];
    row.seq_length = cfg.tokens();
    row.parameters = model.parameter_count();
    row.final_loss = result.final_loss();
    if (!val_set.empty()) {
      const auto report = evaluate_case_set(val_set, make_predictor(model), cfg.classes);
      row.mean_dsc = report.mean_dsc;
      row.mean_hd_mm = report.mean_hd_mm;
    }
    table.rows.push_back(row);
    if (on_row) on_row(row);
  }
  return table;
}

}  // namespace transunet
