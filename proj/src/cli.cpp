#include "transunet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace transunet {

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool out_required) {
  cmd->add_option("--config", o.config_path, "Settings file (key = value lines)");
  cmd->add_option("--set", o.overrides, "Override one setting, KEY=VALUE (repeatable)");
  cmd->add_option("--seed", o.seed, "Shorthand for --set seed=N");
  auto* out = cmd->add_option("--out", o.out_dir, "Output directory");
  if (out_required) out->required();
}

RunConfig resolve(const CommonOptions& o) {
  Settings settings;
  if (!o.config_path.empty()) settings = read_settings(o.config_path);
  for (const auto& a : o.overrides) apply_override(settings, a);
  if (o.seed) settings["seed"] = std::to_string(*o.seed);
  auto rc = RunConfig::from_settings(settings);
  rc.validate();
  return rc;
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

// Resolved settings go to disk before any work starts.
void record_run(const fs::path& dir, const RunConfig& rc, const std::vector<std::string>& args) {
  write_text(dir / "config.txt", rc.serialize());
  std::string line = "transunet";
  for (const auto& a : args) line += " " + a;
  write_text(dir / "command.txt", line + "\n");
}

std::vector<EvalCase> fit_to_model(std::vector<EvalCase> cases, const ModelConfig& m) {
  for (auto& c : cases) {
    if (c.labels.classes != m.classes) {
      throw DataError("case " + c.id + " has " + std::to_string(c.labels.classes) +
                      " classes, model expects " + std::to_string(m.classes));
    }
    if (c.image.extents.height != m.height || c.image.extents.width != m.width) {
      c = resize_case(c, m.height, m.width);
    }
  }
  return cases;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, ',');)
    if (!part.empty()) out.push_back(part);
  return out;
}

int cmd_generate_data(const CommonOptions& o, const std::vector<std::string>& args,
                      std::ostream& out) {
  const auto rc = resolve(o);
  const auto dir = prepare_out(o.out_dir);
  record_run(dir, rc, args);
  const auto manifest = generate_dataset(rc.data, dir);
  out << "wrote " << manifest.entries.size() << " cases to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const CommonOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const auto rc = resolve(o);
  const auto dir = prepare_out(o.out_dir);
  record_run(dir, rc, args);
  const auto data = load_run_data(rc);
  if (data.train.empty()) throw DataError("no training cases");

  TransUNet<float> model(rc.model, rc.seed);
  std::ofstream curve(dir / "loss.csv");
  if (!curve) throw IoError("cannot write " + (dir / "loss.csv").string());
  curve << "iteration,loss,val_dsc\n";
  curve.precision(9);
  const std::size_t every = std::max<std::size_t>(1, rc.train.iterations / 20);
  const auto result = train(model, rc.train, slices_of(data.train), data.val, [&](const TrainRecord& r) {
    curve << r.iteration << ',' << r.loss << ',';
    if (r.val_dsc) curve << *r.val_dsc;
    curve << '\n' << std::flush;
    if (r.iteration % every == 0 || r.iteration == rc.train.iterations) {
      out << "iter " << r.iteration << " loss " << r.loss;
      if (r.val_dsc) out << " val_dsc " << *r.val_dsc;
      out << '\n';
    }
  });
  save_checkpoint(dir / "model.ckpt", model, result.records.size(), rc.seed);
  if (!data.val.empty()) {
    const auto report = evaluate_case_set(data.val, make_predictor(model), rc.model.classes);
    write_text(dir / "val_metrics.json", report.to_json().dump(2) + "\n");
    out << report.to_table();
  }
  out << "checkpoint: " << (dir / "model.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data_dir,
             const std::string& split, const std::vector<std::string>& args, std::ostream& out) {
  const auto model = load_model(checkpoint);
  const auto report = evaluate_directory(data_dir, split, make_predictor(model), model.config());
  out << report.to_table();
  if (!o.out_dir.empty()) {
    const auto dir = prepare_out(o.out_dir);
    std::string line = "transunet";
    for (const auto& a : args) line += " " + a;
    write_text(dir / "command.txt", line + "\n");
    write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  }
  return kExitOk;
}

int cmd_ablate(const CommonOptions& o, const std::string& axis_name, const std::string& values,
               const std::vector<std::string>& args, std::ostream& out) {
  const auto rc = resolve(o);
  const auto axis = parse_ablation_axis(axis_name);
  const auto list = split_list(values);
  // Reject bad axis values before writing anything.
  for (const auto& v : list.empty() ? default_axis_values(axis) : list)
    ablation_config(rc.model, axis, v);
  const auto dir = prepare_out(o.out_dir);
  record_run(dir, rc, args);
  const auto data = load_run_data(rc);
  const fs::path table_path = dir / ("ablation_" + to_string(axis) + ".csv");
  std::ofstream table_file(table_path);
  if (!table_file) throw IoError("cannot write " + table_path.string());
  const auto table = run_ablation(axis, list, rc.model, rc.train, data.train, data.val,
                                  [&](const AblationRow& r) {
                                    out << to_string(axis) << "=" << r.value
                                        << " mean_dsc " << r.mean_dsc << '\n';
                                  });
  table_file << table.to_text();
  out << table.to_text();
  return kExitOk;
}

int cmd_predict(const CommonOptions& o, const std::string& checkpoint, const std::string& volume,
                bool overlay, const std::vector<std::string>& args, std::ostream& out) {
  const auto model = load_model(checkpoint);
  const auto image = load_intensity_volume(volume);
  const auto dir = prepare_out(o.out_dir);
  std::string line = "transunet";
  for (const auto& a : args) line += " " + a;
  write_text(dir / "command.txt", line + "\n");

  const auto& mc = model.config();
  const auto& e = image.extents;
  LabelVolume pred(e, image.spacing, mc.classes);
  const auto predictor = make_predictor(model);
  if (overlay) prepare_out((dir / "overlay").string());
  for (std::size_t z = 0; z < e.depth; ++z) {
    Slice s = make_slice(image, pred, z);
    const auto input = resize_slice(s, mc.height, mc.width);
    const auto logits = predictor(input.image);
    Slice labelled{input.image, std::vector<std::uint8_t>(mc.height * mc.width)};
    const std::size_t n = mc.height * mc.width;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < mc.classes; ++c)
        if (logits[c * n + i] > logits[best * n + i]) best = c;
      labelled.labels[i] = static_cast<std::uint8_t>(best);
    }
    const auto back = resize_slice(labelled, e.height, e.width);
    std::copy(back.labels.begin(), back.labels.end(),
              pred.voxels.begin() + static_cast<std::ptrdiff_t>(z * e.slice_voxels()));
    if (overlay) {
      char name[32];
      std::snprintf(name, sizeof name, "slice_%03zu.ppm", z);
      write_overlay_ppm(dir / "overlay" / name, s.image, back.labels);
    }
  }
  save_volume(dir / "prediction.tuv", pred);
  out << "wrote " << (dir / "prediction.tuv").string() << '\n';
  return kExitOk;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  return kExitRuntime;
}

RunData load_run_data(const RunConfig& config) {
  RunData d;
  if (!config.data_dir.empty()) {
    d.train = load_cases(config.data_dir, Split::Train);
    d.val = load_cases(config.data_dir, Split::Val);
  } else {
    auto cases = generate_cases(config.data);
    std::vector<std::string> ids;
    for (const auto& c : cases) ids.push_back(c.id);
    const auto split =
        make_split(ids, config.data.train_fraction, config.data.val_fraction, config.data.seed);
    for (auto& c : cases) {
      if (std::find(split.train.begin(), split.train.end(), c.id) != split.train.end()) {
        d.train.push_back(std::move(c));
      } else if (std::find(split.val.begin(), split.val.end(), c.id) != split.val.end()) {
        d.val.push_back(std::move(c));
      }
    }
  }
  d.train = fit_to_model(std::move(d.train), config.model);
  d.val = fit_to_model(std::move(d.val), config.model);
  return d;
}

MetricReport evaluate_directory(const fs::path& data_dir, const std::string& split,
                                const SlicePredictor& predictor, const ModelConfig& model) {
  std::optional<Split> which;
  if (split != "all") which = parse_split(split);
  const auto cases = fit_to_model(load_cases(data_dir, which), model);
  if (cases.empty()) throw DataError("no cases in split '" + split + "' of " + data_dir.string());
  return evaluate_case_set(cases, predictor, model.classes);
}

void write_overlay_ppm(const fs::path& path, const Tensor<float>& image,
                       const std::vector<std::uint8_t>& labels) {
  if (image.rank() != 3 || labels.size() != image.size(1) * image.size(2)) {
    throw DimensionError("overlay needs a C x H x W image and H x W labels");
  }
  static constexpr std::uint8_t palette[][3] = {
      {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
  const std::size_t h = image.size(1), w = image.size(2), n = h * w;
  const auto d = image.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
  const float range = *hi - *lo > 0 ? *hi - *lo : 1.0f;
  std::string pixels(n * 3, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    const float grey = 255.0f * (d[i] - *lo) / range;
    for (int ch = 0; ch < 3; ++ch) {
      float v = grey;
      if (labels[i] > 0) v = 0.5f * grey + 0.5f * palette[(labels[i] - 1) % 8][ch];
      pixels[i * 3 + ch] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v)));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P6\n" << w << ' ' << h << "\n255\n";
  f.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TransUNet segmentation toolkit", "transunet"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, ablate_opts, predict_opts;
  auto* gen = app.add_subcommand("generate-data", "Write a synthetic phantom dataset");
  add_common(gen, gen_opts, true);

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(tr, train_opts, true);

  std::string eval_ckpt, eval_data, eval_split = "val";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint slice by slice");
  add_common(ev, eval_opts, false);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--split", eval_split, "train, val, test or all");

  std::string axis, values;
  auto* ab = app.add_subcommand("ablate", "Train one model per value of an ablation axis");
  add_common(ab, ablate_opts, true);
  ab->add_option("--axis", axis, "skips, patch, resolution or scale")->required();
  ab->add_option("--values", values, "Comma-separated axis values (default: the full axis)");

  std::string pred_ckpt, pred_volume;
  bool overlay = false;
  auto* pr = app.add_subcommand("predict", "Segment one intensity volume");
  add_common(pr, predict_opts, true);
  pr->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  pr->add_option("--volume", pred_volume, "Intensity volume file")->required();
  pr->add_flag("--overlay", overlay, "Also write per-slice PPM overlays");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate_data(gen_opts, args, out);
    if (*tr) return cmd_train(train_opts, args, out);
    if (*ev) return cmd_eval(eval_opts, eval_ckpt, eval_data, eval_split, args, out);
    if (*ab) return cmd_ablate(ablate_opts, axis, values, args, out);
    if (*pr) return cmd_predict(predict_opts, pred_ckpt, pred_volume, overlay, args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitConfig;
}

}  // namespace transunet
