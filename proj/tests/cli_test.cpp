#include <doctest.h>

#include <sstream>

#include "support.hpp"
#include "transunet/cli.hpp"

using namespace transunet;
using namespace transunet::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::size_t count_files(const fs::path& dir, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    n += e.path().string().ends_with(suffix);
  return n;
}

// Tiny dataset and model shared by the command tests.
const std::vector<std::string> kSmall{
    "--set", "data.cases=4",       "--set", "data.depth=8",       "--set", "data.height=32",
    "--set", "data.width=32",      "--set", "model.height=32",    "--set", "model.width=32",
    "--set", "train.iterations=2", "--set", "train.batch_size=1", "--set", "data.train_fraction=0.5",
    "--set", "data.val_fraction=0.25"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("settings files") {
  const auto s = parse_settings("# comment\nmodel.patch_size = 16\n\ntrain.lr=0.05  # inline\nseed = 3\n");
  CHECK(s.at("model.patch_size") == "16");
  CHECK(s.at("train.lr") == "0.05");
  CHECK(s.at("seed") == "3");
  CHECK_THROWS_AS(parse_settings("model.patch_size 16\n"), ConfigError);

  auto o = s;
  apply_override(o, "train.lr=0.1");
  CHECK(o.at("train.lr") == "0.1");
  CHECK_THROWS_AS(apply_override(o, "novalue"), ConfigError);

  const auto rc = RunConfig::from_settings(s);
  CHECK(rc.model.patch_size == 16);
  CHECK(rc.train.lr == 0.05);
  CHECK(rc.seed == 3);
  // The serialized form reads back to the same resolved config.
  const auto text = rc.serialize();
  CHECK(RunConfig::from_settings(parse_settings(text)).serialize() == text);
  CHECK_THROWS_AS(RunConfig::from_settings({{"model.depth", "3"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_settings({{"train.seed", "3"}}), ConfigError);
}

TEST_CASE("generate-data") {
  TempDir dir("cli_gen");
  const std::vector<std::string> spec{"--set", "data.cases=10", "--set", "data.depth=8",
                                      "--set", "data.height=24", "--set", "data.width=24"};
  auto r = cli(with({"generate-data", "--out", (dir / "a").string()}, spec));
  REQUIRE(r.code == 0);
  CHECK(count_files(dir / "a", "_image.tuv") == 10);
  CHECK(count_files(dir / "a", "_label.tuv") == 10);
  CHECK(count_files(dir / "a", "manifest.txt") == 1);
  CHECK(fs::exists(dir / "a" / "config.txt"));

  // Same spec again, into the same and into a fresh directory.
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(dir / "a"))
    first[e.path().filename().string()] = read_bytes(e.path());
  REQUIRE(cli(with({"generate-data", "--out", (dir / "a").string()}, spec)).code == 0);
  REQUIRE(cli(with({"generate-data", "--out", (dir / "b").string()}, spec)).code == 0);
  for (const auto& [name, bytes] : first) {
    INFO(name);
    CHECK(read_bytes(dir / "a" / name) == bytes);
    if (name != "command.txt") CHECK(read_bytes(dir / "b" / name) == bytes);
  }

  r = cli({"generate-data", "--out", (dir / "c").string(), "--set", "data.noise=-1"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("noise") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "c"));
}

TEST_CASE("exit codes") {
  TempDir dir("cli_exit");
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"frobnicate"}).code == kExitConfig);
  CHECK(cli({"train", "--out", dir.path().string(), "--set", "train.momentum=1.5"}).code ==
        kExitConfig);
  CHECK(cli({"train", "--out", dir.path().string(), "--config", (dir / "none.cfg").string()})
            .code == kExitData);

  const auto missing = cli({"eval", "--checkpoint", (dir / "none.ckpt").string(), "--data",
                            dir.path().string()});
  CHECK(missing.code == kExitData);
  CHECK(missing.err.find("none.ckpt") != std::string::npos);

  // An exploding learning rate drives the loss to infinity or NaN.
  const auto blowup = cli(with(with({"train", "--out", (dir / "nan").string()}, kSmall),
                               {"--set", "train.lr=1e30", "--set", "train.iterations=5"}));
  CHECK(blowup.code == kExitRuntime);
  CHECK(blowup.err.find("iteration") != std::string::npos);

  CHECK(exit_code_for(NumericError("x")) == kExitRuntime);
  CHECK(exit_code_for(CompatibilityError("x")) == kExitConfig);
  CHECK(exit_code_for(IntegrityError("x")) == kExitData);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitRuntime);
}

TEST_CASE("train, eval and predict") {
  TempDir dir("cli_run");
  REQUIRE(cli(with({"generate-data", "--out", (dir / "data").string()}, kSmall)).code == 0);
  const auto before = read_bytes(dir / "data" / "case0000_image.tuv");

  const auto t = cli(with({"train", "--out", (dir / "run").string(), "--set",
                           "data.dir=" + (dir / "data").string(), "--seed", "4"},
                          kSmall));
  REQUIRE(t.code == 0);
  for (const char* f : {"config.txt", "command.txt", "loss.csv", "model.ckpt", "val_metrics.json"})
    CHECK(fs::exists(dir / "run" / f));
  const auto resolved = read_settings(dir / "run" / "config.txt");
  CHECK(resolved.at("seed") == "4");
  CHECK(resolved.at("data.dir") == (dir / "data").string());
  const auto curve = read_bytes(dir / "run" / "loss.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 3);

  SUBCASE("rerunning the recorded config reproduces the checkpoint") {
    REQUIRE(cli({"train", "--out", (dir / "again").string(), "--config",
                 (dir / "run" / "config.txt").string()})
                .code == 0);
    CHECK(read_bytes(dir / "again" / "model.ckpt") == read_bytes(dir / "run" / "model.ckpt"));
  }

  SUBCASE("eval") {
    const auto e = cli({"eval", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--data",
                        (dir / "data").string(), "--split", "all", "--out",
                        (dir / "eval").string()});
    REQUIRE(e.code == 0);
    const auto report = nlohmann::json::parse(read_bytes(dir / "eval" / "report.json"));
    CHECK(report["case_count"] == 4);
    CHECK(report["mean_dsc"].get<double>() >= 0.0);
    CHECK(cli({"eval", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--data",
               (dir / "data").string(), "--split", "holdout"})
              .code == kExitConfig);
  }

  SUBCASE("eval with a perfect-copy stub") {
    // Intensity at each voxel is replaced by its label so the stub can copy it.
    TempDir copy("cli_stub");
    for (const auto& e : fs::directory_iterator(dir / "data"))
      fs::copy_file(e.path(), copy / e.path().filename());
    for (const auto& c : load_cases(copy.path(), std::nullopt)) {
      IntensityVolume img = c.image;
      for (std::size_t v = 0; v < img.voxels.size(); ++v) img.voxels[v] = c.labels.voxels[v];
      save_volume(copy / (c.id + "_image.tuv"), img);
    }
    ModelConfig model;
    model.height = model.width = 32;
    SlicePredictor stub = [&](const Tensor<float>& slice) {
      const std::size_t n = slice.size(1) * slice.size(2);
      Tensor<float> logits({model.classes, slice.size(1), slice.size(2)});
      for (std::size_t p = 0; p < n; ++p)
        logits[static_cast<std::size_t>(std::lround(slice[p])) * n + p] = 1.0f;
      return logits;
    };
    const auto report = evaluate_directory(copy.path(), "all", stub, model);
    CHECK(report.mean_dsc == 1.0);
    CHECK(report.mean_hd_mm == 0.0);
    for (const auto& c : report.classes) CHECK(c.dsc == 1.0);
  }

  SUBCASE("predict keeps the input extents") {
    // A volume of a different in-plane size than the model input.
    auto spec = default_phantom_spec({8, 40, 48}, 2);
    save_volume(dir / "odd.tuv", generate_phantom(spec).image);
    const auto odd_before = read_bytes(dir / "odd.tuv");
    const auto p = cli({"predict", "--checkpoint", (dir / "run" / "model.ckpt").string(),
                        "--volume", (dir / "odd.tuv").string(), "--out", (dir / "pred").string(),
                        "--overlay"});
    REQUIRE(p.code == 0);
    const auto pred = load_label_volume(dir / "pred" / "prediction.tuv");
    CHECK(pred.extents == Extents{8, 40, 48});
    CHECK(pred.classes == 4);
    CHECK(count_files(dir / "pred" / "overlay", ".ppm") == 8);
    const auto ppm = read_bytes(dir / "pred" / "overlay" / "slice_000.ppm");
    CHECK(ppm.rfind("P6\n48 40\n255\n", 0) == 0);
    CHECK(ppm.size() == 13 + 40 * 48 * 3);
    CHECK(read_bytes(dir / "odd.tuv") == odd_before);

    const auto bad = cli({"predict", "--checkpoint", (dir / "odd.tuv").string(), "--volume",
                          (dir / "odd.tuv").string(), "--out", (dir / "pred2").string()});
    CHECK(bad.code == kExitData);
  }

  SUBCASE("a checkpoint for another model size is a compatibility error") {
    TransUNet<float> m(variant_config("transunet"), 1);
    auto ckpt_cfg = variant_config("transunet");
    ckpt_cfg.height = ckpt_cfg.width = 32;
    TransUNet<float> other(ckpt_cfg, 1);
    CHECK_THROWS_AS(load_checkpoint(dir / "run" / "model.ckpt", m), CompatibilityError);
    CHECK_NOTHROW(load_checkpoint(dir / "run" / "model.ckpt", other));
  }

  CHECK(read_bytes(dir / "data" / "case0000_image.tuv") == before);
}

TEST_CASE("ablate patch axis") {
  TempDir dir("cli_ablate");
  const auto r = cli(with({"ablate", "--axis", "patch", "--out", dir.path().string(), "--set",
                           "train.iterations=1"},
                          kSmall));
  REQUIRE(r.code == 0);
  const auto table = read_bytes(dir / "ablation_patch.csv");
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  CHECK(line == "patch,seq_length,parameters,mean_dsc,mean_hd_mm,final_loss");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].rfind("8,16,", 0) == 0);
  CHECK(rows[1].rfind("16,4,", 0) == 0);
  CHECK(rows[2].rfind("32,1,", 0) == 0);

  TempDir bad("cli_ablate_bad");
  const auto rejected = cli({"ablate", "--axis", "skips", "--values", "0,2", "--out",
                             (bad / "out").string()});
  CHECK(rejected.code == kExitConfig);
  CHECK_FALSE(fs::exists(bad / "out"));
}
