// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "gradient_suite.hpp"
#include "metric_oracles.hpp"

using namespace transunet;
using namespace transunet::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<Slice> richest_slices(const std::vector<EvalCase>& cases) {
  std::vector<Slice> out;
  for (const auto& c : cases) out.push_back(make_slice(c.image, c.labels, richest_slice(c.labels)));
  return out;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// 1. Finite differences in double precision, relative error < 1e-4, < 120 s.
Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  std::size_t ops = 0, failed = 0;
  double worst = 0;
  std::string first_failure;
  for (const auto& c : run_op_gradient_suite()) {
    ++ops;
    if (!c.expect_zero) worst = std::max(worst, c.report.max_rel_error);
    if (!c.passed(1e-4)) {
      ++failed;
      if (first_failure.empty()) first_failure = c.name;
    }
  }
  const auto m = model_gradient_check(variant_config("transunet"), 1);
  const OpCheck model{"transunet", m.report, false}, bias{"key bias", m.key_bias, true};
  const double elapsed = seconds_since(t0);
  const bool pass = failed == 0 && model.passed(1e-4) && bias.passed(1e-4) &&
                    m.nonzero_tensors == m.parameter_tensors && elapsed < 120.0;
  auto detail = fmt("%zu op checks, max rel %.2e; full model max rel %.2e over %zu probes, "
                    "%zu/%zu parameter tensors with gradient; %.1f s",
                    ops, worst, m.report.max_rel_error, m.report.checked, m.nonzero_tensors,
                    m.parameter_tensors, elapsed);
  if (!first_failure.empty()) detail += "; first failing op " + first_failure;
  return {pass, detail};
}

// 2. Tiny TransUNet overfits 8 slices to train DSC >= 0.95 in 500 iterations.
Outcome overfit_convergence() {
  const auto t0 = Clock::now();
  DatasetSpec spec;
  spec.phantom = default_phantom_spec({8, 64, 64});
  spec.cases = 8;
  spec.seed = 7;
  const auto slices = richest_slices(generate_cases(spec));
  TransUNet<float> model(variant_config("transunet"), 0);
  TrainConfig cfg;
  cfg.iterations = 500;
  cfg.augment = false;
  const auto result = train(model, cfg, slices);
  const double dsc = slice_set_dice(model, slices);
  const double elapsed = seconds_since(t0);
  return {dsc >= 0.95 && elapsed < 600.0,
          fmt("train DSC %.4f after %zu iterations (final loss %.4f); %.0f s", dsc,
              result.records.size(), result.final_loss(), elapsed)};
}

// 3. Median validation DSC over 3 seeds: 3 skips >= 0 skips.
Outcome skip_trend() {
  DatasetSpec spec;
  spec.phantom = default_phantom_spec({8, 64, 64});
  spec.cases = 20;
  spec.seed = 11;
  const auto cases = generate_cases(spec);
  const std::vector<EvalCase> train_cases(cases.begin(), cases.begin() + 14),
      val(cases.begin() + 14, cases.end());
  const auto slices = slices_of(train_cases);
  auto run = [&](std::size_t skips) {
    std::vector<double> dsc;
    for (std::uint64_t seed : {0, 1, 2}) {
      auto m = variant_config("transunet");
      m.skip_count = skips;
      TransUNet<float> model(m, seed);
      TrainConfig cfg;
      cfg.iterations = 200;
      cfg.seed = seed;
      train(model, cfg, slices);
      dsc.push_back(evaluate_case_set(val, make_predictor(model), m.classes).mean_dsc);
    }
    return dsc;
  };
  const auto d0 = run(0), d3 = run(3);
  const double m0 = median3(d0), m3 = median3(d3);
  return {m3 >= m0,
          fmt("median val DSC 3-skip %.4f (%.4f %.4f %.4f) vs 0-skip %.4f (%.4f %.4f %.4f)", m3,
              d3[0], d3[1], d3[2], m0, d0[0], d0[1], d0[2])};
}

// 4. N = HW / P^2 at 224 for P in {8, 16, 32}, and 1024 at 512 with P = 16.
Outcome sequence_length() {
  bool pass = true;
  std::string detail;
  ModelConfig base = variant_config("vit-cup");
  base.height = base.width = 224;
  for (auto [p, n] : {std::pair<const char*, std::size_t>{"8", 784}, {"16", 196}, {"32", 49}}) {
    const auto c = ablation_config(base, AblationAxis::Patch, p);
    const auto rows = sequentialize(Tensor<float>({1, 224, 224}), c.patch_size).size(0);
    pass = pass && c.tokens() == n && rows == n;
    detail += fmt("P=%s -> %zu, ", p, rows);
  }
  const auto hi = ablation_config(variant_config("vit-cup"), AblationAxis::Resolution, "512");
  const auto rows = sequentialize(Tensor<float>({1, 512, 512}), 16).size(0);
  pass = pass && hi.patch_size == 16 && hi.tokens() == 1024 && rows == 1024;
  detail += fmt("512 at P=16 -> %zu", rows);
  return {pass, detail};
}

// 5. Dice and Hausdorff equal brute-force oracles exactly.
Outcome metric_oracles() {
  Rng rng(5);
  const std::array<Spacing, 2> spacings{Spacing{1, 1, 1}, Spacing{0.5, 0.75, 2.5}};
  std::size_t mismatches = 0, comparisons = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = spacings[trial % 2];
    const double fill = 0.1 + 0.7 * rng.uniform();
    const auto a = random_labels({4, 16, 16}, 3, fill, rng, s),
               b = random_labels({4, 16, 16}, 3, fill, rng, s);
    for (std::uint8_t c = 0; c < 3; ++c) {
      mismatches += dice(a, b, c) != dice_oracle(a, b, c);
      mismatches += hausdorff(a, b, c, s) != hausdorff_oracle(a, b, c, s);
      comparisons += 2;
    }
  }
  LabelVolume p({1, 1, 8}, {}, 2), q({1, 1, 8}, {}, 2);
  p.at(0, 0, 1) = 1;
  q.at(0, 0, 4) = 1;
  const bool hand = hausdorff(p, q, 1) == 3.0 && hausdorff(p, q, 1, {0.5, 1, 1}) == 1.5 &&
                    dice(p, q, 1) == 0.0 && dice(p, p, 1) == 1.0 && hausdorff(p, p, 1) == 0.0;
  return {mismatches == 0 && hand,
          fmt("%zu/%zu oracle comparisons differ on 50 pairs of 16x16x4; hand cases %s",
              mismatches, comparisons, hand ? "exact" : "wrong")};
}

// 6. Equivariance without position embedding, identity at zero weights,
// attention rows summing to one.
Outcome transformer_invariants() {
  auto cfg = variant_config("vit-none");
  cfg.height = cfg.width = 32;
  cfg.patch_size = 8;
  Rng rng(6);
  Encoder<float> enc(cfg, rng);
  for (auto& v : enc.embedding().position.data()) v = 0.0f;
  auto patches = sequentialize(random_tensor<float>({1, 32, 32}, rng, 1.0, false), 8);
  std::vector<std::size_t> perm(patches.size(0));
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.begin() + 7);
  std::swap(perm[9], perm[14]);
  auto permute = [&](const Tensor<float>& x) {
    Tensor<float> out(x.shape());
    const std::size_t d = x.size(1);
    for (std::size_t r = 0; r < perm.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[perm[r] * d + c];
    return out;
  };
  NoGradGuard guard;
  const auto a = permute(transformer_stack(embed(patches, enc.embedding()), enc.layers(),
                                           enc.final_norm()));
  const auto b = transformer_stack(embed(permute(patches), enc.embedding()), enc.layers(),
                                   enc.final_norm());
  double equiv = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) equiv = std::max(equiv, std::abs(double(a[i]) - b[i]));

  auto layer = TransformerLayer<float>::create(cfg.hidden, cfg.heads, cfg.mlp_dim, rng);
  const auto z = random_tensor<float>({9, cfg.hidden}, rng, 1.0, false);
  std::vector<Tensor<float>> attn;
  msa_block(z, layer, &attn);
  double row_error = 0;
  for (const auto& m : attn)
    for (std::size_t r = 0; r < 9; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 9; ++c) s += m[r * 9 + c];
      row_error = std::max(row_error, std::abs(s - 1.0));
    }

  for (auto* l : {&layer.query, &layer.key, &layer.value, &layer.out, &layer.fc1, &layer.fc2}) {
    for (auto& v : l->weight.data()) v = 0.0f;
    for (auto& v : l->bias.data()) v = 0.0f;
  }
  const auto ym = msa_block(z, layer), yf = mlp_block(z, layer);
  bool identity = true;
  for (std::size_t i = 0; i < z.numel(); ++i) identity = identity && ym[i] == z[i] && yf[i] == z[i];

  return {equiv <= 1e-5 && row_error <= 1e-6 && identity,
          fmt("permutation deviation %.2e; attention row-sum error %.2e; zero-weight blocks %s",
              equiv, row_error, identity ? "exact identity" : "not identity")};
}

// 7. All four variants build, take one step, and keep finite parameters.
Outcome variant_matrix() {
  DatasetSpec spec;
  spec.phantom = default_phantom_spec({8, 64, 64});
  spec.cases = 2;
  const auto slices = richest_slices(generate_cases(spec));
  bool pass = true;
  std::string detail;
  for (const auto& name : variant_names()) {
    TransUNet<float> model(variant_config(name), 1);
    TrainConfig cfg;
    cfg.iterations = 1;
    cfg.batch_size = 2;
    const auto r = train(model, cfg, slices);
    bool finite = std::isfinite(r.final_loss());
    for (const auto& p : model.parameters())
      for (auto v : p.tensor.data()) finite = finite && std::isfinite(v);
    pass = pass && finite;
    detail += name + (finite ? " ok, " : " NON-FINITE, ");
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

// 8. Base ViT encoder parameter count against the closed form.
Outcome parameter_count() {
  auto cfg = variant_config("vit-none");
  cfg.height = cfg.width = 224;
  cfg.apply_preset(ScalePreset::Base);
  Rng rng(8);
  Encoder<float> enc(cfg, rng);
  ParameterList<float> params;
  enc.collect("encoder", params);
  std::size_t counted = 0;
  for (const auto& p : params) counted += p.tensor.numel();
  // Embedding P^2 C D + N D; per layer 4 (D^2 + D) attention, 2 LN (2D each),
  // MLP 2 D Dm + Dm + D; final LN 2D.
  const std::size_t P = 16, C = 1, D = 768, N = 196, L = 12, Dm = 3072;
  const std::size_t closed =
      P * P * C * D + N * D + L * (4 * (D * D + D) + 4 * D + 2 * D * Dm + Dm + D) + 2 * D;
  return {counted == closed, fmt("counted %zu, closed form %zu", counted, closed)};
}

// 9. Same seeds, same curve bit for bit; checkpoint roundtrip, same logits.
Outcome determinism() {
  DatasetSpec spec;
  spec.phantom = default_phantom_spec({8, 64, 64});
  spec.cases = 4;
  spec.seed = 9;
  const auto slices = richest_slices(generate_cases(spec));
  TrainConfig cfg;
  cfg.iterations = 5;
  TransUNet<float> a(variant_config("transunet"), 3), b(variant_config("transunet"), 3);
  const auto ca = train(a, cfg, slices).losses(), cb = train(b, cfg, slices).losses();
  const bool curves = ca == cb;

  TempDir dir("acceptance");
  save_checkpoint(dir / "model.ckpt", a, cfg.iterations, 3);
  const auto loaded = load_model(dir / "model.ckpt");
  NoGradGuard guard;
  const auto x = a(slices[0].image), y = loaded(slices[0].image);
  const bool logits = std::equal(x.data().begin(), x.data().end(), y.data().begin(), y.data().end());
  return {curves && logits,
          fmt("training curves %s over %zu iterations; reloaded logits %s", curves ? "identical" : "differ",
              ca.size(), logits ? "bit-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"overfit convergence", overfit_convergence},
      {"skip-connection trend", skip_trend},
      {"sequence-length law", sequence_length},
      {"metric oracles", metric_oracles},
      {"transformer invariants", transformer_invariants},
      {"variant matrix", variant_matrix},
      {"parameter count", parameter_count},
      {"determinism and persistence", determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
