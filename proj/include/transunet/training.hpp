#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "transunet/data.hpp"
#include "transunet/model.hpp"

namespace transunet {

// ---------------------------------------------------------------------------
// Losses. logits: K x H x W, labels: H x W values in [0, K).

// Pixel-mean cross-entropy.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

// 1 - mean_k (2 sum p_k g_k + s) / (sum p_k + sum g_k + s) over all K
// classes, with p = softmax(logits) along the class axis.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                         T smooth = T(1));

struct LossWeights {
  double ce = 0.5;
  double dice = 0.5;
  double smooth = 1.0;
};

template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                            const LossWeights& weights = {});

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 4;
  std::size_t iterations = 300;
  std::uint64_t seed = 0;
  LossWeights loss;
  bool augment = true;
  AugmentConfig augmentation;
  // Validation DSC every this many iterations (and after the last one);
  // 0 disables it.
  std::size_t eval_every = 0;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& values);
};

struct TrainRecord {
  std::size_t iteration = 0;  // 1-based
  double loss = 0.0;
  std::optional<double> val_dsc;
};

struct TrainResult {
  std::vector<TrainRecord> records;

  std::vector<double> losses() const;
  double final_loss() const { return records.empty() ? 0.0 : records.back().loss; }
};

using TrainCallback = std::function<void(const TrainRecord&)>;

// Momentum SGD on mini-batches of (optionally augmented) slices. Batch
// members and augmentation come from streams derived from (seed,
// iteration), so the run is a pure function of its inputs. Throws
// NumericError naming the iteration when the loss is not finite.
TrainResult train(TransUNet<float>& model, const TrainConfig& config,
                  const std::vector<Slice>& slices, const std::vector<EvalCase>& val_cases = {},
                  const TrainCallback& on_record = {});

// Inference wrapper usable with evaluate_case_set.
SlicePredictor make_predictor(const TransUNet<float>& model);

// Foreground DSC pooled over all pixels of the slices, averaged over
// classes 1..K-1.
double slice_set_dice(const TransUNet<float>& model, const std::vector<Slice>& slices);

// ---------------------------------------------------------------------------
// Checkpoints. One file: text manifest, then the raw little-endian payload.
//
//   TUCKPT1
//   dtype f32|f64
//   iteration <n>
//   seed <s>
//   config <key> <value>          (one line per model setting)
//   param <name> <shape> <offset> <bytes>
//   end
//   <payload>

struct CheckpointParam {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

struct CheckpointManifest {
  std::string dtype;
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
  ModelConfig config;
  std::vector<CheckpointParam> params;
  std::size_t payload_offset = 0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransUNet<T>& model,
                     std::size_t iteration = 0, std::uint64_t seed = 0);

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path);

// Copies the stored parameters into `model`. Throws CompatibilityError
// naming the first parameter whose name or shape differs, or the first
// differing config key.
template <typename T>
CheckpointManifest load_checkpoint(const std::filesystem::path& path, TransUNet<T>& model);

// Builds the model from the stored config and loads it.
TransUNet<float> load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Ablations

enum class AblationAxis { Skips, Patch, Resolution, Scale };
std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& text);
std::vector<std::string> default_axis_values(AblationAxis axis);

// The config one ablation row trains. The patch axis runs on the pure ViT
// encoder with the cascaded upsampler (no skips), since the hybrid encoder
// only tokenizes the 1/16 feature map.
ModelConfig ablation_config(const ModelConfig& base, AblationAxis axis, const std::string& value);

struct AblationRow {
  std::string value;
  std::size_t seq_length = 0;
  std::size_t parameters = 0;
  double mean_dsc = 0.0;
  double mean_hd_mm = 0.0;
  double final_loss = 0.0;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::Skips;
  std::vector<AblationRow> rows;

  // Comma-separated, header first.
  std::string to_text() const;
};

// Trains and evaluates one model per value with a shared seed and data.
// Axis values are validated before any training starts.
AblationTable run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                           const ModelConfig& base, const TrainConfig& train_config,
                           const std::vector<EvalCase>& train_cases,
                           const std::vector<EvalCase>& val_cases,
                           const std::function<void(const AblationRow&)>& on_row = {});

}  // namespace transunet
