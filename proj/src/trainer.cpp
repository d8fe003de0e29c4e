#include <charconv>
#include <cmath>
#include <sstream>

#include "transunet/ops.hpp"
#include "transunet/optim.hpp"
#include "transunet/random.hpp"
#include "transunet/training.hpp"

namespace transunet {

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw ConfigError("train." + field + ": " + why);
}

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    invalid(key, "expected a number, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    invalid(key, "expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  invalid(key, "expected true or false, got '" + text + "'");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) invalid("lr", "must be a finite value >= 0");
  if (momentum < 0 || momentum >= 1) invalid("momentum", "must lie in [0, 1)");
  if (weight_decay < 0) invalid("weight_decay", "must be >= 0");
  if (batch_size == 0) invalid("batch_size", "must be positive");
  if (loss.ce < 0 || loss.dice < 0 || !(loss.ce + loss.dice > 0)) {
    invalid("ce_weight", "loss weights must be >= 0 with a positive sum");
  }
  if (loss.smooth < 0) invalid("dice_smooth", "must be >= 0");
  if (augmentation.flip_probability < 0 || augmentation.flip_probability > 1) {
    invalid("flip_probability", "must lie in [0, 1]");
  }
  if (augmentation.max_rotation_deg < 0) invalid("max_rotation", "must be >= 0");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"lr", format_number(lr)},
      {"momentum", format_number(momentum)},
      {"weight_decay", format_number(weight_decay)},
      {"batch_size", std::to_string(batch_size)},
      {"iterations", std::to_string(iterations)},
      {"seed", std::to_string(seed)},
      {"ce_weight", format_number(loss.ce)},
      {"dice_weight", format_number(loss.dice)},
      {"dice_smooth", format_number(loss.smooth)},
      {"augment", augment ? "true" : "false"},
      {"flip_probability", format_number(augmentation.flip_probability)},
      {"max_rotation", format_number(augmentation.max_rotation_deg)},
      {"eval_every", std::to_string(eval_every)},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& values) {
  TrainConfig c;
  for (const auto& [key, text] : values) {
    if (key == "lr") c.lr = parse_double(key, text);
    else if (key == "momentum") c.momentum = parse_double(key, text);
    else if (key == "weight_decay") c.weight_decay = parse_double(key, text);
    else if (key == "batch_size") c.batch_size = parse_unsigned(key, text);
    else if (key == "iterations") c.iterations = parse_unsigned(key, text);
    else if (key == "seed") c.seed = parse_unsigned(key, text);
    else if (key == "ce_weight") c.loss.ce = parse_double(key, text);
    else if (key == "dice_weight") c.loss.dice = parse_double(key, text);
    else if (key == "dice_smooth") c.loss.smooth = parse_double(key, text);
    else if (key == "augment") c.augment = parse_bool(key, text);
    else if (key == "flip_probability") c.augmentation.flip_probability = parse_double(key, text);
    else if (key == "max_rotation") c.augmentation.max_rotation_deg = parse_double(key, text);
    else if (key == "eval_every") c.eval_every = parse_unsigned(key, text);
    else invalid(key, "unknown setting");
  }
  return c;
}

std::vector<double> TrainResult::losses() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.loss);
  return out;
}

SlicePredictor make_predictor(const TransUNet<float>& model) {
  return [&model](const Tensor<float>& slice) {
    NoGradGuard guard;
    return model(slice);
  };
}

double slice_set_dice(const TransUNet<float>& model, const std::vector<Slice>& slices) {
  const std::size_t k = model.config().classes;
  std::vector<std::size_t> pred(k, 0), truth(k, 0), both(k, 0);
  NoGradGuard guard;
  for (const auto& s : slices) {
    const auto logits = model(s.image);
    const auto d = logits.data();
    const std::size_t n = s.labels.size();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (d[c * n + i] > d[best * n + i]) best = c;
      ++pred[best];
      ++truth[s.labels[i]];
      if (best == s.labels[i]) ++both[best];
    }
  }
  double total = 0;
  for (std::size_t c = 1; c < k; ++c) {
    const auto denom = pred[c] + truth[c];
    total += denom == 0 ? 1.0 : 2.0 * static_cast<double>(both[c]) / static_cast<double>(denom);
  }
  return total / static_cast<double>(k - 1);
}

TrainResult train(TransUNet<float>& model, const TrainConfig& config,
                  const std::vector<Slice>& slices, const std::vector<EvalCase>& val_cases,
                  const TrainCallback& on_record) {
  config.validate();
  if (slices.empty()) throw DataError("training set has no slices");
  const auto& mc = model.config();
  for (const auto& s : slices) {
    if (s.image.rank() != 3 || s.image.size(0) != mc.channels || s.image.size(1) != mc.height ||
        s.image.size(2) != mc.width) {
      throw DataError("training slice " + shape_string(s.image.shape()) +
                      " does not match the model input " + std::to_string(mc.channels) + "x" +
                      std::to_string(mc.height) + "x" + std::to_string(mc.width));
    }
  }

  Sgd<float> optimizer(model.parameters(), {config.lr, config.momentum, config.weight_decay});
  const auto predictor = make_predictor(model);
  const float inv_batch = 1.0f / static_cast<float>(config.batch_size);
  TrainResult result;

  for (std::size_t it = 1; it <= config.iterations; ++it) {
    Rng rng(Rng::derive(config.seed, {0x7a1e, it}));
    optimizer.zero_grad();
    Tape::current().clear();

    double value = 0;
    try {
      Tensor<float> total;
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const auto& picked = slices[rng.index(slices.size())];
        const std::uint64_t aug_seed = rng.next();
        const Slice sample =
            config.augment ? augment(picked, aug_seed, config.augmentation) : picked;
        auto loss = segmentation_loss(model(sample.image), sample.labels, config.loss);
        total = total.defined() ? add(total, loss) : loss;
      }
      total = scale(total, inv_batch);
      value = total.item();
      if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
      backward(total);
    } catch (const NumericError& e) {
      Tape::current().clear();
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }
    optimizer.step();

    TrainRecord record{it, value, std::nullopt};
    if (config.eval_every > 0 && !val_cases.empty() &&
        (it % config.eval_every == 0 || it == config.iterations)) {
      record.val_dsc = evaluate_case_set(val_cases, predictor, mc.classes).mean_dsc;
    }
    result.records.push_back(record);
    if (on_record) on_record(record);
  }
  return result;
}

}  // namespace transunet
