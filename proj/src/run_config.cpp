#include "transunet/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace transunet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": '" + text + "' is not a valid number");
  }
  return v;
}

std::vector<double> parse_triple(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, ',');) {
    out.push_back(parse_number<double>(key, trim(part)));
  }
  if (out.size() != 3) throw ConfigError(key + ": expected three comma-separated values");
  return out;
}

}  // namespace

Settings parse_settings(const std::string& text, const std::string& source) {
  Settings out;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

Settings read_settings(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  std::ostringstream text;
  text << f.rdbuf();
  return parse_settings(text.str(), path.string());
}

void apply_override(Settings& settings, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty()) {
    throw ConfigError("override '" + assignment + "' is not of the form KEY=VALUE");
  }
  settings[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

Settings RunConfig::to_settings() const {
  Settings out;
  for (const auto& [k, v] : model.to_map()) out["model." + k] = v;
  for (const auto& [k, v] : train.to_map())
    if (k != "seed") out["train." + k] = v;
  const auto& p = data.phantom;
  out["data.depth"] = std::to_string(p.extents.depth);
  out["data.height"] = std::to_string(p.extents.height);
  out["data.width"] = std::to_string(p.extents.width);
  out["data.spacing"] = format_number(p.spacing.x) + "," + format_number(p.spacing.y) + "," +
                        format_number(p.spacing.z);
  out["data.structures"] = std::to_string(p.structures.size());
  out["data.noise"] = format_number(p.noise_sigma);
  out["data.background"] = format_number(p.background_mean);
  out["data.cases"] = std::to_string(data.cases);
  out["data.train_fraction"] = format_number(data.train_fraction);
  out["data.val_fraction"] = format_number(data.val_fraction);
  out["data.seed"] = std::to_string(data.seed);
  out["data.dir"] = data_dir;
  out["seed"] = std::to_string(seed);
  return out;
}

RunConfig RunConfig::from_settings(const Settings& settings) {
  RunConfig rc;
  Settings model_keys, train_keys;
  Extents extents = rc.data.phantom.extents;
  std::size_t structures = rc.data.phantom.structures.size();
  auto& ph = rc.data.phantom;
  for (const auto& [key, value] : settings) {
    if (key.rfind("model.", 0) == 0) {
      model_keys[key.substr(6)] = value;
    } else if (key == "train.seed") {
      throw ConfigError("train.seed: use the top-level 'seed' key");
    } else if (key.rfind("train.", 0) == 0) {
      train_keys[key.substr(6)] = value;
    } else if (key == "seed") {
      rc.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "data.depth") {
      extents.depth = parse_number<std::size_t>(key, value);
    } else if (key == "data.height") {
      extents.height = parse_number<std::size_t>(key, value);
    } else if (key == "data.width") {
      extents.width = parse_number<std::size_t>(key, value);
    } else if (key == "data.spacing") {
      const auto s = parse_triple(key, value);
      ph.spacing = {s[0], s[1], s[2]};
    } else if (key == "data.structures") {
      structures = parse_number<std::size_t>(key, value);
    } else if (key == "data.noise") {
      ph.noise_sigma = parse_number<double>(key, value);
    } else if (key == "data.background") {
      ph.background_mean = parse_number<double>(key, value);
    } else if (key == "data.cases") {
      rc.data.cases = parse_number<std::size_t>(key, value);
    } else if (key == "data.train_fraction") {
      rc.data.train_fraction = parse_number<double>(key, value);
    } else if (key == "data.val_fraction") {
      rc.data.val_fraction = parse_number<double>(key, value);
    } else if (key == "data.seed") {
      rc.data.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "data.dir") {
      rc.data_dir = value;
    } else {
      throw ConfigError(key + ": unknown setting");
    }
  }
  rc.model = ModelConfig::from_map(model_keys);
  rc.train = TrainConfig::from_map(train_keys);
  rc.train.seed = rc.seed;

  const auto defaults = default_phantom_spec(extents, 0).structures;
  if (structures > defaults.size()) {
    throw ConfigError("data.structures: at most " + std::to_string(defaults.size()) +
                      " structures are available");
  }
  ph.extents = extents;
  ph.structures.assign(defaults.begin(), defaults.begin() + static_cast<std::ptrdiff_t>(structures));
  return rc;
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : to_settings()) out << k << " = " << v << '\n';
  return out.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data_dir.empty()) {
    data.validate();
    if (data.phantom.classes() != model.classes) {
      throw ConfigError("model.classes: " + std::to_string(model.classes) +
                        " classes requested but data.structures gives " +
                        std::to_string(data.phantom.classes()));
    }
  }
}

}  // namespace transunet
