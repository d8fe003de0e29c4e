#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "transunet/data.hpp"
#include "transunet/random.hpp"

namespace transunet {

namespace {

constexpr std::string_view kManifestMagic = "TUDATA1";
constexpr const char* kManifestName = "manifest.txt";

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + text + "' (expected train, val or test)");
}

DatasetSplit make_split(const std::vector<std::string>& ids, double train_fraction,
                        double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ConfigError("data.split: fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::string> order = ids;
  Rng rng(Rng::derive(seed, {0x5b17}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const auto n = static_cast<double>(order.size());
  const auto n_train = std::min(order.size(), static_cast<std::size_t>(std::llround(n * train_fraction)));
  const auto n_val =
      std::min(order.size() - n_train, static_cast<std::size_t>(std::llround(n * val_fraction)));
  DatasetSplit out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return out;
}

void DatasetManifest::save(const std::filesystem::path& dir) const {
  std::ofstream f(dir / kManifestName);
  if (!f) throw IoError("cannot write " + (dir / kManifestName).string());
  f << kManifestMagic << '\n';
  for (const auto& e : entries) {
    f << "case " << e.id << ' ' << to_string(e.split) << ' ' << e.image_file << ' '
      << e.label_file << '\n';
  }
  if (!f) throw IoError("write failed for " + (dir / kManifestName).string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t offset = 0;
  bool first = true;
  std::set<std::string> seen;
  while (std::getline(f, line)) {
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (first) {
      if (line != kManifestMagic) throw ParseError(path.string() + ": bad magic", start);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string tag, split, extra;
    DatasetEntry e;
    if (!(in >> tag >> e.id >> split >> e.image_file >> e.label_file) || tag != "case" ||
        (in >> extra)) {
      throw ParseError(path.string() + ": malformed entry", start);
    }
    try {
      e.split = parse_split(split);
    } catch (const ConfigError&) {
      throw ParseError(path.string() + ": unknown split '" + split + "'", start);
    }
    if (!seen.insert(e.id).second) {
      throw ValidationError(path.string() + ": duplicate case id " + e.id);
    }
    m.entries.push_back(std::move(e));
  }
  if (first) throw ParseError(path.string() + ": empty manifest", 0);
  return m;
}

void DatasetSpec::validate() const {
  phantom.validate();
  if (cases == 0) throw ConfigError("data.cases: need at least one case");
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ConfigError("data.train_fraction: fractions must be non-negative and sum to at most 1");
  }
}

std::string case_id(std::size_t index) {
  std::ostringstream out;
  out << "case" << std::setw(4) << std::setfill('0') << index;
  return out.str();
}

std::vector<EvalCase> generate_cases(const DatasetSpec& spec) {
  spec.validate();
  std::vector<EvalCase> out;
  out.reserve(spec.cases);
  for (std::size_t i = 0; i < spec.cases; ++i) {
    auto phantom_spec = spec.phantom;
    phantom_spec.seed = Rng::derive(spec.seed, {0xca5e, i});
    auto p = generate_phantom(phantom_spec);
    out.push_back({case_id(i), std::move(p.image), std::move(p.labels)});
  }
  return out;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  const auto cases = generate_cases(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.id);
  const auto split = make_split(ids, spec.train_fraction, spec.val_fraction, spec.seed);
  auto split_of = [&](const std::string& id) {
    if (std::find(split.val.begin(), split.val.end(), id) != split.val.end()) return Split::Val;
    if (std::find(split.test.begin(), split.test.end(), id) != split.test.end()) return Split::Test;
    return Split::Train;
  };

  DatasetManifest manifest;
  for (const auto& c : cases) {
    DatasetEntry e{c.id, split_of(c.id), c.id + "_image.tuv", c.id + "_label.tuv"};
    save_volume(dir / e.image_file, c.image);
    save_volume(dir / e.label_file, c.labels);
    manifest.entries.push_back(std::move(e));
  }
  manifest.save(dir);
  return manifest;
}

std::vector<EvalCase> load_cases(const std::filesystem::path& dir, std::optional<Split> split) {
  const auto manifest = DatasetManifest::load(dir);
  std::vector<EvalCase> out;
  for (const auto& e : manifest.entries) {
    if (split && e.split != *split) continue;
    EvalCase c{e.id, load_intensity_volume(dir / e.image_file),
               load_label_volume(dir / e.label_file)};
    if (c.image.extents != c.labels.extents) {
      throw IntegrityError("case " + e.id + ": image and label extents differ");
    }
    if (!out.empty() && out.front().labels.classes != c.labels.classes) {
      throw IntegrityError("case " + e.id + ": class count differs from case " + out.front().id);
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace transunet
