#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "transunet/training.hpp"

namespace transunet {

namespace {

constexpr std::string_view kMagic = "TUCKPT1";

template <typename T>
constexpr std::string_view dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
  return v;
}

template <typename T>
using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

template <typename N>
N parse_number(const std::string& word, const std::string& file, std::size_t offset) {
  N v{};
  const auto r = std::from_chars(word.data(), word.data() + word.size(), v);
  if (r.ec != std::errc() || r.ptr != word.data() + word.size() || word.empty()) {
    throw ParseError(file + ": malformed number '" + word + "'", offset);
  }
  return v;
}

Shape parse_shape(const std::string& token, const std::string& file, std::size_t offset) {
  Shape s;
  std::size_t start = 0;
  while (start <= token.size()) {
    const auto end = std::min(token.find('x', start), token.size());
    s.push_back(parse_number<std::size_t>(token.substr(start, end - start), file, offset));
    start = end + 1;
  }
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

CheckpointManifest parse_manifest(const std::string& bytes, const std::string& file) {
  CheckpointManifest m;
  std::map<std::string, std::string> config;
  std::size_t pos = 0;
  bool saw_magic = false, saw_end = false;
  while (!saw_end) {
    const std::size_t start = pos;
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw ParseError(file + ": manifest is not terminated", start);
    std::istringstream in(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    std::vector<std::string> w;
    for (std::string s; in >> s;) w.push_back(s);
    if (!saw_magic) {
      if (w.size() != 1 || w[0] != kMagic) throw ParseError(file + ": bad magic", start);
      saw_magic = true;
      continue;
    }
    if (w.empty()) throw ParseError(file + ": empty manifest line", start);
    const auto& tag = w[0];
    if (tag == "dtype" && w.size() == 2 && (w[1] == "f32" || w[1] == "f64")) {
      m.dtype = w[1];
    } else if (tag == "iteration" && w.size() == 2) {
      m.iteration = parse_number<std::size_t>(w[1], file, start);
    } else if (tag == "seed" && w.size() == 2) {
      m.seed = parse_number<std::uint64_t>(w[1], file, start);
    } else if (tag == "config" && w.size() == 3) {
      config[w[1]] = w[2];
    } else if (tag == "param" && w.size() == 5) {
      m.params.push_back({w[1], parse_shape(w[2], file, start),
                          parse_number<std::size_t>(w[3], file, start),
                          parse_number<std::size_t>(w[4], file, start)});
    } else if (tag == "end" && w.size() == 1) {
      saw_end = true;
    } else {
      throw ParseError(file + ": unexpected manifest line '" + tag + "'", start);
    }
  }
  if (m.dtype.empty()) throw ParseError(file + ": missing dtype", 0);
  try {
    m.config = ModelConfig::from_map(config);
  } catch (const ConfigError& e) {
    throw ParseError(file + ": bad config snapshot: " + e.what(), 0);
  }
  m.payload_offset = pos;

  const std::size_t element = m.dtype == "f32" ? 4 : 8;
  std::size_t expected = 0;
  for (const auto& p : m.params) {
    if (p.offset != expected || p.bytes != shape_numel(p.shape) * element) {
      throw IntegrityError(file + ": parameter " + p.name + " has an inconsistent byte range");
    }
    expected += p.bytes;
  }
  if (bytes.size() - pos != expected) {
    throw IntegrityError(file + ": payload has " + std::to_string(bytes.size() - pos) +
                         " bytes, manifest lists " + std::to_string(expected));
  }
  return m;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TransUNet<T>& model,
                     std::size_t iteration, std::uint64_t seed) {
  std::ostringstream head;
  head << kMagic << '\n'
       << "dtype " << dtype_name<T>() << '\n'
       << "iteration " << iteration << '\n'
       << "seed " << seed << '\n';
  for (const auto& [key, value] : model.config().to_map()) {
    head << "config " << key << ' ' << value << '\n';
  }
  const auto params = model.parameters();
  std::size_t offset = 0;
  for (const auto& p : params) {
    const std::size_t bytes = p.tensor.numel() * sizeof(T);
    head << "param " << p.name << ' ' << shape_token(p.tensor.shape()) << ' ' << offset << ' '
         << bytes << '\n';
    offset += bytes;
  }
  head << "end\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  const auto h = head.str();
  f.write(h.data(), static_cast<std::streamsize>(h.size()));
  std::string chunk;
  for (const auto& p : params) {
    const auto d = p.tensor.data();
    chunk.resize(d.size() * sizeof(T));
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto bits = to_little(std::bit_cast<Bits<T>>(d[i]));
      std::memcpy(chunk.data() + i * sizeof(T), &bits, sizeof(T));
    }
    f.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
  }
  if (!f) throw IoError("write failed for " + path.string());
}

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.string());
}

template <typename T>
CheckpointManifest load_checkpoint(const std::filesystem::path& path, TransUNet<T>& model) {
  const auto bytes = read_file(path);
  auto m = parse_manifest(bytes, path.string());
  if (m.dtype != dtype_name<T>()) {
    throw CompatibilityError("checkpoint stores " + m.dtype + " parameters, model uses " +
                             std::string(dtype_name<T>()));
  }
  auto params = model.parameters();
  const std::size_t n = std::min(params.size(), m.params.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& want = params[i];
    const auto& have = m.params[i];
    if (want.name != have.name || want.tensor.shape() != have.shape) {
      throw CompatibilityError("parameter " + want.name + " " + shape_string(want.tensor.shape()) +
                               " does not match checkpoint entry " + have.name + " " +
                               shape_string(have.shape));
    }
  }
  if (params.size() != m.params.size()) {
    const auto& name = params.size() > n ? params[n].name : m.params[n].name;
    throw CompatibilityError("parameter " + name + " is missing on one side (model has " +
                             std::to_string(params.size()) + ", checkpoint " +
                             std::to_string(m.params.size()) + ")");
  }
  const auto want_cfg = model.config().to_map();
  const auto have_cfg = m.config.to_map();
  for (const auto& [key, value] : want_cfg) {
    const auto it = have_cfg.find(key);
    if (it == have_cfg.end() || it->second != value) {
      throw CompatibilityError("config " + key + " is " + value + " but checkpoint has " +
                               (it == have_cfg.end() ? std::string("none") : it->second));
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto d = params[i].tensor.data();
    const char* src = bytes.data() + m.payload_offset + m.params[i].offset;
    for (std::size_t j = 0; j < d.size(); ++j) {
      Bits<T> bits;
      std::memcpy(&bits, src + j * sizeof(T), sizeof(T));
      d[j] = std::bit_cast<T>(to_little(bits));
    }
  }
  return m;
}

TransUNet<float> load_model(const std::filesystem::path& path) {
  const auto m = read_checkpoint_manifest(path);
  TransUNet<float> model(m.config, m.seed);
  load_checkpoint(path, model);
  return model;
}

template void save_checkpoint(const std::filesystem::path&, const TransUNet<float>&, std::size_t,
                              std::uint64_t);
template void save_checkpoint(const std::filesystem::path&, const TransUNet<double>&, std::size_t,
                              std::uint64_t);
template CheckpointManifest load_checkpoint(const std::filesystem::path&, TransUNet<float>&);
template CheckpointManifest load_checkpoint(const std::filesystem::path&, TransUNet<double>&);

}  // namespace transunet
