#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "transunet/data.hpp"

namespace transunet {

namespace {

constexpr std::string_view kMagic = "TUVOL1";

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string header(const Extents& e, const Spacing& s, std::string_view type, std::size_t k) {
  std::ostringstream out;
  out << kMagic << '\n'
      << "extents " << e.depth << ' ' << e.height << ' ' << e.width << '\n'
      << "spacing " << format_double(s.x) << ' ' << format_double(s.y) << ' '
      << format_double(s.z) << '\n'
      << "type " << type << '\n'
      << "classes " << k << '\n'
      << "payload\n";
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& head,
                const std::string& payload) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << head;
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct Header {
  Extents extents;
  Spacing spacing;
  std::string type;
  std::size_t classes = 0;
  std::size_t payload_offset = 0;
};

// Line-oriented reader that reports byte offsets in errors.
class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::vector<std::string> line(std::string_view key) {
    const std::size_t start = pos_;
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string::npos) fail(start, "truncated header, expected '" + std::string(key) + "'");
    std::istringstream in(bytes_.substr(pos_, end - pos_));
    pos_ = end + 1;
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    if (words.empty() || words[0] != key) {
      fail(start, "expected '" + std::string(key) + "'");
    }
    line_start_ = start;
    words.erase(words.begin());
    return words;
  }

  template <typename N>
  N number(const std::string& word) const {
    N v{};
    const auto r = std::from_chars(word.data(), word.data() + word.size(), v);
    if (r.ec != std::errc() || r.ptr != word.data() + word.size()) {
      fail(line_start_, "malformed number '" + word + "'");
    }
    return v;
  }

  [[noreturn]] void fail(std::size_t offset, const std::string& what) const {
    throw ParseError(name_ + ": " + what, offset);
  }

  std::size_t position() const { return pos_; }
  std::size_t line_start() const { return line_start_; }

 private:
  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

Header parse_header(const std::string& bytes, const std::filesystem::path& path) {
  HeaderReader r(bytes, path.string());
  Header h;
  if (!r.line(kMagic).empty()) r.fail(0, "unexpected text after magic");
  auto ext = r.line("extents");
  if (ext.size() != 3) r.fail(r.line_start(), "extents needs 3 values");
  h.extents = {r.number<std::size_t>(ext[0]), r.number<std::size_t>(ext[1]),
               r.number<std::size_t>(ext[2])};
  auto sp = r.line("spacing");
  if (sp.size() != 3) r.fail(r.line_start(), "spacing needs 3 values");
  h.spacing = {r.number<double>(sp[0]), r.number<double>(sp[1]), r.number<double>(sp[2])};
  auto type = r.line("type");
  if (type.size() != 1 || (type[0] != "f32" && type[0] != "u8")) {
    r.fail(r.line_start(), "type must be f32 or u8");
  }
  h.type = type[0];
  auto k = r.line("classes");
  if (k.size() != 1) r.fail(r.line_start(), "classes needs 1 value");
  h.classes = r.number<std::size_t>(k[0]);
  if (!r.line("payload").empty()) r.fail(r.line_start(), "unexpected text after payload marker");
  h.payload_offset = r.position();
  return h;
}

void check_payload(const Header& h, const std::string& bytes, std::size_t element,
                   const std::filesystem::path& path) {
  const std::size_t need = h.extents.voxels() * element;
  const std::size_t have = bytes.size() - h.payload_offset;
  if (have != need) {
    throw IntegrityError(path.string() + ": payload has " + std::to_string(have) +
                         " bytes, header implies " + std::to_string(need));
  }
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }
  return v;
}

}  // namespace

void save_volume(const std::filesystem::path& path, const IntensityVolume& volume) {
  volume.validate();
  std::string payload(volume.voxels.size() * 4, '\0');
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    const auto bits = to_little(std::bit_cast<std::uint32_t>(volume.voxels[i]));
    std::memcpy(payload.data() + 4 * i, &bits, 4);
  }
  write_file(path, header(volume.extents, volume.spacing, "f32", 0), payload);
}

void save_volume(const std::filesystem::path& path, const LabelVolume& volume) {
  volume.validate();
  const std::string payload(volume.voxels.begin(), volume.voxels.end());
  write_file(path, header(volume.extents, volume.spacing, "u8", volume.classes), payload);
}

IntensityVolume load_intensity_volume(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto h = parse_header(bytes, path);
  if (h.type != "f32") throw ValidationError(path.string() + ": expected an f32 volume");
  IntensityVolume v;
  v.extents = h.extents;
  v.spacing = h.spacing;
  check_payload(h, bytes, 4, path);
  v.voxels.resize(h.extents.voxels());
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + h.payload_offset + 4 * i, 4);
    v.voxels[i] = std::bit_cast<float>(to_little(bits));
  }
  v.validate();
  return v;
}

LabelVolume load_label_volume(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const auto h = parse_header(bytes, path);
  if (h.type != "u8") throw ValidationError(path.string() + ": expected a u8 label volume");
  LabelVolume v;
  v.extents = h.extents;
  v.spacing = h.spacing;
  v.classes = h.classes;
  check_payload(h, bytes, 1, path);
  v.voxels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), bytes.end());
  v.validate();
  return v;
}

}  // namespace transunet
