#include "srl4h/diff/archive.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace srl4h::diff {

namespace {

std::string shape_str(const std::vector<std::uint64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "]";
  return os.str();
}

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename U>
  U read() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }

  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw RuntimeFailure("archive: truncated file");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

// Payloads are raw host-order copies; every supported target is little-endian.
template <typename U>
void store_values(std::vector<std::uint8_t>& out, const U* values, std::size_t n) {
  out.reserve(out.size() + n * sizeof(U));
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &values[i], sizeof(U));
    out.insert(out.end(), raw, raw + sizeof(U));
  }
}

template <typename U>
std::vector<U> load_values(const ArrayEntry& e) {
  std::vector<U> out(e.bytes.size() / sizeof(U));
  std::memcpy(out.data(), e.bytes.data(), out.size() * sizeof(U));
  return out;
}

}  // namespace

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU64: return 8;
    case DType::kU8: return 1;
  }
  throw RuntimeFailure("archive: unknown dtype");
}

const char* dtype_name(DType d) {
  switch (d) {
    case DType::kF32: return "f32";
    case DType::kF64: return "f64";
    case DType::kU64: return "u64";
    case DType::kU8: return "u8";
  }
  return "?";
}

std::uint64_t ArrayEntry::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void ArrayArchive::put_raw(ArrayEntry entry) {
  if (entry.bytes.size() != entry.element_count() * dtype_size(entry.dtype)) {
    throw ConfigError("archive: payload size does not match shape for '" + entry.name + "'");
  }
  auto it = index_.find(entry.name);
  if (it != index_.end()) {
    entries_[it->second] = std::move(entry);
    return;
  }
  index_[entry.name] = entries_.size();
  entries_.push_back(std::move(entry));
}

void ArrayArchive::put_matrix(const std::string& name, const Matrix<float>& m) {
  ArrayEntry e;
  e.name = name;
  e.dtype = DType::kF32;
  if (m.cols() == 1) {
    e.shape = {static_cast<std::uint64_t>(m.rows())};
  } else {
    e.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  }
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  store_values(e.bytes, rm.data(), static_cast<std::size_t>(rm.size()));
  put_raw(std::move(e));
}

void ArrayArchive::put_f64(const std::string& name, const std::vector<double>& values) {
  ArrayEntry e{name, DType::kF64, {values.size()}, {}};
  store_values(e.bytes, values.data(), values.size());
  put_raw(std::move(e));
}

void ArrayArchive::put_u64(const std::string& name, const std::vector<std::uint64_t>& values) {
  ArrayEntry e{name, DType::kU64, {values.size()}, {}};
  store_values(e.bytes, values.data(), values.size());
  put_raw(std::move(e));
}

void ArrayArchive::put_string(const std::string& name, const std::string& text) {
  ArrayEntry e{name, DType::kU8, {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())};
  put_raw(std::move(e));
}

const ArrayEntry& ArrayArchive::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("archive: missing array '" + name + "'");
  return entries_[it->second];
}

Matrix<float> ArrayArchive::get_matrix(const std::string& name, Index rows, Index cols) const {
  const ArrayEntry& e = entry(name);
  std::vector<std::uint64_t> expected;
  if (cols == 1) {
    expected = {static_cast<std::uint64_t>(rows)};
  } else {
    expected = {static_cast<std::uint64_t>(rows), static_cast<std::uint64_t>(cols)};
  }
  if (e.dtype != DType::kF32 || e.shape != expected) {
    throw ConfigError("archive: array '" + name + "' has shape " + shape_str(e.shape) + " " +
                      dtype_name(e.dtype) + ", expected " + shape_str(expected) + " f32");
  }
  auto values = load_values<float>(e);
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> rm(values.data(), rows, cols);
  return Matrix<float>(rm);
}

std::vector<double> ArrayArchive::get_f64(const std::string& name) const {
  const ArrayEntry& e = entry(name);
  if (e.dtype != DType::kF64) throw ConfigError("archive: array '" + name + "' is not f64");
  return load_values<double>(e);
}

std::vector<std::uint64_t> ArrayArchive::get_u64(const std::string& name) const {
  const ArrayEntry& e = entry(name);
  if (e.dtype != DType::kU64) throw ConfigError("archive: array '" + name + "' is not u64");
  return load_values<std::uint64_t>(e);
}

std::string ArrayArchive::get_string(const std::string& name) const {
  const ArrayEntry& e = entry(name);
  if (e.dtype != DType::kU8) throw ConfigError("archive: array '" + name + "' is not u8");
  return std::string(e.bytes.begin(), e.bytes.end());
}

std::vector<std::uint8_t> ArrayArchive::serialize() const {
  std::vector<std::uint8_t> out(kArchiveMagic, kArchiveMagic + sizeof(kArchiveMagic));
  append_le<std::uint32_t>(out, kArchiveVersion);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    append_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) append_le<std::uint64_t>(out, d);
  }
  for (const auto& e : entries_) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  return out;
}

ArrayArchive ArrayArchive::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  auto magic = r.take(sizeof(kArchiveMagic));
  if (std::memcmp(magic.data(), kArchiveMagic, sizeof(kArchiveMagic)) != 0) {
    throw RuntimeFailure("archive: bad magic (not an SRL4H file)");
  }
  const auto version = r.read<std::uint32_t>();
  if (version != kArchiveVersion) {
    throw RuntimeFailure("archive: unsupported format version " + std::to_string(version));
  }
  const auto count = r.read<std::uint32_t>();
  std::vector<ArrayEntry> manifest(count);
  for (auto& e : manifest) {
    const auto len = r.read<std::uint32_t>();
    auto name = r.take(len);
    e.name.assign(name.begin(), name.end());
    const auto dt = r.read<std::uint8_t>();
    if (dt > static_cast<std::uint8_t>(DType::kU8)) throw RuntimeFailure("archive: unknown dtype in '" + e.name + "'");
    e.dtype = static_cast<DType>(dt);
    const auto rank = r.read<std::uint32_t>();
    e.shape.resize(rank);
    for (auto& d : e.shape) d = r.read<std::uint64_t>();
  }
  ArrayArchive a;
  for (auto& e : manifest) {
    e.bytes = r.take(static_cast<std::size_t>(e.element_count() * dtype_size(e.dtype)));
    a.put_raw(std::move(e));
  }
  if (!r.done()) throw RuntimeFailure("archive: trailing bytes after payloads");
  return a;
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw RuntimeFailure("archive: cannot write " + tmp);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw RuntimeFailure("archive: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("archive: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace srl4h::diff
