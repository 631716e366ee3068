#pragma once

// Named-array container used for checkpoints and reference-library exports.
//
// File layout (little-endian):
//   magic      5 bytes  "SRL4H"
//   version    u32
//   count      u32
//   manifest   count x { name_len u32, name bytes, dtype u8, rank u32, dims u64[rank] }
//   payloads   in manifest order, row-major, element size given by dtype
//
// Parameters are stored as f32. Counters, running statistics and rng engine
// states use the wider dtypes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "srl4h/diff/tape.hpp"

namespace srl4h::diff {

inline constexpr char kArchiveMagic[5] = {'S', 'R', 'L', '4', 'H'};
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2, kU8 = 3 };

std::size_t dtype_size(DType d);
const char* dtype_name(DType d);

struct ArrayEntry {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> bytes;  // row-major payload

  std::uint64_t element_count() const;
};

class ArrayArchive {
 public:
  // Matrices are written as [rows, cols]; a column vector ([n x 1]) as [n].
  void put_matrix(const std::string& name, const Matrix<float>& m);
  void put_f64(const std::string& name, const std::vector<double>& values);
  void put_u64(const std::string& name, const std::vector<std::uint64_t>& values);
  void put_string(const std::string& name, const std::string& text);
  void put_raw(ArrayEntry entry);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ArrayEntry& entry(const std::string& name) const;
  const std::vector<ArrayEntry>& entries() const { return entries_; }

  // Throws ConfigError naming the array and both shapes on a mismatch.
  Matrix<float> get_matrix(const std::string& name, Index rows, Index cols) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::uint64_t> get_u64(const std::string& name) const;
  std::string get_string(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static ArrayArchive deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  std::vector<ArrayEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace srl4h::diff
