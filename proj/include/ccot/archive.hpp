#pragma once
// Named-tensor archive shared by checkpoints, synthetic-sequence sidecars and
// cached hidden states. Layout (all integers little-endian):
//
//   "SYNA" | u32 version=1 | u32 count
//   count x { u16 name_len | name bytes (UTF-8) | u8 dtype (0 = f32) | u8 ndim | ndim x u64 dim }
//   payloads: contiguous little-endian f32 data in header order

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ccot::archive {

inline constexpr char kMagic[4] = {'S', 'Y', 'N', 'A'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

class TensorArchive {
 public:
  // Throws FormatError on a duplicate name or a dims/data size mismatch.
  void add(std::string name, std::vector<std::uint64_t> dims, std::vector<float> data);
  const NamedTensor* find(std::string_view name) const;
  // Throws FormatError when absent.
  const NamedTensor& at(std::string_view name) const;
  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<NamedTensor> entries_;
};

std::string encode(const TensorArchive& archive);
TensorArchive decode(std::string_view bytes);

void write_file(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_file(const std::filesystem::path& path);

}  // namespace ccot::archive
