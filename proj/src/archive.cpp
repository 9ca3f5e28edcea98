#include "ccot/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <unordered_set>

#include "ccot/error.hpp"

namespace ccot::archive {

namespace {

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("archive truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::uint64_t{1}, std::multiplies<>());
}

}  // namespace

void TensorArchive::add(std::string name, std::vector<std::uint64_t> dims, std::vector<float> data) {
  if (find(name) != nullptr) throw FormatError("archive: duplicate tensor name \"" + name + "\"");
  if (name.size() > 0xFFFF) throw FormatError("archive: tensor name too long");
  if (dims.size() > 0xFF) throw FormatError("archive: too many dimensions for \"" + name + "\"");
  if (element_count(dims) != data.size()) throw FormatError("archive: dims of \"" + name + "\" do not match data");
  entries_.push_back({std::move(name), std::move(dims), std::move(data)});
}

const NamedTensor* TensorArchive::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const NamedTensor& TensorArchive::at(std::string_view name) const {
  const auto* e = find(name);
  if (!e) throw FormatError("archive: missing tensor \"" + std::string(name) + "\"");
  return *e;
}

std::string encode(const TensorArchive& archive) {
  std::string out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
  for (const auto& e : archive.entries()) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    put_le<std::uint8_t>(out, kDtypeF32);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) put_le<std::uint64_t>(out, d);
  }
  for (const auto& e : archive.entries()) {
    for (float f : e.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

TensorArchive decode(std::string_view bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("archive: bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw FormatError("archive: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("tensor count");

  struct Header {
    std::string name;
    std::vector<std::uint64_t> dims;
  };
  std::vector<Header> headers;
  std::unordered_set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    Header h;
    const auto len = r.get<std::uint16_t>("name length");
    h.name = std::string(r.take(len, "name"));
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) throw FormatError("archive: unsupported dtype " + std::to_string(dtype));
    const auto ndim = r.get<std::uint8_t>("ndim");
    for (std::uint8_t d = 0; d < ndim; ++d) h.dims.push_back(r.get<std::uint64_t>("dims"));
    if (!names.insert(h.name).second) throw FormatError("archive: duplicate tensor name \"" + h.name + "\"");
    headers.push_back(std::move(h));
  }
  TensorArchive out;
  for (auto& h : headers) {
    const std::uint64_t n = element_count(h.dims);
    if (n > bytes.size()) throw FormatError("archive truncated: payload of \"" + h.name + "\" exceeds file");
    std::vector<float> data(static_cast<std::size_t>(n));
    for (auto& f : data) f = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
    out.add(std::move(h.name), std::move(h.dims), std::move(data));
  }
  return out;
}

void write_file(const std::filesystem::path& path, const TensorArchive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("archive: cannot write " + path.string());
  const auto bytes = encode(archive);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("archive: write failed for " + path.string());
}

TensorArchive read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("archive: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace ccot::archive
