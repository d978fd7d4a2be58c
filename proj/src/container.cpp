#include "mhsa/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "mhsa/errors.hpp"

namespace mhsa {

namespace {

constexpr char kMagic[4] = {'M', 'H', 'S', 'A'};

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw TruncatedError(std::string("container truncated while reading ") + what);
  }

  std::uint64_t uint(std::size_t width, const char* what) {
    need(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }

  std::string text(std::size_t n) {
    need(n, "entry name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(std::span<const NamedTensor> entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second) throw ContractError("container entry name '" + e.name + "' is not unique");
    if (e.name.size() > 0xFFFF) throw ContractError("container entry name too long");
    if (e.tensor.rank() > 0xFF) throw ContractError("container tensor rank too large");
  }
  if (entries.size() > 0xFFFFFFFFu) throw ContractError("too many container entries");

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u16(out, kContainerVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u8(out, static_cast<std::uint8_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) {
      if (d > 0xFFFFFFFFu) throw ContractError("container dimension exceeds u32");
      put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (double v : e.tensor.values()) put_f64(out, v);
  }
  put_u32(out, crc32_of(out));
  return out;
}

std::vector<NamedTensor> decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError("not an MHSA container (bad magic)");
  r.uint(4, "magic");
  const auto version = r.uint(2, "version");
  if (version != kContainerVersion) {
    throw VersionError("unsupported container version " + std::to_string(version));
  }
  const auto count = r.uint(4, "entry count");

  std::vector<NamedTensor> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.text(r.uint(2, "name length"));
    const auto rank = r.uint(1, "rank");
    if (rank == 0) throw ContainerError("entry '" + e.name + "' has rank 0");
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const auto dim = r.uint(4, "dims");
      if (dim == 0) throw ContainerError("entry '" + e.name + "' has a zero dimension");
      shape.push_back(dim);
      total *= dim;
    }
    if (total > r.remaining() / 8) throw TruncatedError("container truncated in payload of '" + e.name + "'");
    std::vector<double> data(total);
    for (auto& v : data) v = std::bit_cast<double>(r.uint(8, "payload"));
    e.tensor = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  const std::size_t body = r.position();
  const auto stored = static_cast<std::uint32_t>(r.uint(4, "checksum"));
  if (r.remaining() != 0) throw ContainerError("unexpected trailing bytes after checksum");
  if (stored != crc32_of(bytes.first(body))) throw CrcError("container checksum mismatch");
  return entries;
}

void save_container(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
  const auto bytes = encode_container(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

std::vector<NamedTensor> load_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

const Tensor* find_entry_or_null(std::span<const NamedTensor> entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

const Tensor& find_entry(std::span<const NamedTensor> entries, const std::string& name) {
  if (const Tensor* t = find_entry_or_null(entries, name)) return *t;
  throw DataError("container has no entry '" + name + "'");
}

}  // namespace mhsa
