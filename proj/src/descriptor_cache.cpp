#include "divmix/descriptor_cache.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "divmix/error.hpp"

namespace divmix::gist {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'T', 'C'};

template <typename T>
void put_le(std::string& buf, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}

  template <typename T>
  bool get(T& out) {
    if (pos_ + sizeof(T) > buf_.size()) return false;
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    out = static_cast<T>(u);
    return true;
  }

  bool bytes(std::size_t n, std::string_view& out) {
    if (pos_ + n > buf_.size()) return false;
    out = std::string_view(buf_).substr(pos_, n);
    pos_ += n;
    return true;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view block) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(block.data()), static_cast<uInt>(block.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_cache(const DescriptorSet& set, const std::filesystem::path& path) {
  std::string buf(kMagic, 4);
  put_le<std::uint16_t>(buf, kCacheVersion);
  put_le<std::uint64_t>(buf, set.params_hash);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(set.matrix.rows()));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(set.matrix.cols()));
  for (const auto& id : set.ids) {
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(id.size()));
    buf += id;
  }
  std::string floats;
  floats.reserve(static_cast<std::size_t>(set.matrix.size()) * 4);
  for (Eigen::Index r = 0; r < set.matrix.rows(); ++r)
    for (Eigen::Index c = 0; c < set.matrix.cols(); ++c)
      put_le<std::uint32_t>(floats, std::bit_cast<std::uint32_t>(set.matrix(r, c)));
  buf += floats;
  put_le<std::uint32_t>(buf, crc_of(floats));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write descriptor cache '" + path.string() + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw RuntimeError("failed writing descriptor cache '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CacheRead read_cache(const std::filesystem::path& path, std::uint64_t expected_hash,
                     const std::vector<std::string>* expected_ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {CacheStatus::missing, std::nullopt};
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader rd(buf);
  const CacheRead corrupt{CacheStatus::corrupt, std::nullopt};

  std::string_view magic;
  if (!rd.bytes(4, magic) || magic != std::string_view(kMagic, 4)) return corrupt;
  std::uint16_t version = 0;
  std::uint64_t hash = 0;
  std::uint32_t rows = 0, dim = 0;
  if (!rd.get(version) || version != kCacheVersion || !rd.get(hash) || !rd.get(rows) || !rd.get(dim)) return corrupt;
  if (hash != expected_hash) return {CacheStatus::params_mismatch, std::nullopt};

  DescriptorSet set;
  set.params_hash = hash;
  set.ids.reserve(rows);
  for (std::uint32_t i = 0; i < rows; ++i) {
    std::uint32_t len = 0;
    std::string_view id;
    if (!rd.get(len) || !rd.bytes(len, id)) return corrupt;
    set.ids.emplace_back(id);
  }
  std::string_view floats;
  if (!rd.bytes(static_cast<std::size_t>(rows) * dim * 4, floats)) return corrupt;
  std::uint32_t crc = 0;
  if (!rd.get(crc) || !rd.at_end() || crc != crc_of(floats)) return corrupt;
  if (expected_ids && *expected_ids != set.ids) return {CacheStatus::ids_mismatch, std::nullopt};

  set.matrix.resize(rows, dim);
  for (std::size_t k = 0; k < static_cast<std::size_t>(rows) * dim; ++k) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(floats[4 * k + b])) << (8 * b);
    set.matrix.data()[k] = std::bit_cast<float>(bits);
  }
  return {CacheStatus::ok, std::move(set)};
}

}  // namespace divmix::gist
