#pragma once

// IDX tensor files (the MNIST distribution format), optionally gzip-compressed.
//
// Layout: 2 zero bytes, a type byte (only 0x08 = unsigned byte is supported),
// a rank byte, `rank` big-endian uint32 dimensions, then the payload.

#include <zlib.h>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssamlab/problems.hpp"

namespace ssamlab {

struct IdxFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IdxLengthError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxTensor {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;

  std::size_t rank() const noexcept { return dims.size(); }

  /// Payload byte i scaled to [0, 1].
  double value(std::size_t i) const { return static_cast<double>(bytes[i]) / 255.0; }
};

namespace detail {

struct GzCloser {
  void operator()(gzFile f) const noexcept {
    if (f) gzclose(f);
  }
};

inline std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

}  // namespace detail

/// Reads an IDX file; gzip input is detected and inflated transparently.
inline IdxTensor load_idx(const std::filesystem::path& path) {
  std::unique_ptr<gzFile_s, detail::GzCloser> f(gzopen(path.string().c_str(), "rb"));
  if (!f) throw std::runtime_error("load_idx: cannot open " + path.string());

  std::vector<std::uint8_t> raw;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int got = gzread(f.get(), buf.data(), static_cast<unsigned>(buf.size()));
    if (got < 0) throw IdxFormatError("load_idx: decompression failed for " + path.string());
    if (got == 0) break;
    raw.insert(raw.end(), buf.begin(), buf.begin() + got);
  }

  if (raw.size() < 4) throw IdxLengthError("load_idx: file shorter than the magic number");
  IdxTensor t;
  t.magic = detail::read_be32(raw.data());
  if (raw[0] != 0 || raw[1] != 0 || raw[2] != 0x08 || raw[3] == 0)
    throw IdxFormatError("load_idx: bad magic number in " + path.string());
  const std::size_t rank = raw[3];
  const std::size_t header = 4 + 4 * rank;
  if (raw.size() < header) throw IdxLengthError("load_idx: truncated dimension header");
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims.push_back(detail::read_be32(raw.data() + 4 + 4 * i));
    count *= t.dims.back();
  }
  if (raw.size() - header < count) throw IdxLengthError("load_idx: truncated payload");
  if (raw.size() - header > count) throw IdxLengthError("load_idx: trailing bytes after payload");
  t.bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(header), raw.end());
  return t;
}

/// Writes an uncompressed unsigned-byte IDX file.
inline void write_idx(const std::filesystem::path& path, const std::vector<std::uint32_t>& dims,
                      const std::vector<std::uint8_t>& bytes) {
  if (dims.empty() || dims.size() > 255) throw std::invalid_argument("write_idx: bad rank");
  std::size_t count = 1;
  for (auto d : dims) count *= d;
  if (count != bytes.size()) throw std::invalid_argument("write_idx: payload does not match dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_idx: cannot open " + path.string());
  const std::uint8_t head[4] = {0, 0, 0x08, static_cast<std::uint8_t>(dims.size())};
  out.write(reinterpret_cast<const char*>(head), 4);
  for (auto d : dims) {
    const std::uint8_t be[4] = {static_cast<std::uint8_t>(d >> 24), static_cast<std::uint8_t>(d >> 16),
                                static_cast<std::uint8_t>(d >> 8), static_cast<std::uint8_t>(d)};
    out.write(reinterpret_cast<const char*>(be), 4);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Pairs an image tensor (n x rows x cols) with a label tensor (n) into a
/// flattened dataset with pixels in [0, 1]. `limit` > 0 keeps the first
/// `limit` examples.
inline Dataset idx_dataset(const IdxTensor& images, const IdxTensor& labels, std::size_t limit = 0) {
  if (images.magic != kIdxImagesMagic || labels.magic != kIdxLabelsMagic)
    throw IdxFormatError("idx_dataset: expected an image file and a label file");
  if (images.dims[0] != labels.dims[0]) throw IdxFormatError("idx_dataset: image and label counts differ");
  Dataset ds;
  ds.p = static_cast<std::size_t>(images.dims[1]) * images.dims[2];
  std::size_t n = images.dims[0];
  if (limit > 0 && limit < n) n = limit;
  int max_label = 0;
  std::vector<double> x(ds.p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ds.p; ++j) x[j] = images.value(i * ds.p + j);
    const int y = labels.bytes[i];
    max_label = std::max(max_label, y);
    ds.push_back(x, y);
  }
  ds.classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return ds;
}

}  // namespace ssamlab
