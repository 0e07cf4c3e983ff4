#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rforge/common.hpp"
#include "rforge/image.hpp"

// PNG (RGB8 / gray8, non-interlaced) and binary P6 PPM. The zlib layer is
// self-contained: fixed-Huffman deflate with a greedy hash-chain matcher on
// write, full RFC 1951 inflate on read. Encoded bytes depend only on the
// pixel data, never on a system library version.

namespace rforge {
namespace pngio {

// ---------------------------------------------------------------------------
// Checksums
// ---------------------------------------------------------------------------

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline uint32_t adler32(const uint8_t* data, size_t n) {
  uint32_t a = 1, b = 0;
  for (size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

// ---------------------------------------------------------------------------
// Deflate (fixed Huffman codes, greedy LZ77)
// ---------------------------------------------------------------------------

struct BitWriter {
  std::vector<uint8_t>& out;
  uint32_t acc = 0;
  int nbits = 0;

  explicit BitWriter(std::vector<uint8_t>& o) : out(o) {}

  void put(uint32_t bits, int n) {  // LSB-first
    acc |= bits << nbits;
    nbits += n;
    while (nbits >= 8) {
      out.push_back(uint8_t(acc & 0xFF));
      acc >>= 8;
      nbits -= 8;
    }
  }
  void put_rev(uint32_t code, int n) {  // Huffman codes go MSB-first
    uint32_t r = 0;
    for (int i = 0; i < n; ++i) r |= ((code >> i) & 1u) << (n - 1 - i);
    put(r, n);
  }
  void flush() {
    if (nbits > 0) {
      out.push_back(uint8_t(acc & 0xFF));
      acc = 0;
      nbits = 0;
    }
  }
};

namespace detail {

// RFC 1951 length/distance code tables.
constexpr int kLenBase[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,  15,  17,  19,  23, 27,
                              31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195, 227, 258};
constexpr int kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                               2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
constexpr int kDistBase[30] = {1,    2,    3,    4,    5,    7,     9,     13,    17,   25,
                               33,   49,   65,   97,   129,  193,   257,   385,   513,  769,
                               1025, 1537, 2049, 3073, 4097, 6145,  8193,  12289, 16385, 24577};
constexpr int kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5,  6,
                                6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

inline void put_fixed_litlen(BitWriter& bw, int sym) {
  if (sym < 144) bw.put_rev(0x30 + sym, 8);
  else if (sym < 256) bw.put_rev(0x190 + (sym - 144), 9);
  else if (sym < 280) bw.put_rev(sym - 256, 7);
  else bw.put_rev(0xC0 + (sym - 280), 8);
}

inline int len_code(int len) {
  for (int i = 28; i >= 0; --i)
    if (len >= kLenBase[i]) return i;
  return 0;
}

inline int dist_code(int dist) {
  for (int i = 29; i >= 0; --i)
    if (dist >= kDistBase[i]) return i;
  return 0;
}

}  // namespace detail

inline std::vector<uint8_t> deflate_fixed(const uint8_t* data, size_t n) {
  std::vector<uint8_t> out;
  out.reserve(n / 2 + 64);
  BitWriter bw(out);
  bw.put(1, 1);  // final block
  bw.put(1, 2);  // fixed Huffman

  constexpr int kHashBits = 15;
  constexpr size_t kWindow = 32768;
  std::vector<int64_t> head(size_t(1) << kHashBits, -1);
  std::vector<int64_t> prev(n > 0 ? n : 1, -1);
  auto hash3 = [&](size_t i) {
    uint32_t h = data[i] | (uint32_t(data[i + 1]) << 8) | (uint32_t(data[i + 2]) << 16);
    h *= 0x9E3779B1u;
    return h >> (32 - kHashBits);
  };

  size_t i = 0;
  while (i < n) {
    int best_len = 0;
    size_t best_pos = 0;
    if (i + 3 <= n) {
      uint32_t h = hash3(i);
      int64_t cand = head[h];
      prev[i] = cand;
      head[h] = int64_t(i);
      int chain = 48;
      while (cand >= 0 && i - size_t(cand) <= kWindow && chain-- > 0) {
        size_t limit = std::min(n - i, size_t(258));
        size_t l = 0;
        const uint8_t* a = data + i;
        const uint8_t* b = data + cand;
        while (l < limit && a[l] == b[l]) ++l;
        if (int(l) > best_len) {
          best_len = int(l);
          best_pos = size_t(cand);
          if (l >= limit) break;
        }
        cand = prev[size_t(cand)];
      }
    }
    if (best_len >= 3) {
      int dist = int(i - best_pos);
      int lc = detail::len_code(best_len);
      detail::put_fixed_litlen(bw, 257 + lc);
      bw.put(uint32_t(best_len - detail::kLenBase[lc]), detail::kLenExtra[lc]);
      int dc = detail::dist_code(dist);
      bw.put_rev(uint32_t(dc), 5);
      bw.put(uint32_t(dist - detail::kDistBase[dc]), detail::kDistExtra[dc]);
      size_t end = i + size_t(best_len);
      ++i;
      for (; i < end; ++i)
        if (i + 3 <= n) {
          uint32_t h2 = hash3(i);
          prev[i] = head[h2];
          head[h2] = int64_t(i);
        }
    } else {
      detail::put_fixed_litlen(bw, data[i]);
      ++i;
    }
  }
  detail::put_fixed_litlen(bw, 256);  // end of block
  bw.flush();
  return out;
}

inline std::vector<uint8_t> zlib_compress(const uint8_t* data, size_t n) {
  std::vector<uint8_t> out;
  out.push_back(0x78);
  out.push_back(0x01);
  std::vector<uint8_t> body = deflate_fixed(data, n);
  out.insert(out.end(), body.begin(), body.end());
  uint32_t ad = adler32(data, n);
  out.push_back(uint8_t(ad >> 24));
  out.push_back(uint8_t(ad >> 16));
  out.push_back(uint8_t(ad >> 8));
  out.push_back(uint8_t(ad));
  return out;
}

// ---------------------------------------------------------------------------
// Inflate
// ---------------------------------------------------------------------------

struct BitReader {
  const uint8_t* data;
  size_t n;
  size_t pos = 0;
  uint32_t acc = 0;
  int nbits = 0;

  BitReader(const uint8_t* d, size_t len) : data(d), n(len) {}

  uint32_t get(int k) {
    while (nbits < k) {
      if (pos >= n) throw IoError("inflate: truncated stream");
      acc |= uint32_t(data[pos++]) << nbits;
      nbits += 8;
    }
    uint32_t v = acc & ((1u << k) - 1);
    acc >>= k;
    nbits -= k;
    return v;
  }
  void align_byte() {
    acc = 0;
    nbits = 0;
  }
};

namespace detail {

// Canonical Huffman decoder built from code lengths.
struct Huffman {
  std::vector<int> counts;   // codes per length
  std::vector<int> symbols;  // symbols sorted by (length, symbol)

  void build(const uint8_t* lengths, int n) {
    counts.assign(16, 0);
    for (int i = 0; i < n; ++i) counts[lengths[i]]++;
    counts[0] = 0;
    symbols.assign(n, 0);
    std::vector<int> offs(16, 0);
    for (int l = 1; l < 16; ++l) offs[l] = offs[l - 1] + counts[l - 1];
    for (int i = 0; i < n; ++i)
      if (lengths[i]) symbols[offs[lengths[i]]++] = i;
  }

  int decode(BitReader& br) const {
    int code = 0, first = 0, index = 0;
    for (int len = 1; len < 16; ++len) {
      code |= int(br.get(1));
      int count = counts[len];
      if (code - first < count) return symbols[index + (code - first)];
      index += count;
      first = (first + count) << 1;
      code <<= 1;
    }
    throw IoError("inflate: invalid Huffman code");
  }
};

inline void inflate_block(BitReader& br, const Huffman& lit, const Huffman& dist,
                          std::vector<uint8_t>& out) {
  for (;;) {
    int sym = lit.decode(br);
    if (sym == 256) return;
    if (sym < 256) {
      out.push_back(uint8_t(sym));
    } else {
      sym -= 257;
      if (sym >= 29) throw IoError("inflate: bad length symbol");
      int len = kLenBase[sym] + int(br.get(kLenExtra[sym]));
      int ds = dist.decode(br);
      if (ds >= 30) throw IoError("inflate: bad distance symbol");
      int d = kDistBase[ds] + int(br.get(kDistExtra[ds]));
      if (size_t(d) > out.size()) throw IoError("inflate: distance too far back");
      size_t start = out.size() - size_t(d);
      for (int k = 0; k < len; ++k) out.push_back(out[start + size_t(k)]);
    }
  }
}

}  // namespace detail

inline std::vector<uint8_t> inflate(const uint8_t* data, size_t n) {
  BitReader br(data, n);
  std::vector<uint8_t> out;
  for (;;) {
    uint32_t final = br.get(1);
    uint32_t type = br.get(2);
    if (type == 0) {  // stored
      br.align_byte();
      if (br.pos + 4 > br.n) throw IoError("inflate: truncated stored block");
      uint32_t len = data[br.pos] | (uint32_t(data[br.pos + 1]) << 8);
      br.pos += 4;
      if (br.pos + len > br.n) throw IoError("inflate: truncated stored data");
      out.insert(out.end(), data + br.pos, data + br.pos + len);
      br.pos += len;
    } else if (type == 1) {  // fixed codes
      static const auto tables = [] {
        std::array<uint8_t, 288> litlens{};
        for (int i = 0; i < 144; ++i) litlens[i] = 8;
        for (int i = 144; i < 256; ++i) litlens[i] = 9;
        for (int i = 256; i < 280; ++i) litlens[i] = 7;
        for (int i = 280; i < 288; ++i) litlens[i] = 8;
        std::array<uint8_t, 30> distlens{};
        distlens.fill(5);
        std::pair<detail::Huffman, detail::Huffman> t;
        t.first.build(litlens.data(), 288);
        t.second.build(distlens.data(), 30);
        return t;
      }();
      detail::inflate_block(br, tables.first, tables.second, out);
    } else if (type == 2) {  // dynamic codes
      int hlit = int(br.get(5)) + 257;
      int hdist = int(br.get(5)) + 1;
      int hclen = int(br.get(4)) + 4;
      static const int order[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15};
      uint8_t cl[19] = {0};
      for (int i = 0; i < hclen; ++i) cl[order[i]] = uint8_t(br.get(3));
      detail::Huffman clh;
      clh.build(cl, 19);
      std::vector<uint8_t> lens(size_t(hlit + hdist), 0);
      for (int i = 0; i < hlit + hdist;) {
        int s = clh.decode(br);
        if (s < 16) {
          lens[size_t(i++)] = uint8_t(s);
        } else if (s == 16) {
          if (i == 0) throw IoError("inflate: repeat with no previous length");
          int rep = 3 + int(br.get(2));
          uint8_t prev = lens[size_t(i - 1)];
          while (rep-- && i < hlit + hdist) lens[size_t(i++)] = prev;
        } else {
          int rep = (s == 17) ? 3 + int(br.get(3)) : 11 + int(br.get(7));
          while (rep-- && i < hlit + hdist) lens[size_t(i++)] = 0;
        }
      }
      detail::Huffman lit, dist;
      lit.build(lens.data(), hlit);
      dist.build(lens.data() + hlit, hdist);
      detail::inflate_block(br, lit, dist, out);
    } else {
      throw IoError("inflate: invalid block type");
    }
    if (final) break;
  }
  return out;
}

inline std::vector<uint8_t> zlib_decompress(const uint8_t* data, size_t n) {
  if (n < 6) throw IoError("zlib: stream too short");
  if ((data[0] & 0x0F) != 8) throw IoError("zlib: unsupported compression method");
  std::vector<uint8_t> out = inflate(data + 2, n - 6);
  uint32_t ad = (uint32_t(data[n - 4]) << 24) | (uint32_t(data[n - 3]) << 16) |
                (uint32_t(data[n - 2]) << 8) | uint32_t(data[n - 1]);
  if (ad != adler32(out.data(), out.size())) throw IoError("zlib: adler32 mismatch");
  return out;
}

// ---------------------------------------------------------------------------
// PNG container
// ---------------------------------------------------------------------------

namespace detail {

inline void put_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(uint8_t(x >> 24));
  v.push_back(uint8_t(x >> 16));
  v.push_back(uint8_t(x >> 8));
  v.push_back(uint8_t(x));
}

inline void write_chunk(std::vector<uint8_t>& out, const char* tag,
                        const std::vector<uint8_t>& payload) {
  put_be32(out, uint32_t(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), tag, tag + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = crc32(out.data() + start, out.size() - start);
  put_be32(out, crc);
}

inline uint8_t paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return uint8_t(a);
  if (pb <= pc) return uint8_t(b);
  return uint8_t(c);
}

}  // namespace detail

// channels: 3 (RGB) or 1 (gray). Rows are raw 8-bit samples.
inline std::vector<uint8_t> encode_png(const std::vector<uint8_t>& samples, int w, int h,
                                       int channels) {
  if (channels != 1 && channels != 3) throw ParamError("encode_png: channels must be 1 or 3");
  if (samples.size() != size_t(w) * h * channels) throw ParamError("encode_png: size mismatch");
  std::vector<uint8_t> raw;
  raw.reserve(size_t(h) * (size_t(w) * channels + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter type 0 on every scanline
    const uint8_t* row = samples.data() + size_t(y) * w * channels;
    raw.insert(raw.end(), row, row + size_t(w) * channels);
  }
  std::vector<uint8_t> out;
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);
  std::vector<uint8_t> ihdr;
  detail::put_be32(ihdr, uint32_t(w));
  detail::put_be32(ihdr, uint32_t(h));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(channels == 3 ? uint8_t(2) : uint8_t(0));  // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::write_chunk(out, "IHDR", ihdr);
  detail::write_chunk(out, "IDAT", zlib_compress(raw.data(), raw.size()));
  detail::write_chunk(out, "IEND", {});
  return out;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> samples;
};

inline DecodedPng decode_png(const std::vector<uint8_t>& bytes) {
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw IoError("decode_png: not a PNG file");
  size_t pos = 8;
  int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<uint8_t> idat;
  auto be32 = [&](size_t p) {
    return (uint32_t(bytes[p]) << 24) | (uint32_t(bytes[p + 1]) << 16) |
           (uint32_t(bytes[p + 2]) << 8) | uint32_t(bytes[p + 3]);
  };
  while (pos + 8 <= bytes.size()) {
    uint32_t len = be32(pos);
    std::string tag(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    size_t data_at = pos + 8;
    if (data_at + len + 4 > bytes.size()) throw IoError("decode_png: truncated chunk");
    if (tag == "IHDR") {
      w = int(be32(data_at));
      h = int(be32(data_at + 4));
      bit_depth = bytes[data_at + 8];
      color_type = bytes[data_at + 9];
      interlace = bytes[data_at + 12];
    } else if (tag == "IDAT") {
      idat.insert(idat.end(), bytes.begin() + data_at, bytes.begin() + data_at + len);
    } else if (tag == "IEND") {
      break;
    }
    pos = data_at + len + 4;
  }
  if (w <= 0 || h <= 0) throw IoError("decode_png: missing IHDR");
  if (bit_depth != 8 || interlace != 0)
    throw IoError("decode_png: only 8-bit non-interlaced PNGs supported");
  int channels;
  switch (color_type) {
    case 0: channels = 1; break;
    case 2: channels = 3; break;
    case 4: channels = 2; break;
    case 6: channels = 4; break;
    default: throw IoError("decode_png: unsupported color type");
  }
  std::vector<uint8_t> raw = zlib_decompress(idat.data(), idat.size());
  size_t stride = size_t(w) * channels;
  if (raw.size() != (stride + 1) * size_t(h)) throw IoError("decode_png: bad data size");

  DecodedPng out;
  out.width = w;
  out.height = h;
  out.channels = channels;
  out.samples.resize(stride * size_t(h));
  std::vector<uint8_t> prev(stride, 0);
  for (int y = 0; y < h; ++y) {
    uint8_t filter = raw[size_t(y) * (stride + 1)];
    const uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
    uint8_t* dst = out.samples.data() + size_t(y) * stride;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= size_t(channels) ? dst[x - channels] : 0;
      int b = prev[x];
      int c = x >= size_t(channels) ? prev[x - channels] : 0;
      int v;
      switch (filter) {
        case 0: v = src[x]; break;
        case 1: v = src[x] + a; break;
        case 2: v = src[x] + b; break;
        case 3: v = src[x] + (a + b) / 2; break;
        case 4: v = src[x] + detail::paeth(a, b, c); break;
        default: throw IoError("decode_png: bad filter type");
      }
      dst[x] = uint8_t(v);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return out;
}

}  // namespace pngio

// ---------------------------------------------------------------------------
// File-level API
// ---------------------------------------------------------------------------

inline uint8_t quantize8(float v) {
  // round half up after clamping to [0,1]
  double x = double(v);
  if (x < 0.0) x = 0.0;
  if (x > 1.0) x = 1.0;
  int q = int(std::floor(x * 255.0 + 0.5));
  return uint8_t(q > 255 ? 255 : q);
}

inline std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), {});
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<uint8_t> samples(img.pixel_count() * 3);
  for (size_t i = 0; i < samples.size(); ++i) samples[i] = quantize8(img.px[i]);
  write_file_bytes(path, pngio::encode_png(samples, img.width, img.height, 3));
}

inline void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<uint8_t> samples(mask.v.size());
  for (size_t i = 0; i < samples.size(); ++i) samples[i] = mask.v[i] > 0.f ? 255 : 0;
  write_file_bytes(path, pngio::encode_png(samples, mask.width, mask.height, 1));
}

inline Image image_from_samples(const pngio::DecodedPng& d) {
  Image img(d.width, d.height);
  for (size_t i = 0; i < size_t(d.width) * d.height; ++i) {
    if (d.channels >= 3) {
      for (int c = 0; c < 3; ++c) img.px[3 * i + c] = float(d.samples[i * d.channels + c]) / 255.f;
    } else {
      float g = float(d.samples[i * d.channels]) / 255.f;
      img.px[3 * i + 0] = img.px[3 * i + 1] = img.px[3 * i + 2] = g;
    }
  }
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::vector<uint8_t> out;
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                       "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
  for (size_t i = 0; i < img.pixel_count() * 3; ++i) out.push_back(quantize8(img.px[i]));
  write_file_bytes(path, out);
}

inline Image read_ppm_bytes(const std::vector<uint8_t>& bytes) {
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    }
    size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    return std::string(bytes.begin() + start, bytes.begin() + pos);
  };
  if (token() != "P6") throw IoError("read_ppm: not a P6 file");
  int w = std::stoi(token());
  int h = std::stoi(token());
  int maxv = std::stoi(token());
  if (maxv != 255) throw IoError("read_ppm: only maxval 255 supported");
  ++pos;  // single whitespace after header
  if (bytes.size() < pos + size_t(w) * h * 3) throw IoError("read_ppm: truncated pixel data");
  Image img(w, h);
  for (size_t i = 0; i < size_t(w) * h * 3; ++i) img.px[i] = float(bytes[pos + i]) / 255.f;
  return img;
}

// Dispatches on content (PNG signature) with PPM fallback.
inline Image read_image(const std::filesystem::path& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && bytes[0] == 137 && bytes[1] == 'P') return image_from_samples(pngio::decode_png(bytes));
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return read_ppm_bytes(bytes);
  throw IoError("read_image: unrecognized format in " + path.string());
}

inline Mask read_mask(const std::filesystem::path& path) {
  pngio::DecodedPng d = pngio::decode_png(read_file_bytes(path));
  Mask m(d.width, d.height);
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = d.samples[i * d.channels] >= 128 ? 1.f : 0.f;
  return m;
}

}  // namespace rforge
