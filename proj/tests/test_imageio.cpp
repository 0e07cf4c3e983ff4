#include "doctest.h"

#include <filesystem>

#include "rforge/imageio.hpp"

using namespace rforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "rforge_io_tests";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("quantize8 rounds half up") {
  CHECK(quantize8(0.f) == 0);
  CHECK(quantize8(1.f) == 255);
  CHECK(quantize8(-0.5f) == 0);
  CHECK(quantize8(2.f) == 255);
  // 0.5/255 boundary: v*255 = 127.5 rounds up to 128
  CHECK(quantize8(0.5f) == 128);
  CHECK(quantize8(float(126.49 / 255.0)) == 126);
  CHECK(quantize8(float(126.5 / 255.0)) == 127);
}

TEST_CASE("png round trip is exact at 8-bit resolution") {
  Rng rng(42);
  Image img(23, 17);
  for (auto& p : img.px) p = float(rng.uniform());
  fs::path f = temp_dir() / "rt.png";
  write_png(f, img);
  Image back = read_image(f);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  for (size_t i = 0; i < img.px.size(); ++i)
    CHECK(back.px[i] == float(quantize8(img.px[i])) / 255.f);
}

TEST_CASE("png encoding is byte deterministic") {
  Rng rng(7);
  Image img(31, 12);
  for (auto& p : img.px) p = float(rng.uniform());
  std::vector<uint8_t> s1(img.pixel_count() * 3), s2 = s1;
  for (size_t i = 0; i < s1.size(); ++i) s1[i] = s2[i] = quantize8(img.px[i]);
  CHECK(pngio::encode_png(s1, 31, 12, 3) == pngio::encode_png(s2, 31, 12, 3));
}

TEST_CASE("mask png round trip") {
  Rng rng(9);
  Mask m(15, 11);
  for (auto& v : m.v) v = rng.uniform() < 0.4 ? 1.f : 0.f;
  fs::path f = temp_dir() / "mask.png";
  write_mask_png(f, m);
  Mask back = read_mask(f);
  CHECK(back.v == m.v);
}

TEST_CASE("inflate handles dynamic-Huffman and stored blocks") {
  // hand-assembled stored block: 1 final, type 00, then LEN/NLEN + data
  std::vector<uint8_t> stored = {0x01, 0x03, 0x00, 0xFC, 0xFF, 'a', 'b', 'c'};
  auto out = pngio::inflate(stored.data(), stored.size());
  CHECK(std::string(out.begin(), out.end()) == "abc");

  // our own encoder output must round trip, including long runs (LZ matches)
  std::vector<uint8_t> data;
  Rng rng(4);
  for (int i = 0; i < 5000; ++i) data.push_back(uint8_t(rng.uniform_int(7)));
  for (int i = 0; i < 3000; ++i) data.push_back(42);
  auto z = pngio::zlib_compress(data.data(), data.size());
  CHECK(z.size() < data.size());
  auto rt = pngio::zlib_decompress(z.data(), z.size());
  CHECK(rt == data);
}

TEST_CASE("ppm round trip") {
  Rng rng(13);
  Image img(9, 5);
  for (auto& p : img.px) p = float(rng.uniform());
  fs::path f = temp_dir() / "rt.ppm";
  write_ppm(f, img);
  Image back = read_image(f);
  REQUIRE(back.width == 9);
  REQUIRE(back.height == 5);
  for (size_t i = 0; i < img.px.size(); ++i)
    CHECK(back.px[i] == float(quantize8(img.px[i])) / 255.f);
}

TEST_CASE("read_image on garbage is an IoError") {
  fs::path f = temp_dir() / "garbage.bin";
  write_file_bytes(f, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_THROWS_AS(read_image(f), IoError);
  CHECK_THROWS_AS(read_image(temp_dir() / "missing.png"), IoError);
}
