#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

#include "rforge/common.hpp"

namespace rforge {

// ---------------------------------------------------------------------------
// Pixel containers
//
// Image: H x W x 3 interleaved channels, values in [0,1].
// Mask:  H x W single channel; binary masks hold {0,1}, alpha masks may be
//        fractional in [0,1].
// ---------------------------------------------------------------------------

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> px;  // row-major, 3 channels interleaved

  Image() = default;
  Image(int w, int h, float fill = 0.f) : width(w), height(h), px(size_t(w) * h * 3, fill) {
    if (w < 1 || h < 1) throw ParamError("Image: dimensions must be >= 1");
  }

  float& at(int x, int y, int c) { return px[(size_t(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return px[(size_t(y) * width + x) * 3 + c]; }
  size_t pixel_count() const { return size_t(width) * height; }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<float> v;

  Mask() = default;
  Mask(int w, int h, float fill = 0.f) : width(w), height(h), v(size_t(w) * h, fill) {
    if (w < 1 || h < 1) throw ParamError("Mask: dimensions must be >= 1");
  }

  float& at(int x, int y) { return v[size_t(y) * width + x]; }
  float at(int x, int y) const { return v[size_t(y) * width + x]; }

  bool is_binary() const {
    for (float x : v)
      if (x != 0.f && x != 1.f) return false;
    return true;
  }
  size_t area() const {
    size_t n = 0;
    for (float x : v) n += (x > 0.f);
    return n;
  }
};

// Per-pixel Euclidean distances; not range restricted.
struct DistanceField {
  int width = 0;
  int height = 0;
  std::vector<float> v;

  float at(int x, int y) const { return v[size_t(y) * width + x]; }
};

// Half-open pixel box [x0,x1) x [y0,y1).
struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int w() const { return x1 - x0; }
  int h() const { return y1 - y0; }
  bool valid() const { return x0 < x1 && y0 < y1; }
  bool inside(int img_w, int img_h) const {
    return valid() && x0 >= 0 && y0 >= 0 && x1 <= img_w && y1 <= img_h;
  }
};

inline std::string shape_str(int w, int h) {
  std::ostringstream os;
  os << w << "x" << h;
  return os.str();
}

// Tight bounding box of a mask's support. Throws on empty masks.
inline BBox tight_bbox(const Mask& m) {
  int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(x, y) > 0.f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw ParamError("tight_bbox: empty mask");
  return BBox{x0, y0, x1 + 1, y1 + 1};
}

// ---------------------------------------------------------------------------
// Compositing
// ---------------------------------------------------------------------------

// I = alpha * fg + (1 - alpha) * bg, evaluated exactly per pixel/channel.
inline Image alpha_composite(const Image& fg, const Image& bg, const Mask& alpha) {
  if (!fg.same_shape(bg) || fg.width != alpha.width || fg.height != alpha.height)
    throw DimensionError("alpha_composite: shape mismatch fg=" + shape_str(fg.width, fg.height) +
                         " bg=" + shape_str(bg.width, bg.height) +
                         " alpha=" + shape_str(alpha.width, alpha.height));
  Image out(fg.width, fg.height);
  const size_t n = fg.pixel_count();
  for (size_t i = 0; i < n; ++i) {
    float a = alpha.v[i];
    float b = 1.f - a;
    out.px[3 * i + 0] = a * fg.px[3 * i + 0] + b * bg.px[3 * i + 0];
    out.px[3 * i + 1] = a * fg.px[3 * i + 1] + b * bg.px[3 * i + 1];
    out.px[3 * i + 2] = a * fg.px[3 * i + 2] + b * bg.px[3 * i + 2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (separable lower-envelope algorithm)
//
// Convention: background pixels carry 0; a foreground pixel carries the exact
// Euclidean distance between pixel centers to the nearest background pixel,
// where everything outside the image bounds also counts as background. Under
// this convention a foreground pixel adjacent to background (or to the image
// border) has distance 1, and the field is finite for any mask.
// ---------------------------------------------------------------------------

namespace detail {

// 1-D squared-distance transform of sampled function f, writing to d.
inline void dt_1d(const double* f, int n, double* d, int* v, double* z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = double(q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace detail

inline DistanceField distance_transform(const Mask& mask) {
  if (!mask.is_binary()) throw ParamError("distance_transform: mask must be binary");
  const int w = mask.width, h = mask.height;
  // Pad with a one-pixel background ring; the nearest out-of-image background
  // site always lies in the first ring, so the pad is exact.
  const int pw = w + 2, ph = h + 2;
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> grid(size_t(pw) * ph, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      grid[size_t(y + 1) * pw + (x + 1)] = mask.at(x, y) > 0.f ? INF : 0.0;

  const int nmax = std::max(pw, ph);
  std::vector<double> f(nmax), d(nmax), z(nmax + 1);
  std::vector<int> v(nmax);

  for (int x = 0; x < pw; ++x) {  // columns
    for (int y = 0; y < ph; ++y) f[y] = grid[size_t(y) * pw + x];
    detail::dt_1d(f.data(), ph, d.data(), v.data(), z.data());
    for (int y = 0; y < ph; ++y) grid[size_t(y) * pw + x] = d[y];
  }
  for (int y = 0; y < ph; ++y) {  // rows
    for (int x = 0; x < pw; ++x) f[x] = grid[size_t(y) * pw + x];
    detail::dt_1d(f.data(), pw, d.data(), v.data(), z.data());
    for (int x = 0; x < pw; ++x) grid[size_t(y) * pw + x] = d[x];
  }

  DistanceField out;
  out.width = w;
  out.height = h;
  out.v.resize(size_t(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.v[size_t(y) * w + x] = float(std::sqrt(grid[size_t(y + 1) * pw + (x + 1)]));
  return out;
}

// alpha = min(1, distance/band) inside the mask, 0 outside. band >= 1.
inline Mask feather_mask(const Mask& mask, double band) {
  if (band < 1.0) throw ParamError("feather_mask: band must be >= 1");
  DistanceField d = distance_transform(mask);
  Mask out(mask.width, mask.height);
  for (size_t i = 0; i < mask.v.size(); ++i)
    out.v[i] = mask.v[i] > 0.f ? float(std::min(1.0, double(d.v[i]) / band)) : 0.f;
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear sampling & resize
// ---------------------------------------------------------------------------

namespace detail {

inline int clampi(int x, int lo, int hi) { return x < lo ? lo : (x > hi ? hi : x); }

// Bilinear tap with edge clamping, pixel-center convention.
inline float sample_bilinear(const float* data, int w, int h, int stride, int chan, double u,
                             double v) {
  double fu = std::floor(u), fv = std::floor(v);
  int x0 = int(fu), y0 = int(fv);
  double ax = u - fu, ay = v - fv;
  int x0c = clampi(x0, 0, w - 1), x1c = clampi(x0 + 1, 0, w - 1);
  int y0c = clampi(y0, 0, h - 1), y1c = clampi(y0 + 1, 0, h - 1);
  auto px = [&](int x, int y) { return double(data[(size_t(y) * w + x) * stride + chan]); };
  double top = (1.0 - ax) * px(x0c, y0c) + ax * px(x1c, y0c);
  double bot = (1.0 - ax) * px(x0c, y1c) + ax * px(x1c, y1c);
  return float((1.0 - ay) * top + ay * bot);
}

}  // namespace detail

// Bilinear resize, pixel-center mapping u = (x+0.5)*sw/dw - 0.5.
inline Image resize_bilinear(const Image& src, int dst_w, int dst_h) {
  if (dst_w < 1 || dst_h < 1) throw ParamError("resize_bilinear: bad target size");
  if (src.width == dst_w && src.height == dst_h) return src;
  Image out(dst_w, dst_h);
  const double sx = double(src.width) / dst_w, sy = double(src.height) / dst_h;
  for (int y = 0; y < dst_h; ++y) {
    double v = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < dst_w; ++x) {
      double u = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c)
        out.at(x, y, c) = detail::sample_bilinear(src.px.data(), src.width, src.height, 3, c, u, v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Geometric warp
// ---------------------------------------------------------------------------

// Bilinearly resamples src so that src_box maps onto dst_box in an image of
// size dst_dims; out-of-range taps clamp to the source edge. The mask is
// resampled with the same transform and re-binarized at 0.5. Pixels outside
// dst_box are zero in both outputs.
inline std::pair<Image, Mask> warp_to_bbox(const Image& src, const Mask& src_mask,
                                           const BBox& src_box, const BBox& dst_box, int dst_w,
                                           int dst_h) {
  if (!src_box.valid() || !dst_box.valid())
    throw ParamError("warp_to_bbox: degenerate box");
  if (!src_box.inside(src.width, src.height))
    throw ParamError("warp_to_bbox: src_box outside source image");
  if (!dst_box.inside(dst_w, dst_h))
    throw ParamError("warp_to_bbox: dst_box outside destination dims");
  if (src.width != src_mask.width || src.height != src_mask.height)
    throw DimensionError("warp_to_bbox: src/mask shape mismatch");

  Image out_img(dst_w, dst_h);
  Mask out_mask(dst_w, dst_h);
  const double sx = double(src_box.w()) / dst_box.w();
  const double sy = double(src_box.h()) / dst_box.h();
  for (int y = dst_box.y0; y < dst_box.y1; ++y) {
    double v = src_box.y0 + (y - dst_box.y0 + 0.5) * sy - 0.5;
    for (int x = dst_box.x0; x < dst_box.x1; ++x) {
      double u = src_box.x0 + (x - dst_box.x0 + 0.5) * sx - 0.5;
      for (int c = 0; c < 3; ++c)
        out_img.at(x, y, c) =
            detail::sample_bilinear(src.px.data(), src.width, src.height, 3, c, u, v);
      float a = detail::sample_bilinear(src_mask.v.data(), src.width, src.height, 1, 0, u, v);
      out_mask.at(x, y) = a >= 0.5f ? 1.f : 0.f;
    }
  }
  return {std::move(out_img), std::move(out_mask)};
}

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

// Per-channel mean over pixels selected by pred(i) (pixel index).
template <typename Pred>
inline std::array<double, 3> channel_mean(const Image& img, Pred&& pred) {
  std::array<double, 3> sum{0, 0, 0};
  size_t n = 0;
  for (size_t i = 0; i < img.pixel_count(); ++i) {
    if (!pred(i)) continue;
    ++n;
    for (int c = 0; c < 3; ++c) sum[c] += img.px[3 * i + c];
  }
  if (n == 0) throw ParamError("channel_mean: empty selection");
  for (int c = 0; c < 3; ++c) sum[c] /= double(n);
  return sum;
}

}  // namespace rforge
