#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rforge/common.hpp"
#include "rforge/image.hpp"
#include "rforge/imageio.hpp"
#include "rforge/composite.hpp"

// The discriminative realism model: a small conv net trained from scratch on
// the natural-vs-composite pretext task. The score is the pre-sigmoid log-odds
// of the "natural" class, which keeps the color-optimization objective smooth
// and unbounded. Everything is templated on the scalar type: training runs in
// f32 (the serialized format), gradient checks instantiate f64.

namespace rforge {

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

template <typename S>
struct Tensor {
  std::vector<int> dims;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
    size_t n = 1;
    for (int x : dims) n *= size_t(x);
    v.assign(n, S(0));
  }
  size_t numel() const { return v.size(); }
};

namespace netdetail {

// y[0..n) += a * x[0..n)
template <typename S>
inline void axpy(int n, S a, const S* __restrict x, S* __restrict y) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

// lane-parallel dot product; fixed accumulation order keeps results
// reproducible while still vectorizing without reassociation
template <typename S>
inline S dot(int n, const S* __restrict x, const S* __restrict y) {
  constexpr int W = 16;
  S lanes[W] = {S(0)};
  int i = 0;
  for (; i + W <= n; i += W)
    for (int j = 0; j < W; ++j) lanes[j] += x[i + j] * y[i + j];
  S tail = S(0);
  for (; i < n; ++i) tail += x[i] * y[i];
  S acc = tail;
  for (int j = 0; j < W; ++j) acc += lanes[j];
  return acc;
}

}  // namespace netdetail

// ---------------------------------------------------------------------------
// Layers and networks
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, Relu, MaxPool, Fc };

template <typename S>
struct Layer {
  LayerKind kind;
  std::string name;
  int in_c = 0, out_c = 0, ksize = 0;  // conv (stride 1, pad ksize/2)
  int in_dim = 0, out_dim = 0;         // fc
  Tensor<S> w, b;
};

template <typename S>
struct Network {
  int in_c = 3, in_h = 64, in_w = 64;
  std::vector<Layer<S>> layers;
  int feature_layer = -1;  // layer whose output is the feature vector

  std::string fingerprint() const {
    std::ostringstream os;
    os << "in:" << in_c << "x" << in_h << "x" << in_w;
    for (const auto& l : layers) {
      switch (l.kind) {
        case LayerKind::Conv: os << "|conv:" << l.ksize << "x" << l.out_c; break;
        case LayerKind::Relu: os << "|relu"; break;
        case LayerKind::MaxPool: os << "|pool:2"; break;
        case LayerKind::Fc: os << "|fc:" << l.out_dim; break;
      }
    }
    os << "|feat:" << feature_layer;
    return os.str();
  }
};

namespace netdetail {

template <typename S>
void he_init(Tensor<S>& w, int fan_in, Rng& rng) {
  double scale = std::sqrt(2.0 / double(fan_in));
  for (auto& x : w.v) x = S(rng.normal() * scale);
}

}  // namespace netdetail

// Architecture builder. conv_channels are 3x3 same-padding blocks each
// followed by relu + 2x2 maxpool; then fc feature_width + relu, then the
// scalar logit.
template <typename S>
Network<S> build_network(uint64_t seed, int in_h = 64, int in_w = 64,
                         std::vector<int> conv_channels = {16, 32, 64},
                         int feature_width = 128) {
  Network<S> net;
  net.in_h = in_h;
  net.in_w = in_w;
  Rng rng(sub_seed(seed, "init"));
  int c = net.in_c, h = in_h, w = in_w;
  int conv_id = 0;
  for (int oc : conv_channels) {
    Layer<S> conv;
    conv.kind = LayerKind::Conv;
    conv.name = "conv" + std::to_string(++conv_id);
    conv.in_c = c;
    conv.out_c = oc;
    conv.ksize = 3;
    conv.w = Tensor<S>({oc, c, 3, 3});
    conv.b = Tensor<S>({oc});
    netdetail::he_init(conv.w, c * 9, rng);
    net.layers.push_back(std::move(conv));
    net.layers.push_back({LayerKind::Relu, "relu"});
    net.layers.push_back({LayerKind::MaxPool, "pool"});
    c = oc;
    h /= 2;
    w /= 2;
  }
  Layer<S> fc1;
  fc1.kind = LayerKind::Fc;
  fc1.name = "fc1";
  fc1.in_dim = c * h * w;
  fc1.out_dim = feature_width;
  fc1.w = Tensor<S>({feature_width, fc1.in_dim});
  fc1.b = Tensor<S>({feature_width});
  netdetail::he_init(fc1.w, fc1.in_dim, rng);
  net.layers.push_back(std::move(fc1));
  net.layers.push_back({LayerKind::Relu, "relu"});
  net.feature_layer = int(net.layers.size()) - 1;
  Layer<S> fc2;
  fc2.kind = LayerKind::Fc;
  fc2.name = "fc2";
  fc2.in_dim = feature_width;
  fc2.out_dim = 1;
  fc2.w = Tensor<S>({1, feature_width});
  fc2.b = Tensor<S>({1});
  netdetail::he_init(fc2.w, feature_width, rng);
  net.layers.push_back(std::move(fc2));
  return net;
}

template <typename To, typename From>
Network<To> network_cast(const Network<From>& src) {
  Network<To> out;
  out.in_c = src.in_c;
  out.in_h = src.in_h;
  out.in_w = src.in_w;
  out.feature_layer = src.feature_layer;
  for (const auto& l : src.layers) {
    Layer<To> nl;
    nl.kind = l.kind;
    nl.name = l.name;
    nl.in_c = l.in_c;
    nl.out_c = l.out_c;
    nl.ksize = l.ksize;
    nl.in_dim = l.in_dim;
    nl.out_dim = l.out_dim;
    nl.w.dims = l.w.dims;
    nl.w.v.assign(l.w.v.begin(), l.w.v.end());
    nl.b.dims = l.b.dims;
    nl.b.v.assign(l.b.v.begin(), l.b.v.end());
    out.layers.push_back(std::move(nl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename S>
struct ParamGrads {
  std::vector<Tensor<S>> w, b;  // aligned with network layers

  static ParamGrads like(const Network<S>& net) {
    ParamGrads g;
    for (const auto& l : net.layers) {
      g.w.push_back(Tensor<S>(l.w.dims.empty() ? std::vector<int>{0} : l.w.dims));
      g.b.push_back(Tensor<S>(l.b.dims.empty() ? std::vector<int>{0} : l.b.dims));
    }
    return g;
  }
  void zero() {
    for (auto& t : w) std::fill(t.v.begin(), t.v.end(), S(0));
    for (auto& t : b) std::fill(t.v.begin(), t.v.end(), S(0));
  }
  void add(const ParamGrads& o) {
    for (size_t i = 0; i < w.size(); ++i) {
      for (size_t j = 0; j < w[i].v.size(); ++j) w[i].v[j] += o.w[i].v[j];
      for (size_t j = 0; j < b[i].v.size(); ++j) b[i].v[j] += o.b[i].v[j];
    }
  }
};

template <typename S>
struct Workspace {
  std::vector<Tensor<S>> act;               // act[0] input, act[i+1] layer i output
  std::vector<Tensor<S>> dact;
  std::vector<Tensor<S>> cols;              // per-layer im2col buffers
  std::vector<Tensor<S>> dcols;
  std::vector<std::vector<int>> pool_arg;   // per-layer argmax indices
};

namespace netdetail {

template <typename S>
void ensure(Tensor<S>& t, const std::vector<int>& dims) {
  if (t.dims != dims) {
    t.dims = dims;
    size_t n = 1;
    for (int d : dims) n *= size_t(d);
    t.v.assign(n, S(0));
  }
}

// Register-blocked GEMM tile: C[m0+MR x n0+NR] += A-slice * B-slice, with the
// accumulator kept in registers across the whole K loop. A is read with
// arbitrary strides (scalar broadcasts), B rows must be contiguous.
template <typename S, int MR, int NR>
inline void gemm_tile(int K, const S* __restrict a, size_t a_m_stride, size_t a_r_stride,
                      const S* __restrict b, size_t ldb, S* __restrict c, size_t ldc) {
  S acc[MR][NR] = {};
  for (int r = 0; r < K; ++r) {
    const S* brow = b + size_t(r) * ldb;
    for (int m = 0; m < MR; ++m) {
      S av = a[size_t(m) * a_m_stride + size_t(r) * a_r_stride];
      for (int j = 0; j < NR; ++j) acc[m][j] += av * brow[j];
    }
  }
  for (int m = 0; m < MR; ++m)
    for (int j = 0; j < NR; ++j) c[size_t(m) * ldc + j] += acc[m][j];
}

// C[M x N] += A[M x K] * B[K x N] where A is strided and B, C are row-major
// contiguous. Tiles of 4x32 cover the hot shapes; edges fall back to smaller
// tiles. Accumulation order is fixed and independent of the tiling.
template <typename S>
void gemm_strided_a(int M, int N, int K, const S* a, size_t a_m_stride, size_t a_r_stride,
                    const S* b, S* c) {
  constexpr int NR = 32;
  int n0 = 0;
  for (; n0 + NR <= N; n0 += NR) {
    int m0 = 0;
    for (; m0 + 4 <= M; m0 += 4)
      gemm_tile<S, 4, NR>(K, a + size_t(m0) * a_m_stride, a_m_stride, a_r_stride, b + n0,
                          size_t(N), c + size_t(m0) * N + n0, size_t(N));
    for (; m0 < M; ++m0)
      gemm_tile<S, 1, NR>(K, a + size_t(m0) * a_m_stride, a_m_stride, a_r_stride, b + n0,
                          size_t(N), c + size_t(m0) * N + n0, size_t(N));
  }
  if (n0 < N) {  // narrow right edge, scalar accumulators
    for (int m = 0; m < M; ++m)
      for (int j = n0; j < N; ++j) {
        S acc = S(0);
        for (int r = 0; r < K; ++r)
          acc += a[size_t(m) * a_m_stride + size_t(r) * a_r_stride] * b[size_t(r) * N + j];
        c[size_t(m) * N + j] += acc;
      }
  }
}

// C[M x K2] += A[M x N] * B[K2 x N]^T as simultaneous blocked row dots; the
// 4x4 tiling reads each A and B row once per opposing block instead of once
// per output element.
template <typename S, int MB, int RB>
inline void gemm_abt_tile(int N, const S* __restrict a, const S* __restrict b, S* __restrict c,
                          size_t ldc) {
  constexpr int L = 16;
  S lanes[MB][RB][L] = {};
  int i = 0;
  for (; i + L <= N; i += L)
    for (int m = 0; m < MB; ++m)
      for (int r = 0; r < RB; ++r)
        for (int j = 0; j < L; ++j)
          lanes[m][r][j] += a[size_t(m) * N + i + j] * b[size_t(r) * N + i + j];
  for (; i < N; ++i)
    for (int m = 0; m < MB; ++m)
      for (int r = 0; r < RB; ++r) lanes[m][r][0] += a[size_t(m) * N + i] * b[size_t(r) * N + i];
  for (int m = 0; m < MB; ++m)
    for (int r = 0; r < RB; ++r) {
      S s = S(0);
      for (int j = 0; j < L; ++j) s += lanes[m][r][j];
      c[size_t(m) * ldc + size_t(r)] += s;
    }
}

template <typename S>
void gemm_abt(int M, int K2, int N, const S* a, const S* b, S* c) {
  int m0 = 0;
  for (; m0 + 4 <= M; m0 += 4) {
    int r0 = 0;
    for (; r0 + 4 <= K2; r0 += 4)
      gemm_abt_tile<S, 4, 4>(N, a + size_t(m0) * N, b + size_t(r0) * N,
                             c + size_t(m0) * K2 + r0, size_t(K2));
    for (; r0 < K2; ++r0)
      gemm_abt_tile<S, 4, 1>(N, a + size_t(m0) * N, b + size_t(r0) * N,
                             c + size_t(m0) * K2 + r0, size_t(K2));
  }
  for (; m0 < M; ++m0) {
    int r0 = 0;
    for (; r0 + 4 <= K2; r0 += 4)
      gemm_abt_tile<S, 1, 4>(N, a + size_t(m0) * N, b + size_t(r0) * N,
                             c + size_t(m0) * K2 + r0, size_t(K2));
    for (; r0 < K2; ++r0)
      c[size_t(m0) * K2 + size_t(r0)] += dot(N, a + size_t(m0) * N, b + size_t(r0) * N);
  }
}

// im2col: row r = (c*k+ky)*k+kx holds the (ky,kx)-shifted view of channel c,
// flattened over output positions n = y*W+x. Padding is materialized as zeros.
template <typename S>
void im2col(const S* __restrict in, int C, int H, int W, int k, S* __restrict cols) {
  const int p = k / 2;
  const size_t N = size_t(H) * W;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S* dst = cols + ((size_t(c) * k + ky) * k + kx) * N;
        const int sy = ky - p, sx = kx - p;
        for (int y = 0; y < H; ++y) {
          S* drow = dst + size_t(y) * W;
          const int yy = y + sy;
          if (yy < 0 || yy >= H) {
            std::fill(drow, drow + W, S(0));
            continue;
          }
          const S* srow = in + (size_t(c) * H + yy) * W;
          const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
          for (int x = 0; x < x0; ++x) drow[x] = S(0);
          if (x1 > x0) std::memcpy(drow + x0, srow + x0 + sx, size_t(x1 - x0) * sizeof(S));
          for (int x = x1; x < W; ++x) drow[x] = S(0);
        }
      }
}

// transpose of im2col: scatters column-space gradients back onto the input
template <typename S>
void col2im(const S* __restrict cols, int C, int H, int W, int k, S* __restrict din) {
  const int p = k / 2;
  const size_t N = size_t(H) * W;
  std::fill(din, din + size_t(C) * N, S(0));
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S* src = cols + ((size_t(c) * k + ky) * k + kx) * N;
        const int sy = ky - p, sx = kx - p;
        for (int y = 0; y < H; ++y) {
          const int yy = y + sy;
          if (yy < 0 || yy >= H) continue;
          S* drow = din + (size_t(c) * H + yy) * W;
          const S* srow = src + size_t(y) * W;
          const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
          for (int x = x0; x < x1; ++x) drow[x + sx] += srow[x];
        }
      }
}

template <typename S>
void conv_forward(const Layer<S>& l, const Tensor<S>& in, Tensor<S>& out, Tensor<S>& cols) {
  const int C = l.in_c, H = in.dims[1], W = in.dims[2];
  const int k = l.ksize;
  const int K = C * k * k;
  const size_t N = size_t(H) * W;
  ensure(cols, {K, H, W});
  im2col(in.v.data(), C, H, W, k, cols.v.data());
  ensure(out, {l.out_c, H, W});
  for (int oc = 0; oc < l.out_c; ++oc) {
    S* outp = &out.v[size_t(oc) * N];
    std::fill(outp, outp + N, l.b.v[size_t(oc)]);
  }
  // out += W * cols
  gemm_strided_a(l.out_c, int(N), K, l.w.v.data(), size_t(K), 1, cols.v.data(), out.v.data());
}

template <typename S>
void conv_backward(const Layer<S>& l, const Tensor<S>& cols, const Tensor<S>& dout,
                   Tensor<S>& din, Tensor<S>& dcols, Tensor<S>* dw, Tensor<S>* db,
                   bool want_din) {
  const int C = l.in_c, H = dout.dims[1], W = dout.dims[2];
  const int k = l.ksize;
  const int K = C * k * k;
  const size_t N = size_t(H) * W;
  if (db) {
    for (int oc = 0; oc < l.out_c; ++oc) {
      const S* doutp = &dout.v[size_t(oc) * N];
      S acc = S(0);
      constexpr int L = 16;
      S lanes[L] = {S(0)};
      size_t i = 0;
      for (; i + L <= N; i += L)
        for (int j = 0; j < L; ++j) lanes[j] += doutp[i + j];
      for (; i < N; ++i) acc += doutp[i];
      for (int j = 0; j < L; ++j) acc += lanes[j];
      db->v[size_t(oc)] += acc;
    }
  }
  if (dw) gemm_abt(l.out_c, K, int(N), dout.v.data(), cols.v.data(), dw->v.data());
  if (want_din) {
    ensure(dcols, {K, H, W});
    std::fill(dcols.v.begin(), dcols.v.end(), S(0));
    // dcols = W^T * dout: A indexed transposed via strides
    gemm_strided_a(K, int(N), l.out_c, l.w.v.data(), 1, size_t(K), dout.v.data(),
                   dcols.v.data());
    ensure(din, {C, H, W});
    col2im(dcols.v.data(), C, H, W, k, din.v.data());
  }
}

}  // namespace netdetail

// Runs the network on a CHW input tensor; returns the scalar logit and leaves
// all activations in the workspace for a subsequent backward pass.
template <typename S>
double forward(const Network<S>& net, const Tensor<S>& input, Workspace<S>& ws) {
  if (input.dims != std::vector<int>{net.in_c, net.in_h, net.in_w})
    throw DimensionError("forward: input tensor does not match the network input shape");
  const size_t L = net.layers.size();
  ws.act.resize(L + 1);
  ws.cols.resize(L);
  ws.dcols.resize(L);
  ws.pool_arg.resize(L);
  ws.act[0] = input;
  for (size_t li = 0; li < L; ++li) {
    const Layer<S>& l = net.layers[li];
    const Tensor<S>& in = ws.act[li];
    Tensor<S>& out = ws.act[li + 1];
    switch (l.kind) {
      case LayerKind::Conv: {
        if (in.dims.size() != 3 || in.dims[0] != l.in_c)
          throw DimensionError("forward: conv input mismatch at layer " + std::to_string(li));
        netdetail::conv_forward(l, in, out, ws.cols[li]);
        break;
      }
      case LayerKind::Relu: {
        netdetail::ensure(out, in.dims);
        for (size_t i = 0; i < in.v.size(); ++i) out.v[i] = in.v[i] > S(0) ? in.v[i] : S(0);
        break;
      }
      case LayerKind::MaxPool: {
        if (in.dims.size() != 3 || in.dims[1] % 2 || in.dims[2] % 2)
          throw DimensionError("forward: maxpool needs even CHW input at layer " +
                               std::to_string(li));
        int C = in.dims[0], H = in.dims[1], W = in.dims[2];
        netdetail::ensure(out, {C, H / 2, W / 2});
        ws.pool_arg[li].assign(out.v.size(), 0);
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H / 2; ++y)
            for (int x = 0; x < W / 2; ++x) {
              size_t base = (size_t(c) * H + 2 * y) * W + 2 * x;
              size_t cand[4] = {base, base + 1, base + W, base + W + 1};
              size_t best = cand[0];
              for (int t = 1; t < 4; ++t)
                if (in.v[cand[t]] > in.v[best]) best = cand[t];
              size_t oi = (size_t(c) * (H / 2) + y) * (W / 2) + x;
              out.v[oi] = in.v[best];
              ws.pool_arg[li][oi] = int(best);
            }
        break;
      }
      case LayerKind::Fc: {
        if (int(in.numel()) != l.in_dim)
          throw DimensionError("forward: fc input size mismatch at layer " + std::to_string(li));
        netdetail::ensure(out, {l.out_dim});
        for (int o = 0; o < l.out_dim; ++o)
          out.v[size_t(o)] =
              l.b.v[size_t(o)] + netdetail::dot(l.in_dim, &l.w.v[size_t(o) * l.in_dim], in.v.data());
        break;
      }
    }
  }
  if (ws.act[L].numel() != 1)
    throw DimensionError("forward: network does not end in a scalar output");
  return double(ws.act[L].v[0]);
}

// Backpropagates d(logit)=seed. Parameter gradients are accumulated into
// grads when given; the input gradient lands in ws.dact[0] when requested.
template <typename S>
void backward(const Network<S>& net, Workspace<S>& ws, S seed, ParamGrads<S>* grads,
              bool want_input_grad) {
  const size_t L = net.layers.size();
  ws.dact.resize(L + 1);
  netdetail::ensure(ws.dact[L], ws.act[L].dims);
  std::fill(ws.dact[L].v.begin(), ws.dact[L].v.end(), S(0));
  ws.dact[L].v[0] = seed;
  for (size_t li = L; li-- > 0;) {
    const Layer<S>& l = net.layers[li];
    const Tensor<S>& in = ws.act[li];
    const Tensor<S>& out = ws.act[li + 1];
    const Tensor<S>& dout = ws.dact[li + 1];
    Tensor<S>& din = ws.dact[li];
    bool want_din = want_input_grad || li > 0;
    switch (l.kind) {
      case LayerKind::Conv:
        netdetail::conv_backward(l, ws.cols[li], dout, din, ws.dcols[li],
                                 grads ? &grads->w[li] : nullptr, grads ? &grads->b[li] : nullptr,
                                 want_din);
        break;
      case LayerKind::Relu: {
        netdetail::ensure(din, in.dims);
        for (size_t i = 0; i < in.v.size(); ++i)
          din.v[i] = out.v[i] > S(0) ? dout.v[i] : S(0);
        break;
      }
      case LayerKind::MaxPool: {
        netdetail::ensure(din, in.dims);
        std::fill(din.v.begin(), din.v.end(), S(0));
        for (size_t oi = 0; oi < dout.v.size(); ++oi)
          din.v[size_t(ws.pool_arg[li][oi])] += dout.v[oi];
        break;
      }
      case LayerKind::Fc: {
        if (grads) {
          for (int o = 0; o < l.out_dim; ++o) {
            S g = dout.v[size_t(o)];
            grads->b[li].v[size_t(o)] += g;
            netdetail::axpy(l.in_dim, g, in.v.data(), &grads->w[li].v[size_t(o) * l.in_dim]);
          }
        }
        if (want_din) {
          netdetail::ensure(din, in.dims);
          std::fill(din.v.begin(), din.v.end(), S(0));
          for (int o = 0; o < l.out_dim; ++o)
            netdetail::axpy(l.in_dim, dout.v[size_t(o)], &l.w.v[size_t(o) * l.in_dim],
                            din.v.data());
        }
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Image preprocessing (the caller-visible resize step) and its transpose
// ---------------------------------------------------------------------------

// HWC image -> CHW tensor at the network input resolution, bilinear.
template <typename S>
Tensor<S> preprocess(const Network<S>& net, const Image& img) {
  Tensor<S> t({net.in_c, net.in_h, net.in_w});
  const double sx = double(img.width) / net.in_w, sy = double(img.height) / net.in_h;
  for (int y = 0; y < net.in_h; ++y) {
    double v = (y + 0.5) * sy - 0.5;
    double fv = std::floor(v);
    int y0 = detail::clampi(int(fv), 0, img.height - 1);
    int y1 = detail::clampi(int(fv) + 1, 0, img.height - 1);
    double ay = v - fv;
    for (int x = 0; x < net.in_w; ++x) {
      double u = (x + 0.5) * sx - 0.5;
      double fu = std::floor(u);
      int x0 = detail::clampi(int(fu), 0, img.width - 1);
      int x1 = detail::clampi(int(fu) + 1, 0, img.width - 1);
      double ax = u - fu;
      for (int c = 0; c < 3; ++c) {
        double top = (1 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
        double bot = (1 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
        t.v[(size_t(c) * net.in_h + y) * net.in_w + x] = S((1 - ay) * top + ay * bot);
      }
    }
  }
  return t;
}

// Same resample on an arbitrary CHW tensor (values may lie outside [0,1]).
template <typename S>
Tensor<S> resample_chw(const Tensor<S>& src, int dst_h, int dst_w) {
  const int C = src.dims[0], H = src.dims[1], W = src.dims[2];
  if (H == dst_h && W == dst_w) return src;
  Tensor<S> t({C, dst_h, dst_w});
  const double sx = double(W) / dst_w, sy = double(H) / dst_h;
  for (int y = 0; y < dst_h; ++y) {
    double v = (y + 0.5) * sy - 0.5;
    double fv = std::floor(v);
    int y0 = detail::clampi(int(fv), 0, H - 1), y1 = detail::clampi(int(fv) + 1, 0, H - 1);
    double ay = v - fv;
    for (int x = 0; x < dst_w; ++x) {
      double u = (x + 0.5) * sx - 0.5;
      double fu = std::floor(u);
      int x0 = detail::clampi(int(fu), 0, W - 1), x1 = detail::clampi(int(fu) + 1, 0, W - 1);
      double ax = u - fu;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int xx, int yy) { return double(src.v[(size_t(c) * H + yy) * W + xx]); };
        double top = (1 - ax) * at(x0, y0) + ax * at(x1, y0);
        double bot = (1 - ax) * at(x0, y1) + ax * at(x1, y1);
        t.v[(size_t(c) * dst_h + y) * dst_w + x] = S((1 - ay) * top + ay * bot);
      }
    }
  }
  return t;
}

// Transpose of resample_chw: scatters a gradient at (dst_h, dst_w) back to
// (src_h, src_w) through the same taps and weights.
template <typename S>
Tensor<S> resample_chw_backward(const Tensor<S>& grad, int src_h, int src_w) {
  const int C = grad.dims[0], H2 = grad.dims[1], W2 = grad.dims[2];
  if (H2 == src_h && W2 == src_w) return grad;
  Tensor<S> out({C, src_h, src_w});
  const double sx = double(src_w) / W2, sy = double(src_h) / H2;
  for (int y = 0; y < H2; ++y) {
    double v = (y + 0.5) * sy - 0.5;
    double fv = std::floor(v);
    int y0 = detail::clampi(int(fv), 0, src_h - 1), y1 = detail::clampi(int(fv) + 1, 0, src_h - 1);
    double ay = v - fv;
    for (int x = 0; x < W2; ++x) {
      double u = (x + 0.5) * sx - 0.5;
      double fu = std::floor(u);
      int x0 = detail::clampi(int(fu), 0, src_w - 1), x1 = detail::clampi(int(fu) + 1, 0, src_w - 1);
      double ax = u - fu;
      for (int c = 0; c < 3; ++c) {
        S g = grad.v[(size_t(c) * H2 + y) * W2 + x];
        out.v[(size_t(c) * src_h + y0) * src_w + x0] += S((1 - ax) * (1 - ay)) * g;
        out.v[(size_t(c) * src_h + y0) * src_w + x1] += S(ax * (1 - ay)) * g;
        out.v[(size_t(c) * src_h + y1) * src_w + x0] += S((1 - ax) * ay) * g;
        out.v[(size_t(c) * src_h + y1) * src_w + x1] += S(ax * ay) * g;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Public scoring surface
// ---------------------------------------------------------------------------

// Realism score: pre-sigmoid log-odds of the "natural" class.
template <typename S>
double forward_score(const Network<S>& net, const Image& img) {
  Workspace<S> ws;
  return forward(net, preprocess(net, img), ws);
}

// Gradient of forward_score with respect to every input channel value, at the
// image's own resolution (backpropagated through the preprocessing resize).
template <typename S>
Tensor<S> input_gradient(const Network<S>& net, const Image& img) {
  Workspace<S> ws;
  forward(net, preprocess(net, img), ws);
  backward(net, ws, S(1), static_cast<ParamGrads<S>*>(nullptr), true);
  Tensor<S> g = resample_chw_backward(ws.dact[0], img.height, img.width);
  // CHW -> HWC for pixel-space consumers
  Tensor<S> out({img.height, img.width, 3});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.v[(size_t(y) * img.width + x) * 3 + c] =
            g.v[(size_t(c) * img.height + y) * img.width + x];
  return out;
}

// Activations of the penultimate fully-connected layer, post-nonlinearity.
template <typename S>
std::vector<S> extract_features(const Network<S>& net, const Image& img) {
  if (net.feature_layer < 0) throw ParamError("extract_features: no feature layer");
  Workspace<S> ws;
  forward(net, preprocess(net, img), ws);
  return ws.act[size_t(net.feature_layer) + 1].v;
}

// ---------------------------------------------------------------------------
// Serialization (f32, magic RLNW1)
// ---------------------------------------------------------------------------

namespace netdetail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v), (unsigned char)(v >> 8), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("weights file: truncated");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace netdetail

inline void save_network(const Network<float>& net, const std::filesystem::path& path) {
  static_assert(sizeof(float) == 4);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_network: cannot write " + path.string());
  os.write("RLNW1", 5);
  std::string fp = net.fingerprint();
  netdetail::put_u32(os, uint32_t(fp.size()));
  os.write(fp.data(), std::streamsize(fp.size()));
  uint32_t ntensors = 0;
  for (const auto& l : net.layers) ntensors += (l.w.numel() ? 1 : 0) + (l.b.numel() ? 1 : 0);
  netdetail::put_u32(os, ntensors);
  auto write_tensor = [&](const std::string& name, const Tensor<float>& t) {
    netdetail::put_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    os.put(char(0));  // dtype f32
    os.put(char(t.dims.size()));
    for (int d : t.dims) netdetail::put_u32(os, uint32_t(d));
    os.write(reinterpret_cast<const char*>(t.v.data()), std::streamsize(t.v.size() * 4));
  };
  for (size_t li = 0; li < net.layers.size(); ++li) {
    const auto& l = net.layers[li];
    if (l.w.numel()) write_tensor(l.name + ".w", l.w);
    if (l.b.numel()) write_tensor(l.name + ".b", l.b);
  }
  if (!os) throw IoError("save_network: write failed for " + path.string());
}

// Rebuilds a network skeleton from its fingerprint string.
inline Network<float> network_from_fingerprint(const std::string& fp) {
  Network<float> net;
  net.layers.clear();
  std::istringstream is(fp);
  std::string tok;
  int cur_c = 3, cur_h = 0, cur_w = 0;
  int conv_id = 0, fc_id = 0;
  while (std::getline(is, tok, '|')) {
    if (tok.rfind("in:", 0) == 0) {
      if (std::sscanf(tok.c_str(), "in:%dx%dx%d", &net.in_c, &net.in_h, &net.in_w) != 3)
        throw IoError("weights file: bad input spec " + tok);
      cur_c = net.in_c;
      cur_h = net.in_h;
      cur_w = net.in_w;
    } else if (tok.rfind("conv:", 0) == 0) {
      int k = 0, oc = 0;
      if (std::sscanf(tok.c_str(), "conv:%dx%d", &k, &oc) != 2)
        throw IoError("weights file: bad conv spec " + tok);
      Layer<float> l;
      l.kind = LayerKind::Conv;
      l.name = "conv" + std::to_string(++conv_id);
      l.in_c = cur_c;
      l.out_c = oc;
      l.ksize = k;
      l.w = Tensor<float>({oc, cur_c, k, k});
      l.b = Tensor<float>({oc});
      net.layers.push_back(std::move(l));
      cur_c = oc;
    } else if (tok == "relu") {
      net.layers.push_back({LayerKind::Relu, "relu"});
    } else if (tok.rfind("pool", 0) == 0) {
      net.layers.push_back({LayerKind::MaxPool, "pool"});
      cur_h /= 2;
      cur_w /= 2;
    } else if (tok.rfind("fc:", 0) == 0) {
      int od = 0;
      if (std::sscanf(tok.c_str(), "fc:%d", &od) != 1)
        throw IoError("weights file: bad fc spec " + tok);
      Layer<float> l;
      l.kind = LayerKind::Fc;
      l.name = "fc" + std::to_string(++fc_id);
      l.in_dim = cur_c * cur_h * cur_w;
      if (cur_h == 0) l.in_dim = cur_c;  // after a previous fc
      l.out_dim = od;
      l.w = Tensor<float>({od, l.in_dim});
      l.b = Tensor<float>({od});
      net.layers.push_back(std::move(l));
      cur_c = od;
      cur_h = cur_w = 0;
    } else if (tok.rfind("feat:", 0) == 0) {
      net.feature_layer = std::atoi(tok.c_str() + 5);
    } else {
      throw IoError("weights file: unknown fingerprint token " + tok);
    }
  }
  return net;
}

inline Network<float> load_network(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_network: cannot open " + path.string());
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "RLNW1", 5) != 0)
    throw IoError("load_network: bad magic in " + path.string());
  uint32_t fplen = netdetail::get_u32(is);
  std::string fp(fplen, '\0');
  is.read(fp.data(), fplen);
  Network<float> net = network_from_fingerprint(fp);
  uint32_t ntensors = netdetail::get_u32(is);
  for (uint32_t t = 0; t < ntensors; ++t) {
    uint32_t namelen = netdetail::get_u32(is);
    std::string name(namelen, '\0');
    is.read(name.data(), namelen);
    int dtype = is.get();
    int rank = is.get();
    if (dtype != 0) throw IoError("load_network: unsupported dtype");
    std::vector<int> dims(static_cast<size_t>(rank));
    size_t n = 1;
    for (int i = 0; i < rank; ++i) {
      dims[size_t(i)] = int(netdetail::get_u32(is));
      n *= size_t(dims[size_t(i)]);
    }
    Tensor<float>* dst = nullptr;
    for (auto& l : net.layers) {
      if (name == l.name + ".w") dst = &l.w;
      if (name == l.name + ".b") dst = &l.b;
    }
    if (!dst) throw IoError("load_network: unknown tensor " + name);
    if (dst->dims != dims) throw IoError("load_network: shape mismatch for " + name);
    is.read(reinterpret_cast<char*>(dst->v.data()), std::streamsize(n * 4));
    if (!is) throw IoError("load_network: truncated tensor " + name);
  }
  if (net.fingerprint() != fp) throw IoError("load_network: fingerprint mismatch after rebuild");
  return net;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double rate = 0.003;
  double decay = 0.1;
  int decay_step = 3000;
  double momentum = 0.9;
  int batch = 32;
  int max_iterations = 6000;
  double head_lr_mult = 10.0;
  uint64_t seed = 0;

  void validate() const {
    if (rate <= 0) throw ParamError("TrainConfig: rate must be > 0");
    if (momentum <= 0 || momentum >= 1) throw ParamError("TrainConfig: momentum must be in (0,1)");
    if (batch < 1) throw ParamError("TrainConfig: batch must be >= 1");
    if (decay_step < 1) throw ParamError("TrainConfig: decay_step must be >= 1");
  }
};

// Named presets. "desk" trains the from-scratch model in minutes on a CPU;
// "paper-vgg" preserves the published fine-tuning schedule for reference.
inline TrainConfig train_preset(const std::string& name) {
  if (name == "desk") return TrainConfig{0.01, 0.1, 2000, 0.9, 32, 2500, 10.0, 0};
  if (name == "paper-vgg") return TrainConfig{0.0001, 0.1, 10000, 0.9, 50, 25000, 10.0, 0};
  if (name == "smoke") return TrainConfig{0.01, 0.1, 300, 0.9, 16, 500, 10.0, 0};
  if (name == "mining") return TrainConfig{0.001, 0.1, 600, 0.9, 32, 1200, 10.0, 0};
  throw ParamError("unknown training preset: " + name);
}

struct TrainResult {
  Network<float> params;
  std::vector<double> loss_trace;  // mean batch loss per iteration
};

struct TrainSet {
  std::vector<Tensor<float>> inputs;
  std::vector<int> labels;  // 1 natural, 0 composite
};

inline TrainSet load_train_set(const Network<float>& net, const DatasetManifest& manifest) {
  if (manifest.records.empty()) throw ParamError("train: empty manifest");
  TrainSet set;
  set.inputs.resize(manifest.records.size());
  set.labels.resize(manifest.records.size());
  parallel_for(int64_t(manifest.records.size()), [&](int64_t i) {
    const ManifestRecord& r = manifest.records[size_t(i)];
    Image img = read_image(manifest.resolve(r));
    set.inputs[size_t(i)] = preprocess(net, img);
    set.labels[size_t(i)] = r.label == "natural" ? 1 : 0;
  });
  bool has0 = false, has1 = false;
  for (int l : set.labels) (l ? has1 : has0) = true;
  if (!has0 || !has1) throw ParamError("train: manifest must contain both pretext classes");
  return set;
}

// SGD with momentum on the logistic loss over pretext labels. Deterministic in
// (params0, manifest order, cfg.seed); per-sample gradients are accumulated in
// a fixed group order so results do not depend on the thread count.
inline TrainResult train(const Network<float>& params0, const DatasetManifest& manifest,
                         const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  result.params = params0;
  if (cfg.max_iterations == 0) return result;
  TrainSet set = load_train_set(params0, manifest);

  Network<float>& net = result.params;
  int head_fc = -1;
  for (size_t li = 0; li < net.layers.size(); ++li)
    if (net.layers[li].kind == LayerKind::Fc) head_fc = int(li);

  ParamGrads<float> velocity = ParamGrads<float>::like(net);
  constexpr int kGroups = 8;
  std::vector<ParamGrads<float>> group_grads;
  for (int g = 0; g < kGroups; ++g) group_grads.push_back(ParamGrads<float>::like(net));
  std::vector<Workspace<float>> group_ws(kGroups);
  std::vector<double> group_loss(kGroups);

  Rng shuffle_rng(sub_seed(cfg.seed, "shuffle"));
  std::vector<size_t> order(set.inputs.size());
  std::iota(order.begin(), order.end(), size_t(0));
  shuffle_rng.shuffle(order);
  size_t cursor = 0;

  std::vector<size_t> batch_idx(size_t(cfg.batch));
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    for (int bi = 0; bi < cfg.batch; ++bi) {
      if (cursor >= order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch_idx[size_t(bi)] = order[cursor++];
    }

    parallel_for(kGroups, [&](int64_t g) {
      group_grads[size_t(g)].zero();
      group_loss[size_t(g)] = 0;
      int lo = int(g) * cfg.batch / kGroups, hi = int(g + 1) * cfg.batch / kGroups;
      for (int bi = lo; bi < hi; ++bi) {
        size_t si = batch_idx[size_t(bi)];
        double z = forward(net, set.inputs[si], group_ws[size_t(g)]);
        double y = set.labels[si];
        double p = 1.0 / (1.0 + std::exp(-z));
        double loss = (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - y * z;
        group_loss[size_t(g)] += loss;
        backward(net, group_ws[size_t(g)], float(p - y), &group_grads[size_t(g)], false);
      }
    });

    ParamGrads<float>& total = group_grads[0];
    for (int g = 1; g < kGroups; ++g) total.add(group_grads[size_t(g)]);
    double mean_loss = 0;
    for (int g = 0; g < kGroups; ++g) mean_loss += group_loss[size_t(g)];
    mean_loss /= double(cfg.batch);
    result.loss_trace.push_back(mean_loss);

    double lr = cfg.rate * std::pow(cfg.decay, double(iter / cfg.decay_step));
    for (size_t li = 0; li < net.layers.size(); ++li) {
      Layer<float>& l = net.layers[li];
      if (!l.w.numel()) continue;
      float eff = float(lr * (int(li) == head_fc ? cfg.head_lr_mult : 1.0));
      float inv_batch = 1.f / float(cfg.batch);
      for (size_t j = 0; j < l.w.v.size(); ++j) {
        float v = float(cfg.momentum) * velocity.w[li].v[j] - eff * total.w[li].v[j] * inv_batch;
        velocity.w[li].v[j] = v;
        l.w.v[j] += v;
      }
      for (size_t j = 0; j < l.b.v.size(); ++j) {
        float v = float(cfg.momentum) * velocity.b[li].v[j] - eff * total.b[li].v[j] * inv_batch;
        velocity.b[li].v[j] = v;
        l.b.v[j] += v;
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear head (SVM-style adaptation on extracted features)
// ---------------------------------------------------------------------------

struct LinearHead {
  std::vector<double> w;
  double b = 0;

  // signed distance to the hyperplane
  double score(const std::vector<double>& x) const {
    double nrm = 0;
    for (double wi : w) nrm += wi * wi;
    nrm = std::sqrt(nrm);
    double dot = b;
    for (size_t i = 0; i < w.size(); ++i) dot += w[i] * x[i];
    return nrm > 0 ? dot / nrm : 0.0;
  }
};

// L2-regularized hinge loss, deterministic full-batch sub-gradient descent on
// (1/2C)||w||^2 + mean hinge. Duplicating every sample leaves the objective,
// and therefore the boundary, unchanged.
inline LinearHead fit_linear_head(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels, double C, uint64_t seed,
                                  int iterations = 2000) {
  (void)seed;
  if (C <= 0) throw ParamError("fit_linear_head: C must be > 0 (regularizer undefined at 0)");
  if (features.empty() || features.size() != labels.size())
    throw ParamError("fit_linear_head: features/labels mismatch");
  bool has0 = false, has1 = false;
  for (int l : labels) (l ? has1 : has0) = true;
  if (!has0 || !has1) throw ParamError("fit_linear_head: both classes required");

  const size_t n = features.size(), d = features[0].size();
  LinearHead head;
  head.w.assign(d, 0.0);
  std::vector<double> gw(d);
  for (int t = 0; t < iterations; ++t) {
    for (size_t j = 0; j < d; ++j) gw[j] = head.w[j] / C;
    double gb = 0;
    for (size_t i = 0; i < n; ++i) {
      double y = labels[i] ? 1.0 : -1.0;
      double raw = head.b;
      for (size_t j = 0; j < d; ++j) raw += head.w[j] * features[i][j];
      if (raw * y < 1.0) {
        for (size_t j = 0; j < d; ++j) gw[j] -= y * features[i][j] / double(n);
        gb -= y / double(n);
      }
    }
    double eta = C / double(t + 1);
    for (size_t j = 0; j < d; ++j) head.w[j] -= eta * gw[j];
    head.b -= eta * gb;
  }
  return head;
}

}  // namespace rforge
