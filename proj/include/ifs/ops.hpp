#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE  // parallelism lives at the batch level
#endif

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <vector>

#include "ifs/error.hpp"
#include "ifs/tensor.hpp"

namespace ifs {

namespace detail {

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;

// Gradient reductions over the batch run in a fixed number of chunks that is
// independent of the thread count, and partials are combined in chunk order,
// so results are bitwise identical for any --jobs setting.
inline constexpr int kReduceChunks = 8;

inline constexpr std::int64_t kParallelCutoff = 1 << 15;

// Gathers sliding-window patches of a C x Himg x Wimg image into a
// (C*kh*kw) x (OH*OW) matrix; out-of-bounds taps read zero. Column q walks
// the OH x OW output grid row-major; row r = (c*kh + i)*kw + j.
template <class S>
void im2col(const S* img, int C, int Himg, int Wimg, int kh, int kw, int stride,
            int pad, int OH, int OW, S* col) {
  const std::int64_t plane = static_cast<std::int64_t>(Himg) * Wimg;
  const std::int64_t cols = static_cast<std::int64_t>(OH) * OW;
  std::int64_t r = 0;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j, ++r) {
        S* dst = col + r * cols;
        const S* src = img + c * plane;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= Himg) {
            for (int ow = 0; ow < OW; ++ow) *dst++ = S(0);
            continue;
          }
          const S* row = src + static_cast<std::int64_t>(ih) * Wimg;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + j;
            *dst++ = (iw < 0 || iw >= Wimg) ? S(0) : row[iw];
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col. The caller zeroes img beforehand.
template <class S>
void col2im(const S* col, int C, int Himg, int Wimg, int kh, int kw, int stride,
            int pad, int OH, int OW, S* img) {
  const std::int64_t plane = static_cast<std::int64_t>(Himg) * Wimg;
  const std::int64_t cols = static_cast<std::int64_t>(OH) * OW;
  std::int64_t r = 0;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j, ++r) {
        const S* src = col + r * cols;
        S* dst = img + c * plane;
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + i;
          if (ih < 0 || ih >= Himg) {
            src += OW;
            continue;
          }
          S* row = dst + static_cast<std::int64_t>(ih) * Wimg;
          for (int ow = 0; ow < OW; ++ow) {
            const int iw = ow * stride - pad + j;
            if (iw >= 0 && iw < Wimg) row[iw] += src[ow];
          }
          src += OW;
        }
      }
    }
  }
}

inline std::pair<std::int64_t, std::int64_t> chunk_range(std::int64_t n, int chunk) {
  const std::int64_t lo = n * chunk / kReduceChunks;
  const std::int64_t hi = n * (chunk + 1) / kReduceChunks;
  return {lo, hi};
}

template <class S>
void combine_chunks(const std::vector<std::vector<S>>& partials, std::vector<S>& out) {
  for (const auto& part : partials) {
    if (part.empty()) continue;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += part[i];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operators
// ---------------------------------------------------------------------------

template <class S, class Fwd, class Bwd>
TensorT<S> unary_elementwise(const TensorT<S>& x, Fwd fwd, Bwd bwd_from_xy) {
  using Node = typename TensorT<S>::Node;
  auto out = TensorT<S>::make_result(x.shape(), {x.node()});
  const S* in = x.data();
  S* o = out.data();
  const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n >= detail::kParallelCutoff)
  for (std::int64_t i = 0; i < n; ++i) o[i] = fwd(in[i]);
  const bool need_x = x.requires_grad();
  out.set_backward([bwd_from_xy, need_x](Node& self) {
    if (!need_x) return;
    Node& p = *self.parents[0];
    p.ensure_grad();
    const std::int64_t n = self.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      p.grad[i] += bwd_from_xy(p.data[i], self.data[i]) * self.grad[i];
    }
  });
  return out;
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
  return unary_elementwise(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S xi, S) { return xi > S(0) ? S(1) : S(0); });
}

template <class S>
TensorT<S> leaky_relu(const TensorT<S>& x, S slope = S(0.2)) {
  return unary_elementwise(
      x, [slope](S v) { return v > S(0) ? v : slope * v; },
      [slope](S xi, S) { return xi > S(0) ? S(1) : slope; });
}

template <class S>
TensorT<S> tanh(const TensorT<S>& x) {
  return unary_elementwise(
      x, [](S v) { return std::tanh(v); },
      [](S, S yi) { return S(1) - yi * yi; });
}

template <class S>
TensorT<S> square(const TensorT<S>& x) {
  return unary_elementwise(
      x, [](S v) { return v * v; }, [](S xi, S) { return S(2) * xi; });
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& x, S c) {
  return unary_elementwise(
      x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <class S>
TensorT<S> mul_scalar(const TensorT<S>& x, S c) {
  return unary_elementwise(
      x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <class S, class Fwd, class DA, class DB>
TensorT<S> binary_elementwise(const TensorT<S>& a, const TensorT<S>& b, Fwd fwd,
                              DA da, DB db) {
  using Node = typename TensorT<S>::Node;
  if (!a.same_shape(b)) {
    throw DimensionError("elementwise: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  auto out = TensorT<S>::make_result(a.shape(), {a.node(), b.node()});
  const S* pa = a.data();
  const S* pb = b.data();
  S* o = out.data();
  const std::int64_t n = a.numel();
#pragma omp parallel for schedule(static) if (n >= detail::kParallelCutoff)
  for (std::int64_t i = 0; i < n; ++i) o[i] = fwd(pa[i], pb[i]);
  const bool need_a = a.requires_grad();
  const bool need_b = b.requires_grad();
  out.set_backward([da, db, need_a, need_b](Node& self) {
    Node& na = *self.parents[0];
    Node& nb = *self.parents[1];
    const std::int64_t n = self.numel();
    if (need_a) {
      na.ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        na.grad[i] += da(na.data[i], nb.data[i]) * self.grad[i];
      }
    }
    if (need_b) {
      nb.ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        nb.grad[i] += db(na.data[i], nb.data[i]) * self.grad[i];
      }
    }
  });
  return out;
}

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_elementwise(
      a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_elementwise(
      a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  return binary_elementwise(
      a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  using Node = typename TensorT<S>::Node;
  auto out = TensorT<S>::make_result({1}, {x.node()});
  S acc = S(0);
  const S* in = x.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += in[i];
  out.data()[0] = acc;
  const bool need_x = x.requires_grad();
  out.set_backward([need_x](Node& self) {
    if (!need_x) return;
    Node& p = *self.parents[0];
    p.ensure_grad();
    const S g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
  return out;
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& x) {
  return mul_scalar(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

// Per-(sample, channel) spatial mean: [N,C,H,W] -> [N,C].
template <class S>
TensorT<S> reduce_mean_spatial(const TensorT<S>& x) {
  using Node = typename TensorT<S>::Node;
  if (x.rank() != 4) throw DimensionError("reduce_mean_spatial: expected NCHW input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  auto out = TensorT<S>::make_result({N, C}, {x.node()});
  const S* in = x.data();
  S* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    const S* plane = in + nc * hw;
    S acc = S(0);
    for (std::int64_t i = 0; i < hw; ++i) acc += plane[i];
    o[nc] = acc / static_cast<S>(hw);
  }
  const bool need_x = x.requires_grad();
  out.set_backward([hw, need_x](Node& self) {
    if (!need_x) return;
    Node& p = *self.parents[0];
    p.ensure_grad();
    const std::int64_t nc_count = self.numel();
    for (std::int64_t nc = 0; nc < nc_count; ++nc) {
      const S g = self.grad[nc] / static_cast<S>(hw);
      S* dst = p.grad.data() + nc * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape operators
// ---------------------------------------------------------------------------

// Copies channels [c0, c1) of an NCHW tensor.
template <class S>
TensorT<S> slice_channels(const TensorT<S>& x, int c0, int c1) {
  using Node = typename TensorT<S>::Node;
  if (x.rank() != 4) throw DimensionError("slice_channels: expected NCHW input");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) {
    throw DimensionError("slice_channels: bad channel range");
  }
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  const int Cs = c1 - c0;
  auto out = TensorT<S>::make_result({N, Cs, H, W}, {x.node()});
  const S* in = x.data();
  S* o = out.data();
  for (int n = 0; n < N; ++n) {
    const S* src = in + (static_cast<std::int64_t>(n) * C + c0) * hw;
    S* dst = o + static_cast<std::int64_t>(n) * Cs * hw;
    std::copy(src, src + static_cast<std::int64_t>(Cs) * hw, dst);
  }
  const bool need_x = x.requires_grad();
  out.set_backward([c0, Cs, C, hw, need_x](Node& self) {
    if (!need_x) return;
    Node& p = *self.parents[0];
    p.ensure_grad();
    const int N = self.shape[0];
    for (int n = 0; n < N; ++n) {
      const S* src = self.grad.data() + static_cast<std::int64_t>(n) * Cs * hw;
      S* dst = p.grad.data() + (static_cast<std::int64_t>(n) * C + c0) * hw;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(Cs) * hw; ++i) dst[i] += src[i];
    }
  });
  return out;
}

// Mirror padding without edge repetition; requires pad <= extent - 1.
template <class S>
TensorT<S> reflection_pad2d(const TensorT<S>& x, int pad) {
  using Node = typename TensorT<S>::Node;
  if (x.rank() != 4) throw DimensionError("reflection_pad2d: expected NCHW input");
  if (pad < 0) throw ContractError("reflection_pad2d: negative pad");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (pad > H - 1 || pad > W - 1) {
    throw ContractError("reflection_pad2d: pad exceeds extent - 1");
  }
  const int OH = H + 2 * pad, OW = W + 2 * pad;
  auto reflect = [](int k, int extent) {
    if (k < 0) return -k;
    if (k >= extent) return 2 * extent - 2 - k;
    return k;
  };
  auto out = TensorT<S>::make_result({N, C, OH, OW}, {x.node()});
  const S* in = x.data();
  S* o = out.data();
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
    const S* src = in + nc * H * W;
    S* dst = o + nc * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      const int ih = reflect(oh - pad, H);
      for (int ow = 0; ow < OW; ++ow) {
        dst[oh * OW + ow] = src[ih * W + reflect(ow - pad, W)];
      }
    }
  }
  const bool need_x = x.requires_grad();
  out.set_backward([pad, H, W, OH, OW, reflect, need_x](Node& self) {
    if (!need_x) return;
    Node& p = *self.parents[0];
    p.ensure_grad();
    const std::int64_t planes = static_cast<std::int64_t>(self.shape[0]) * self.shape[1];
#pragma omp parallel for schedule(static)
    for (std::int64_t nc = 0; nc < planes; ++nc) {
      const S* g = self.grad.data() + nc * OH * OW;
      S* dst = p.grad.data() + nc * H * W;
      for (int oh = 0; oh < OH; ++oh) {
        const int ih = reflect(oh - pad, H);
        for (int ow = 0; ow < OW; ++ow) {
          dst[ih * W + reflect(ow - pad, W)] += g[oh * OW + ow];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation semantics, zero padding)
// ---------------------------------------------------------------------------

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout].
// Output extent: floor((H + 2*pad - kh)/stride) + 1.
template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& weight,
                  const TensorT<S>& bias, int stride, int pad) {
  using Node = typename TensorT<S>::Node;
  if (input.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv2d: input and weight must be rank 4");
  }
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != Cin) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, got " + std::to_string(Cin));
  }
  if (bias.numel() != Cout) throw DimensionError("conv2d: bias length != Cout");
  if (kh < 1 || kw < 1 || stride < 1 || pad < 0) {
    throw ContractError("conv2d: kernel and stride must be >= 1, pad >= 0");
  }
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  const std::int64_t K = static_cast<std::int64_t>(Cin) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(OH) * OW;
  const std::int64_t in_sz = static_cast<std::int64_t>(Cin) * H * W;
  const std::int64_t out_sz = static_cast<std::int64_t>(Cout) * P;

  auto out = TensorT<S>::make_result({N, Cout, OH, OW},
                                     {input.node(), weight.node(), bias.node()});
  {
    const S* x = input.data();
    const S* w = weight.data();
    const S* b = bias.data();
    S* y = out.data();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      std::vector<S> col(K * P);
      detail::im2col(x + n * in_sz, Cin, H, W, kh, kw, stride, pad, OH, OW, col.data());
      detail::ConstMatMap<S> Wm(w, Cout, K);
      detail::ConstMatMap<S> Cm(col.data(), K, P);
      detail::MatMap<S> Ym(y + n * out_sz, Cout, P);
      Ym.noalias() = Wm * Cm;
      Ym.colwise() += Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>>(b, Cout);
    }
  }

  const bool need_x = input.requires_grad();
  const bool need_w = weight.requires_grad();
  const bool need_b = bias.requires_grad();
  out.set_backward([=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    const S* dy = self.grad.data();
    if (need_x) xn.ensure_grad();
    if (need_w) wn.ensure_grad();
    if (need_b) bn.ensure_grad();
    std::vector<std::vector<S>> dw_part(detail::kReduceChunks);
    std::vector<std::vector<S>> db_part(detail::kReduceChunks);
#pragma omp parallel for schedule(static)
    for (int chunk = 0; chunk < detail::kReduceChunks; ++chunk) {
      auto [lo, hi] = detail::chunk_range(N, chunk);
      if (lo >= hi) continue;
      if (need_w) dw_part[chunk].assign(wn.data.size(), S(0));
      if (need_b) db_part[chunk].assign(bn.data.size(), S(0));
      std::vector<S> col(K * P), dcol(K * P);
      for (std::int64_t n = lo; n < hi; ++n) {
        detail::ConstMatMap<S> Dy(dy + n * out_sz, Cout, P);
        if (need_x) {
          detail::ConstMatMap<S> Wm(wn.data.data(), Cout, K);
          detail::MatMap<S> Dc(dcol.data(), K, P);
          Dc.noalias() = Wm.transpose() * Dy;
          detail::col2im(dcol.data(), Cin, H, W, kh, kw, stride, pad, OH, OW,
                         xn.grad.data() + n * in_sz);
        }
        if (need_w) {
          detail::im2col(xn.data.data() + n * in_sz, Cin, H, W, kh, kw, stride, pad,
                         OH, OW, col.data());
          detail::ConstMatMap<S> Cm(col.data(), K, P);
          detail::MatMap<S> Dw(dw_part[chunk].data(), Cout, K);
          Dw.noalias() += Dy * Cm.transpose();
        }
        if (need_b) {
          for (int co = 0; co < Cout; ++co) {
            S acc = S(0);
            const S* row = dy + n * out_sz + co * P;
            for (std::int64_t i = 0; i < P; ++i) acc += row[i];
            db_part[chunk][co] += acc;
          }
        }
      }
    }
    if (need_w) detail::combine_chunks(dw_part, wn.grad);
    if (need_b) detail::combine_chunks(db_part, bn.grad);
  });
  return out;
}

// input [N,Cin,H,W], weight [Cin,Cout,kh,kw], bias [Cout].
// Output extent: (H-1)*stride - 2*pad + kh. The forward map is the adjoint of
// conv2d with matching hyperparameters.
template <class S>
TensorT<S> conv_transpose2d(const TensorT<S>& input, const TensorT<S>& weight,
                            const TensorT<S>& bias, int stride, int pad) {
  using Node = typename TensorT<S>::Node;
  if (input.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv_transpose2d: input and weight must be rank 4");
  }
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != Cin) {
    throw DimensionError("conv_transpose2d: weight expects " +
                         std::to_string(weight.dim(0)) + " input channels, got " +
                         std::to_string(Cin));
  }
  if (bias.numel() != Cout) throw DimensionError("conv_transpose2d: bias length != Cout");
  if (stride < 1 || pad < 0) throw ContractError("conv_transpose2d: stride must be >= 1");
  const int OH = (H - 1) * stride - 2 * pad + kh;
  const int OW = (W - 1) * stride - 2 * pad + kw;
  if (OH < 1 || OW < 1) throw DimensionError("conv_transpose2d: empty output");
  const std::int64_t K = static_cast<std::int64_t>(Cout) * kh * kw;
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  const std::int64_t in_sz = static_cast<std::int64_t>(Cin) * P;
  const std::int64_t out_sz = static_cast<std::int64_t>(Cout) * OH * OW;

  auto out = TensorT<S>::make_result({N, Cout, OH, OW},
                                     {input.node(), weight.node(), bias.node()});
  {
    const S* x = input.data();
    const S* w = weight.data();
    const S* b = bias.data();
    S* y = out.data();
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
      std::vector<S> col(K * P);
      detail::ConstMatMap<S> Wm(w, Cin, K);
      detail::ConstMatMap<S> Xm(x + n * in_sz, Cin, P);
      detail::MatMap<S> Cm(col.data(), K, P);
      Cm.noalias() = Wm.transpose() * Xm;
      S* dst = y + n * out_sz;
      std::fill(dst, dst + out_sz, S(0));
      detail::col2im(col.data(), Cout, OH, OW, kh, kw, stride, pad, H, W, dst);
      detail::MatMap<S> Ym(dst, Cout, static_cast<std::int64_t>(OH) * OW);
      Ym.colwise() += Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>>(b, Cout);
    }
  }

  const bool need_x = input.requires_grad();
  const bool need_w = weight.requires_grad();
  const bool need_b = bias.requires_grad();
  out.set_backward([=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    const S* dy = self.grad.data();
    if (need_x) xn.ensure_grad();
    if (need_w) wn.ensure_grad();
    if (need_b) bn.ensure_grad();
    std::vector<std::vector<S>> dw_part(detail::kReduceChunks);
    std::vector<std::vector<S>> db_part(detail::kReduceChunks);
#pragma omp parallel for schedule(static)
    for (int chunk = 0; chunk < detail::kReduceChunks; ++chunk) {
      auto [lo, hi] = detail::chunk_range(N, chunk);
      if (lo >= hi) continue;
      if (need_w) dw_part[chunk].assign(wn.data.size(), S(0));
      if (need_b) db_part[chunk].assign(bn.data.size(), S(0));
      std::vector<S> dycol(K * P);
      for (std::int64_t n = lo; n < hi; ++n) {
        // Patches of dy seen from each input position.
        detail::im2col(dy + n * out_sz, Cout, OH, OW, kh, kw, stride, pad, H, W,
                       dycol.data());
        detail::ConstMatMap<S> Dc(dycol.data(), K, P);
        if (need_x) {
          detail::ConstMatMap<S> Wm(wn.data.data(), Cin, K);
          detail::MatMap<S> Dx(xn.grad.data() + n * in_sz, Cin, P);
          Dx.noalias() += Wm * Dc;
        }
        if (need_w) {
          detail::ConstMatMap<S> Xm(xn.data.data() + n * in_sz, Cin, P);
          detail::MatMap<S> Dw(dw_part[chunk].data(), Cin, K);
          Dw.noalias() += Xm * Dc.transpose();
        }
        if (need_b) {
          const std::int64_t ohw = static_cast<std::int64_t>(OH) * OW;
          for (int co = 0; co < Cout; ++co) {
            S acc = S(0);
            const S* row = dy + n * out_sz + co * ohw;
            for (std::int64_t i = 0; i < ohw; ++i) acc += row[i];
            db_part[chunk][co] += acc;
          }
        }
      }
    }
    if (need_w) detail::combine_chunks(dw_part, wn.grad);
    if (need_b) detail::combine_chunks(db_part, bn.grad);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Instance normalization
// ---------------------------------------------------------------------------

// Per-(sample, channel) spatial standardization followed by a learned affine
// map. Population variance; requires H*W >= 2.
template <class S>
TensorT<S> instance_norm(const TensorT<S>& input, const TensorT<S>& gamma,
                         const TensorT<S>& beta, S eps = S(1e-5)) {
  using Node = typename TensorT<S>::Node;
  if (input.rank() != 4) throw DimensionError("instance_norm: expected NCHW input");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (gamma.numel() != C || beta.numel() != C) {
    throw DimensionError("instance_norm: gamma/beta length != C");
  }
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  if (hw < 2) {
    throw ContractError("instance_norm: 1x1 spatial input has degenerate statistics");
  }
  auto out = TensorT<S>::make_result({N, C, H, W},
                                     {input.node(), gamma.node(), beta.node()});
  auto mean = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * C);
  auto istd = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * C);
  {
    const S* x = input.data();
    const S* g = gamma.data();
    const S* b = beta.data();
    S* y = out.data();
#pragma omp parallel for schedule(static)
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
      const int c = static_cast<int>(nc % C);
      const S* src = x + nc * hw;
      S mu = S(0);
      for (std::int64_t i = 0; i < hw; ++i) mu += src[i];
      mu /= static_cast<S>(hw);
      S var = S(0);
      for (std::int64_t i = 0; i < hw; ++i) {
        const S d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<S>(hw);
      const S is = S(1) / std::sqrt(var + eps);
      (*mean)[nc] = mu;
      (*istd)[nc] = is;
      S* dst = y + nc * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = g[c] * (src[i] - mu) * is + b[c];
    }
  }

  const bool need_x = input.requires_grad();
  const bool need_g = gamma.requires_grad();
  const bool need_b = beta.requires_grad();
  out.set_backward([mean, istd, hw, C, need_x, need_g, need_b](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    const int N = self.shape[0];
    if (need_x) xn.ensure_grad();
    if (need_g) gn.ensure_grad();
    if (need_b) bn.ensure_grad();
    std::vector<std::vector<S>> dg_part(detail::kReduceChunks);
    std::vector<std::vector<S>> db_part(detail::kReduceChunks);
#pragma omp parallel for schedule(static)
    for (int chunk = 0; chunk < detail::kReduceChunks; ++chunk) {
      auto [lo, hi] = detail::chunk_range(N, chunk);
      if (lo >= hi) continue;
      if (need_g) dg_part[chunk].assign(gn.data.size(), S(0));
      if (need_b) db_part[chunk].assign(bn.data.size(), S(0));
      for (std::int64_t n = lo; n < hi; ++n) {
        for (int c = 0; c < C; ++c) {
          const std::int64_t nc = n * C + c;
          const S mu = (*mean)[nc];
          const S is = (*istd)[nc];
          const S* x = xn.data.data() + nc * hw;
          const S* dy = self.grad.data() + nc * hw;
          S sum_dy = S(0), sum_dy_xhat = S(0);
          for (std::int64_t i = 0; i < hw; ++i) {
            const S xhat = (x[i] - mu) * is;
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xhat;
          }
          if (need_g) dg_part[chunk][c] += sum_dy_xhat;
          if (need_b) db_part[chunk][c] += sum_dy;
          if (need_x) {
            const S g = gn.data[c];
            const S m1 = sum_dy / static_cast<S>(hw);
            const S m2 = sum_dy_xhat / static_cast<S>(hw);
            S* dx = xn.grad.data() + nc * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const S xhat = (x[i] - mu) * is;
              dx[i] += g * is * (dy[i] - m1 - xhat * m2);
            }
          }
        }
      }
    }
    if (need_g) detail::combine_chunks(dg_part, gn.grad);
    if (need_b) detail::combine_chunks(db_part, bn.grad);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dense layer and classification loss
// ---------------------------------------------------------------------------

// x [N,Fin], weight [Fout,Fin], bias [Fout] -> [N,Fout].
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& weight, const TensorT<S>& bias) {
  using Node = typename TensorT<S>::Node;
  if (x.rank() != 2 || weight.rank() != 2) {
    throw DimensionError("linear: expected rank-2 input and weight");
  }
  const int N = x.dim(0), Fin = x.dim(1), Fout = weight.dim(0);
  if (weight.dim(1) != Fin) throw DimensionError("linear: weight/input feature mismatch");
  if (bias.numel() != Fout) throw DimensionError("linear: bias length != Fout");
  auto out = TensorT<S>::make_result({N, Fout}, {x.node(), weight.node(), bias.node()});
  {
    detail::ConstMatMap<S> X(x.data(), N, Fin);
    detail::ConstMatMap<S> Wm(weight.data(), Fout, Fin);
    detail::MatMap<S> Y(out.data(), N, Fout);
    Y.noalias() = X * Wm.transpose();
    Y.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(bias.data(), Fout);
  }
  const bool need_x = x.requires_grad();
  const bool need_w = weight.requires_grad();
  const bool need_b = bias.requires_grad();
  out.set_backward([N, Fin, Fout, need_x, need_w, need_b](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    detail::ConstMatMap<S> Dy(self.grad.data(), N, Fout);
    if (need_x) {
      xn.ensure_grad();
      detail::ConstMatMap<S> Wm(wn.data.data(), Fout, Fin);
      detail::MatMap<S> Dx(xn.grad.data(), N, Fin);
      Dx.noalias() += Dy * Wm;
    }
    if (need_w) {
      wn.ensure_grad();
      detail::ConstMatMap<S> X(xn.data.data(), N, Fin);
      detail::MatMap<S> Dw(wn.grad.data(), Fout, Fin);
      Dw.noalias() += Dy.transpose() * X;
    }
    if (need_b) {
      bn.ensure_grad();
      for (int n = 0; n < N; ++n) {
        for (int f = 0; f < Fout; ++f) bn.grad[f] += self.grad[n * Fout + f];
      }
    }
  });
  return out;
}

// Mean over the batch of -log softmax(logits)[label]. Stable via max shift.
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& labels) {
  using Node = typename TensorT<S>::Node;
  if (logits.rank() != 2) throw DimensionError("cross_entropy: expected [N,K] logits");
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N) {
    throw ContractError("cross_entropy: labels length != batch size");
  }
  for (int y : labels) {
    if (y < 0 || y >= K) throw ContractError("cross_entropy: label out of range [0,K)");
  }
  auto out = TensorT<S>::make_result({1}, {logits.node()});
  auto probs = std::make_shared<std::vector<S>>(static_cast<std::size_t>(N) * K);
  {
    const S* l = logits.data();
    S total = S(0);
    for (int n = 0; n < N; ++n) {
      const S* row = l + static_cast<std::int64_t>(n) * K;
      S mx = row[0];
      for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      S z = S(0);
      for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
      const S log_z = std::log(z) + mx;
      for (int k = 0; k < K; ++k) {
        (*probs)[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - log_z);
      }
      total += log_z - row[labels[static_cast<std::size_t>(n)]];
    }
    out.data()[0] = total / static_cast<S>(N);
  }
  const bool need_x = logits.requires_grad();
  out.set_backward([probs, labels, N, K, need_x](Node& self) {
    if (!need_x) return;
    Node& p = *self.parents[0];
    p.ensure_grad();
    const S g = self.grad[0] / static_cast<S>(N);
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < K; ++k) {
        const S onehot = (labels[static_cast<std::size_t>(n)] == k) ? S(1) : S(0);
        p.grad[static_cast<std::size_t>(n) * K + k] +=
            g * ((*probs)[static_cast<std::size_t>(n) * K + k] - onehot);
      }
    }
  });
  return out;
}

// Row softmax without graph recording (inference-side score averaging).
template <class S>
std::vector<S> softmax_rows(const TensorT<S>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected [N,K] logits");
  const int N = logits.dim(0), K = logits.dim(1);
  std::vector<S> probs(static_cast<std::size_t>(N) * K);
  const S* l = logits.data();
  for (int n = 0; n < N; ++n) {
    const S* row = l + static_cast<std::int64_t>(n) * K;
    S mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    S z = S(0);
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    for (int k = 0; k < K; ++k) {
      probs[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - mx) / z;
    }
  }
  return probs;
}

// Mean over all elements of the squared difference.
template <class S>
TensorT<S> mse(const TensorT<S>& a, const TensorT<S>& b) {
  return mean_all(square(sub(a, b)));
}

}  // namespace ifs
