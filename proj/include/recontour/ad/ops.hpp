#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>

#include "recontour/ad/array.hpp"

namespace recontour::ad {

namespace detail {

template <typename T>
TapeT<T>* tape_of(std::initializer_list<const ArrayT<T>*> xs) {
  TapeT<T>* tp = nullptr;
  for (const ArrayT<T>* x : xs) {
    if (!x->attached()) continue;
    if (tp == nullptr) tp = x->tape;
    check(tp == x->tape, "operands recorded on different tapes");
  }
  return tp;
}

template <typename T>
std::vector<int> parents_of(std::initializer_list<const ArrayT<T>*> xs) {
  std::vector<int> ps;
  for (const ArrayT<T>* x : xs)
    if (x->attached()) ps.push_back(x->node);
  return ps;
}

inline bool same_shape(const std::vector<int>& a, const std::vector<int>& b) { return a == b; }

// Grow-only per-thread scratch for kernel repacks.
template <typename T>
std::vector<T>& scratch(int which, size_t n) {
  thread_local std::vector<T> bufs[4];
  auto& b = bufs[which];
  if (b.size() < n) b.resize(n);
  return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
ArrayT<T> add(const ArrayT<T>& a, const ArrayT<T>& b) {
  check(detail::same_shape(a.shape, b.shape), "add: shape mismatch");
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (auto* tp = detail::tape_of<T>({&a, &b})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&a, &b}), n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, bn = b.node, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      if (an >= 0) {
        auto& ga = t.grad_mut(an);
        for (int i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_mut(bn);
        for (int i = 0; i < n; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
ArrayT<T> sub(const ArrayT<T>& a, const ArrayT<T>& b) {
  check(detail::same_shape(a.shape, b.shape), "sub: shape mismatch");
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (auto* tp = detail::tape_of<T>({&a, &b})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&a, &b}), n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, bn = b.node, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      if (an >= 0) {
        auto& ga = t.grad_mut(an);
        for (int i = 0; i < n; ++i) ga[i] += go[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_mut(bn);
        for (int i = 0; i < n; ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename T>
ArrayT<T> mul(const ArrayT<T>& a, const ArrayT<T>& b) {
  check(detail::same_shape(a.shape, b.shape), "mul: shape mismatch");
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (auto* tp = detail::tape_of<T>({&a, &b})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&a, &b}), n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, bn = b.node, av = a.val, bv = b.val, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      if (an >= 0) {
        auto& ga = t.grad_mut(an);
        const T* bd = bv->data();
        for (int i = 0; i < n; ++i) ga[i] += go[i] * bd[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_mut(bn);
        const T* ad = av->data();
        for (int i = 0; i < n; ++i) gb[i] += go[i] * ad[i];
      }
    });
  }
  return out;
}

// out = scale * a + shift
template <typename T>
ArrayT<T> affine(const ArrayT<T>& a, T scale, T shift) {
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = scale * a[i] + shift;
  if (auto* tp = detail::tape_of<T>({&a})) {
    out.tape = tp;
    int id = tp->alloc({a.node}, n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, scale, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& ga = t.grad_mut(an);
      for (int i = 0; i < n; ++i) ga[i] += scale * go[i];
    });
  }
  return out;
}

template <typename T>
ArrayT<T> relu(const ArrayT<T>& a) {
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
  if (auto* tp = detail::tape_of<T>({&a})) {
    out.tape = tp;
    int id = tp->alloc({a.node}, n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, av = a.val, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& ga = t.grad_mut(an);
      const T* ad = av->data();
      for (int i = 0; i < n; ++i)
        if (ad[i] > T(0)) ga[i] += go[i];
    });
  }
  return out;
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
ArrayT<T> sigmoid(const ArrayT<T>& a) {
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = sigmoid_scalar(a[i]);
  if (auto* tp = detail::tape_of<T>({&a})) {
    out.tape = tp;
    int id = tp->alloc({a.node}, n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, ov = out.val, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& ga = t.grad_mut(an);
      const T* od = ov->data();
      for (int i = 0; i < n; ++i) ga[i] += go[i] * od[i] * (T(1) - od[i]);
    });
  }
  return out;
}

template <typename T>
ArrayT<T> tanh_(const ArrayT<T>& a) {
  ArrayT<T> out(a.shape);
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
  if (auto* tp = detail::tape_of<T>({&a})) {
    out.tape = tp;
    int id = tp->alloc({a.node}, n);
    out.node = id;
    tp->set_back(id, [id, an = a.node, ov = out.val, n](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& ga = t.grad_mut(an);
      const T* od = ov->data();
      for (int i = 0; i < n; ++i) ga[i] += go[i] * (T(1) - od[i] * od[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear layers

namespace detail {

// x [N, In] (or [In]), w [Out, In], optional b [Out] -> [N, Out] (or [Out])
template <typename T>
ArrayT<T> fc_impl(const ArrayT<T>& x, const ArrayT<T>& w, const ArrayT<T>* b) {
  check(x.rank() == 1 || x.rank() == 2, "fully_connected: input must be 1-d or 2-d");
  check(w.rank() == 2, "fully_connected: weight must be [Out, In]");
  const bool flat = x.rank() == 1;
  const int N = flat ? 1 : x.dim(0);
  const int In = flat ? x.dim(0) : x.dim(1);
  const int Out = w.dim(0);
  check(w.dim(1) == In, "fully_connected: weight/input width mismatch");
  if (b) check(b->rank() == 1 && b->dim(0) == Out, "fully_connected: bias shape mismatch");

  ArrayT<T> out(flat ? std::vector<int>{Out} : std::vector<int>{N, Out});
  // Repack weights to [In, Out] so the inner loop runs over contiguous outputs.
  auto& wt = detail::scratch<T>(0, static_cast<size_t>(In) * Out);
  for (int o = 0; o < Out; ++o)
    for (int i = 0; i < In; ++i) wt[static_cast<size_t>(i) * Out + o] = w[o * In + i];
  for (int nidx = 0; nidx < N; ++nidx) {
    const T* xr = x.data() + static_cast<size_t>(nidx) * In;
    T* orow = out.data() + static_cast<size_t>(nidx) * Out;
    if (b)
      std::memcpy(orow, b->data(), sizeof(T) * static_cast<size_t>(Out));
    else
      std::fill(orow, orow + Out, T(0));
    for (int i = 0; i < In; ++i) {
      const T xv = xr[i];
      const T* wrow = wt.data() + static_cast<size_t>(i) * Out;
      for (int o = 0; o < Out; ++o) orow[o] += xv * wrow[o];
    }
  }

  const ArrayT<T> bdummy;
  const ArrayT<T>& bb = b ? *b : bdummy;
  if (auto* tp = detail::tape_of<T>({&x, &w, &bb})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&x, &w, &bb}), out.numel());
    out.node = id;
    tp->set_back(id, [id, xn = x.node, wn = w.node, bn = bb.node, xv = x.val, wv = w.val, N, In,
                      Out](TapeT<T>& t) {
      const auto& go = t.grad(id);
      if (xn >= 0) {
        auto& gx = t.grad_mut(xn);
        const T* wd = wv->data();
        for (int nidx = 0; nidx < N; ++nidx) {
          const T* gr = go.data() + static_cast<size_t>(nidx) * Out;
          T* gxr = gx.data() + static_cast<size_t>(nidx) * In;
          for (int o = 0; o < Out; ++o) {
            const T gv = gr[o];
            const T* wrow = wd + static_cast<size_t>(o) * In;
            for (int i = 0; i < In; ++i) gxr[i] += gv * wrow[i];
          }
        }
      }
      if (wn >= 0) {
        auto& gw = t.grad_mut(wn);
        const T* xd = xv->data();
        for (int nidx = 0; nidx < N; ++nidx) {
          const T* gr = go.data() + static_cast<size_t>(nidx) * Out;
          const T* xr = xd + static_cast<size_t>(nidx) * In;
          for (int o = 0; o < Out; ++o) {
            const T gv = gr[o];
            T* gwr = gw.data() + static_cast<size_t>(o) * In;
            for (int i = 0; i < In; ++i) gwr[i] += gv * xr[i];
          }
        }
      }
      if (bn >= 0) {
        auto& gb = t.grad_mut(bn);
        for (int nidx = 0; nidx < N; ++nidx) {
          const T* gr = go.data() + static_cast<size_t>(nidx) * Out;
          for (int o = 0; o < Out; ++o) gb[o] += gr[o];
        }
      }
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
ArrayT<T> fully_connected(const ArrayT<T>& x, const ArrayT<T>& w, const ArrayT<T>& b) {
  return detail::fc_impl(x, w, &b);
}

template <typename T>
ArrayT<T> fully_connected(const ArrayT<T>& x, const ArrayT<T>& w) {
  return detail::fc_impl<T>(x, w, nullptr);
}

// 1x1 convolution along the vertex axis is a per-row fully connected layer.
template <typename T>
ArrayT<T> conv1d_1x1(const ArrayT<T>& x, const ArrayT<T>& w, const ArrayT<T>& b) {
  return detail::fc_impl(x, w, &b);
}

// ---------------------------------------------------------------------------
// Circular convolution over a closed vertex ring.
// x [N, Cin], w [Cout, Cin, ks] (ks odd, taps t-h for t in 0..ks-1), b [Cout].
// out[i] = b + sum_t w[., ., t] . x[(i + t - h) mod N]

namespace detail {

template <typename T>
ArrayT<T> cconv_impl(const ArrayT<T>& x, const ArrayT<T>& w, const ArrayT<T>* b) {
  check(x.rank() == 2, "circular_conv1d: input must be [N, Cin]");
  check(w.rank() == 3, "circular_conv1d: kernel must be [Cout, Cin, ks]");
  const int N = x.dim(0), Cin = x.dim(1);
  const int Cout = w.dim(0), ks = w.dim(2);
  check(w.dim(1) == Cin, "circular_conv1d: kernel/input channel mismatch");
  check(ks % 2 == 1, "circular_conv1d: kernel size must be odd");
  check(N >= ks, "circular_conv1d: ring shorter than kernel");
  if (b) check(b->rank() == 1 && b->dim(0) == Cout, "circular_conv1d: bias shape mismatch");
  const int h = (ks - 1) / 2;

  ArrayT<T> out({N, Cout});
  // Repack kernel to [ks][Cin][Cout] so inner loops accumulate contiguously.
  auto& wt = detail::scratch<T>(0, static_cast<size_t>(ks) * Cin * Cout);
  for (int o = 0; o < Cout; ++o)
    for (int c = 0; c < Cin; ++c)
      for (int t = 0; t < ks; ++t)
        wt[(static_cast<size_t>(t) * Cin + c) * Cout + o] = w[(o * Cin + c) * ks + t];

  for (int i = 0; i < N; ++i) {
    T* orow = out.data() + static_cast<size_t>(i) * Cout;
    if (b)
      std::memcpy(orow, b->data(), sizeof(T) * static_cast<size_t>(Cout));
    else
      std::fill(orow, orow + Cout, T(0));
    for (int t = 0; t < ks; ++t) {
      int j = i + t - h;
      if (j < 0) j += N;
      if (j >= N) j -= N;
      const T* xr = x.data() + static_cast<size_t>(j) * Cin;
      const T* wk = wt.data() + static_cast<size_t>(t) * Cin * Cout;
      for (int c = 0; c < Cin; ++c) {
        const T xv = xr[c];
        const T* wrow = wk + static_cast<size_t>(c) * Cout;
        for (int o = 0; o < Cout; ++o) orow[o] += xv * wrow[o];
      }
    }
  }

  const ArrayT<T> bdummy;
  const ArrayT<T>& bb = b ? *b : bdummy;
  if (auto* tp = detail::tape_of<T>({&x, &w, &bb})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&x, &w, &bb}), out.numel());
    out.node = id;
    tp->set_back(id, [id, xn = x.node, wn = w.node, bn = bb.node, xv = x.val, wv = w.val, N, Cin,
                      Cout, ks, h](TapeT<T>& t) {
      const auto& go = t.grad(id);
      if (xn >= 0) {
        auto& gx = t.grad_mut(xn);
        // [ks][Cout][Cin] repack for the input-gradient loop.
        auto& wr = detail::scratch<T>(1, static_cast<size_t>(ks) * Cin * Cout);
        const T* wd = wv->data();
        for (int o = 0; o < Cout; ++o)
          for (int c = 0; c < Cin; ++c)
            for (int tt = 0; tt < ks; ++tt)
              wr[(static_cast<size_t>(tt) * Cout + o) * Cin + c] = wd[(o * Cin + c) * ks + tt];
        for (int i = 0; i < N; ++i) {
          const T* gr = go.data() + static_cast<size_t>(i) * Cout;
          for (int tt = 0; tt < ks; ++tt) {
            int j = i + tt - h;
            if (j < 0) j += N;
            if (j >= N) j -= N;
            T* gxr = gx.data() + static_cast<size_t>(j) * Cin;
            const T* wk = wr.data() + static_cast<size_t>(tt) * Cout * Cin;
            for (int o = 0; o < Cout; ++o) {
              const T gv = gr[o];
              const T* wrow = wk + static_cast<size_t>(o) * Cin;
              for (int c = 0; c < Cin; ++c) gxr[c] += gv * wrow[c];
            }
          }
        }
      }
      if (wn >= 0) {
        auto& gw = t.grad_mut(wn);
        auto& acc = detail::scratch<T>(2, static_cast<size_t>(ks) * Cin * Cout);
        std::fill(acc.begin(), acc.begin() + static_cast<long>(ks) * Cin * Cout, T(0));
        const T* xd = xv->data();
        for (int i = 0; i < N; ++i) {
          const T* gr = go.data() + static_cast<size_t>(i) * Cout;
          for (int tt = 0; tt < ks; ++tt) {
            int j = i + tt - h;
            if (j < 0) j += N;
            if (j >= N) j -= N;
            const T* xr = xd + static_cast<size_t>(j) * Cin;
            T* ak = acc.data() + static_cast<size_t>(tt) * Cin * Cout;
            for (int c = 0; c < Cin; ++c) {
              const T xvv = xr[c];
              T* arow = ak + static_cast<size_t>(c) * Cout;
              for (int o = 0; o < Cout; ++o) arow[o] += xvv * gr[o];
            }
          }
        }
        for (int o = 0; o < Cout; ++o)
          for (int c = 0; c < Cin; ++c)
            for (int tt = 0; tt < ks; ++tt)
              gw[(o * Cin + c) * ks + tt] += acc[(static_cast<size_t>(tt) * Cin + c) * Cout + o];
      }
      if (bn >= 0) {
        auto& gb = t.grad_mut(bn);
        for (int i = 0; i < N; ++i) {
          const T* gr = go.data() + static_cast<size_t>(i) * Cout;
          for (int o = 0; o < Cout; ++o) gb[o] += gr[o];
        }
      }
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
ArrayT<T> circular_conv1d(const ArrayT<T>& x, const ArrayT<T>& w, const ArrayT<T>& b) {
  return detail::cconv_impl(x, w, &b);
}

template <typename T>
ArrayT<T> circular_conv1d(const ArrayT<T>& x, const ArrayT<T>& w) {
  return detail::cconv_impl<T>(x, w, nullptr);
}

// ---------------------------------------------------------------------------
// 2-d convolution, channels-last. x [H, W, Cin], w [Cout, Cin, kh, kw], b [Cout].

template <typename T>
ArrayT<T> conv2d(const ArrayT<T>& x, const ArrayT<T>& w, const ArrayT<T>& b, int stride, int pad) {
  check(x.rank() == 3, "conv2d: input must be [H, W, Cin]");
  check(w.rank() == 4, "conv2d: kernel must be [Cout, Cin, kh, kw]");
  check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(w.dim(1) == Cin, "conv2d: kernel/input channel mismatch");
  check(b.numel() == 0 || (b.rank() == 1 && b.dim(0) == Cout), "conv2d: bias shape mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");

  ArrayT<T> out({Ho, Wo, Cout});
  // [kh][kw][Cin][Cout] repack.
  auto& wt = detail::scratch<T>(0, static_cast<size_t>(kh) * kw * Cin * Cout);
  for (int o = 0; o < Cout; ++o)
    for (int c = 0; c < Cin; ++c)
      for (int a = 0; a < kh; ++a)
        for (int d = 0; d < kw; ++d)
          wt[((static_cast<size_t>(a) * kw + d) * Cin + c) * Cout + o] =
              w[((o * Cin + c) * kh + a) * kw + d];

  const bool has_b = b.numel() > 0;
  for (int yo = 0; yo < Ho; ++yo) {
    for (int xo = 0; xo < Wo; ++xo) {
      T* orow = out.data() + (static_cast<size_t>(yo) * Wo + xo) * Cout;
      if (has_b)
        std::memcpy(orow, b.data(), sizeof(T) * static_cast<size_t>(Cout));
      else
        std::fill(orow, orow + Cout, T(0));
      for (int a = 0; a < kh; ++a) {
        const int yi = yo * stride + a - pad;
        if (yi < 0 || yi >= H) continue;
        for (int d = 0; d < kw; ++d) {
          const int xi = xo * stride + d - pad;
          if (xi < 0 || xi >= W) continue;
          const T* xr = x.data() + (static_cast<size_t>(yi) * W + xi) * Cin;
          const T* wk = wt.data() + (static_cast<size_t>(a) * kw + d) * Cin * Cout;
          for (int c = 0; c < Cin; ++c) {
            const T xv = xr[c];
            const T* wrow = wk + static_cast<size_t>(c) * Cout;
            for (int o = 0; o < Cout; ++o) orow[o] += xv * wrow[o];
          }
        }
      }
    }
  }

  if (auto* tp = detail::tape_of<T>({&x, &w, &b})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&x, &w, &b}), out.numel());
    out.node = id;
    tp->set_back(id, [id, xn = x.node, wn = w.node, bn = b.node, xv = x.val, wv = w.val, H, W, Cin,
                      Cout, kh, kw, Ho, Wo, stride, pad](TapeT<T>& t) {
      const auto& go = t.grad(id);
      if (xn >= 0) {
        auto& gx = t.grad_mut(xn);
        auto& wr = detail::scratch<T>(1, static_cast<size_t>(kh) * kw * Cin * Cout);
        const T* wd = wv->data();
        for (int o = 0; o < Cout; ++o)
          for (int c = 0; c < Cin; ++c)
            for (int a = 0; a < kh; ++a)
              for (int d = 0; d < kw; ++d)
                wr[((static_cast<size_t>(a) * kw + d) * Cout + o) * Cin + c] =
                    wd[((o * Cin + c) * kh + a) * kw + d];
        for (int yo = 0; yo < Ho; ++yo)
          for (int xo = 0; xo < Wo; ++xo) {
            const T* gr = go.data() + (static_cast<size_t>(yo) * Wo + xo) * Cout;
            for (int a = 0; a < kh; ++a) {
              const int yi = yo * stride + a - pad;
              if (yi < 0 || yi >= H) continue;
              for (int d = 0; d < kw; ++d) {
                const int xi = xo * stride + d - pad;
                if (xi < 0 || xi >= W) continue;
                T* gxr = gx.data() + (static_cast<size_t>(yi) * W + xi) * Cin;
                const T* wk = wr.data() + (static_cast<size_t>(a) * kw + d) * Cout * Cin;
                for (int o = 0; o < Cout; ++o) {
                  const T gv = gr[o];
                  const T* wrow = wk + static_cast<size_t>(o) * Cin;
                  for (int c = 0; c < Cin; ++c) gxr[c] += gv * wrow[c];
                }
              }
            }
          }
      }
      if (wn >= 0) {
        auto& gw = t.grad_mut(wn);
        auto& acc = detail::scratch<T>(2, static_cast<size_t>(kh) * kw * Cin * Cout);
        std::fill(acc.begin(), acc.begin() + static_cast<long>(kh) * kw * Cin * Cout, T(0));
        const T* xd = xv->data();
        for (int yo = 0; yo < Ho; ++yo)
          for (int xo = 0; xo < Wo; ++xo) {
            const T* gr = go.data() + (static_cast<size_t>(yo) * Wo + xo) * Cout;
            for (int a = 0; a < kh; ++a) {
              const int yi = yo * stride + a - pad;
              if (yi < 0 || yi >= H) continue;
              for (int d = 0; d < kw; ++d) {
                const int xi = xo * stride + d - pad;
                if (xi < 0 || xi >= W) continue;
                const T* xr = xd + (static_cast<size_t>(yi) * W + xi) * Cin;
                T* ak = acc.data() + (static_cast<size_t>(a) * kw + d) * Cin * Cout;
                for (int c = 0; c < Cin; ++c) {
                  const T xvv = xr[c];
                  T* arow = ak + static_cast<size_t>(c) * Cout;
                  for (int o = 0; o < Cout; ++o) arow[o] += xvv * gr[o];
                }
              }
            }
          }
        for (int o = 0; o < Cout; ++o)
          for (int c = 0; c < Cin; ++c)
            for (int a = 0; a < kh; ++a)
              for (int d = 0; d < kw; ++d)
                gw[((o * Cin + c) * kh + a) * kw + d] +=
                    acc[((static_cast<size_t>(a) * kw + d) * Cin + c) * Cout + o];
      }
      if (bn >= 0) {
        auto& gb = t.grad_mut(bn);
        const int cells = Ho * Wo;
        for (int i = 0; i < cells; ++i) {
          const T* gr = go.data() + static_cast<size_t>(i) * Cout;
          for (int o = 0; o < Cout; ++o) gb[o] += gr[o];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 3x3 max pooling, stride 1, pad 1 (border cells use their valid neighborhood).
// Subgradient flows to the first maximal cell in scan order.

template <typename T>
ArrayT<T> max_pool2d_3x3(const ArrayT<T>& x) {
  check(x.rank() == 3, "max_pool2d_3x3: input must be [H, W, C]");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  ArrayT<T> out({H, W, C});
  std::vector<int> arg(static_cast<size_t>(H) * W * C);
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int c = 0; c < C; ++c) {
        T best = -std::numeric_limits<T>::infinity();
        int bi = -1;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          for (int dx = -1; dx <= 1; ++dx) {
            const int xq = xx + dx;
            if (xq < 0 || xq >= W) continue;
            const int idx = (yy * W + xq) * C + c;
            if (x[idx] > best) {
              best = x[idx];
              bi = idx;
            }
          }
        }
        const int oi = (y * W + xx) * C + c;
        out[oi] = best;
        arg[static_cast<size_t>(oi)] = bi;
      }
  if (auto* tp = detail::tape_of<T>({&x})) {
    out.tape = tp;
    int id = tp->alloc({x.node}, out.numel());
    out.node = id;
    tp->set_back(id, [id, xn = x.node, arg = std::move(arg)](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& gx = t.grad_mut(xn);
      for (size_t i = 0; i < arg.size(); ++i) gx[static_cast<size_t>(arg[i])] += go[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling (half-pixel centers). x [H, W, C] -> [2H, 2W, C].

template <typename T>
ArrayT<T> upsample2x_bilinear(const ArrayT<T>& x) {
  check(x.rank() == 3, "upsample2x_bilinear: input must be [H, W, C]");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const int Ho = 2 * H, Wo = 2 * W;
  ArrayT<T> out({Ho, Wo, C});
  // Each output row/col maps to source coordinate (o + 0.5)/2 - 0.5.
  auto src = [](int o, int n) {
    T s = (T(o) + T(0.5)) / T(2) - T(0.5);
    if (s < T(0)) s = T(0);
    if (s > T(n - 1)) s = T(n - 1);
    int lo = static_cast<int>(std::floor(s));
    if (lo > n - 2) lo = std::max(0, n - 2);
    T f = s - T(lo);
    if (n == 1) {
      lo = 0;
      f = T(0);
    }
    return std::pair<int, T>(lo, f);
  };
  for (int yo = 0; yo < Ho; ++yo) {
    auto [y0, fy] = src(yo, H);
    const int y1 = std::min(y0 + 1, H - 1);
    for (int xo = 0; xo < Wo; ++xo) {
      auto [x0, fx] = src(xo, W);
      const int x1 = std::min(x0 + 1, W - 1);
      const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
      const T w10 = fy * (T(1) - fx), w11 = fy * fx;
      const T* p00 = x.data() + (static_cast<size_t>(y0) * W + x0) * C;
      const T* p01 = x.data() + (static_cast<size_t>(y0) * W + x1) * C;
      const T* p10 = x.data() + (static_cast<size_t>(y1) * W + x0) * C;
      const T* p11 = x.data() + (static_cast<size_t>(y1) * W + x1) * C;
      T* orow = out.data() + (static_cast<size_t>(yo) * Wo + xo) * C;
      for (int c = 0; c < C; ++c)
        orow[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
    }
  }
  if (auto* tp = detail::tape_of<T>({&x})) {
    out.tape = tp;
    int id = tp->alloc({x.node}, out.numel());
    out.node = id;
    tp->set_back(id, [id, xn = x.node, H, W, C, Ho, Wo, src](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& gx = t.grad_mut(xn);
      for (int yo = 0; yo < Ho; ++yo) {
        auto [y0, fy] = src(yo, H);
        const int y1 = std::min(y0 + 1, H - 1);
        for (int xo = 0; xo < Wo; ++xo) {
          auto [x0, fx] = src(xo, W);
          const int x1 = std::min(x0 + 1, W - 1);
          const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
          const T w10 = fy * (T(1) - fx), w11 = fy * fx;
          const T* gr = go.data() + (static_cast<size_t>(yo) * Wo + xo) * C;
          T* g00 = gx.data() + (static_cast<size_t>(y0) * W + x0) * C;
          T* g01 = gx.data() + (static_cast<size_t>(y0) * W + x1) * C;
          T* g10 = gx.data() + (static_cast<size_t>(y1) * W + x0) * C;
          T* g11 = gx.data() + (static_cast<size_t>(y1) * W + x1) * C;
          for (int c = 0; c < C; ++c) {
            g00[c] += w00 * gr[c];
            g01[c] += w01 * gr[c];
            g10[c] += w10 * gr[c];
            g11[c] += w11 * gr[c];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear sampling. F [H, W, D], points [N, 2] as (x, y) in cell units.
// Coordinates outside the map clamp to the border; the clamp zeroes the
// coordinate gradient there.

template <typename T>
ArrayT<T> grid_sample(const ArrayT<T>& F, const ArrayT<T>& P) {
  check(F.rank() == 3, "grid_sample: feature map must be [H, W, D]");
  check(P.rank() == 2 && P.dim(1) == 2, "grid_sample: points must be [N, 2]");
  const int H = F.dim(0), W = F.dim(1), D = F.dim(2);
  const int N = P.dim(0);
  ArrayT<T> out({N, D});

  struct Cell {
    int x0, y0, x1, y1;
    T fx, fy;
    bool in_x, in_y;
  };
  std::vector<Cell> cells(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    T xr = P[i * 2 + 0], yr = P[i * 2 + 1];
    const bool in_x = xr > T(0) && xr < T(W - 1);
    const bool in_y = yr > T(0) && yr < T(H - 1);
    T xc = std::min(std::max(xr, T(0)), T(W - 1));
    T yc = std::min(std::max(yr, T(0)), T(H - 1));
    int x0 = static_cast<int>(std::floor(xc));
    int y0 = static_cast<int>(std::floor(yc));
    const int x1 = std::min(x0 + 1, W - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const T fx = xc - T(x0);
    const T fy = yc - T(y0);
    cells[static_cast<size_t>(i)] = {x0, y0, x1, y1, fx, fy, in_x, in_y};
    const T* p00 = F.data() + (static_cast<size_t>(y0) * W + x0) * D;
    const T* p01 = F.data() + (static_cast<size_t>(y0) * W + x1) * D;
    const T* p10 = F.data() + (static_cast<size_t>(y1) * W + x0) * D;
    const T* p11 = F.data() + (static_cast<size_t>(y1) * W + x1) * D;
    T* orow = out.data() + static_cast<size_t>(i) * D;
    const T w00 = (T(1) - fy) * (T(1) - fx), w01 = (T(1) - fy) * fx;
    const T w10 = fy * (T(1) - fx), w11 = fy * fx;
    for (int d = 0; d < D; ++d)
      orow[d] = w00 * p00[d] + w01 * p01[d] + w10 * p10[d] + w11 * p11[d];
  }

  if (auto* tp = detail::tape_of<T>({&F, &P})) {
    out.tape = tp;
    int id = tp->alloc(detail::parents_of<T>({&F, &P}), out.numel());
    out.node = id;
    tp->set_back(id, [id, fn = F.node, pn = P.node, fv = F.val, W, D, N,
                      cells = std::move(cells)](TapeT<T>& t) {
      const auto& go = t.grad(id);
      const T* fd = fv->data();
      for (int i = 0; i < N; ++i) {
        const Cell& cl = cells[static_cast<size_t>(i)];
        const T* gr = go.data() + static_cast<size_t>(i) * D;
        const T w00 = (T(1) - cl.fy) * (T(1) - cl.fx), w01 = (T(1) - cl.fy) * cl.fx;
        const T w10 = cl.fy * (T(1) - cl.fx), w11 = cl.fy * cl.fx;
        const size_t i00 = (static_cast<size_t>(cl.y0) * W + cl.x0) * D;
        const size_t i01 = (static_cast<size_t>(cl.y0) * W + cl.x1) * D;
        const size_t i10 = (static_cast<size_t>(cl.y1) * W + cl.x0) * D;
        const size_t i11 = (static_cast<size_t>(cl.y1) * W + cl.x1) * D;
        if (fn >= 0) {
          auto& gf = t.grad_mut(fn);
          for (int d = 0; d < D; ++d) {
            gf[i00 + d] += w00 * gr[d];
            gf[i01 + d] += w01 * gr[d];
            gf[i10 + d] += w10 * gr[d];
            gf[i11 + d] += w11 * gr[d];
          }
        }
        if (pn >= 0) {
          auto& gp = t.grad_mut(pn);
          T gxc = T(0), gyc = T(0);
          for (int d = 0; d < D; ++d) {
            const T dvx = (T(1) - cl.fy) * (fd[i01 + d] - fd[i00 + d]) +
                          cl.fy * (fd[i11 + d] - fd[i10 + d]);
            const T dvy = (T(1) - cl.fx) * (fd[i10 + d] - fd[i00 + d]) +
                          cl.fx * (fd[i11 + d] - fd[i01 + d]);
            gxc += gr[d] * dvx;
            gyc += gr[d] * dvy;
          }
          if (cl.in_x) gp[i * 2 + 0] += gxc;
          if (cl.in_y) gp[i * 2 + 1] += gyc;
        }
      }
    });
  }
  return out;
}

// Single-point variant: p is [2] = (x, y); returns [D].
template <typename T>
ArrayT<T> bilinear_sample(const ArrayT<T>& F, const ArrayT<T>& p) {
  check(p.numel() == 2, "bilinear_sample: point must have 2 components");
  ArrayT<T> pr = p;
  pr.shape = {1, 2};
  ArrayT<T> out = grid_sample(F, pr);
  out.shape = {F.dim(2)};
  return out;
}

// ---------------------------------------------------------------------------
// Gather of one spatial cell: S [H, W, C], (row, col) -> [C].

template <typename T>
ArrayT<T> read_cell(const ArrayT<T>& s, int row, int col) {
  check(s.rank() == 3, "read_cell: input must be [H, W, C]");
  const int H = s.dim(0), W = s.dim(1), C = s.dim(2);
  check(row >= 0 && row < H && col >= 0 && col < W, "read_cell: cell out of bounds");
  ArrayT<T> out({C});
  const size_t base = (static_cast<size_t>(row) * W + col) * C;
  std::memcpy(out.data(), s.data() + base, sizeof(T) * static_cast<size_t>(C));
  if (auto* tp = detail::tape_of<T>({&s})) {
    out.tape = tp;
    int id = tp->alloc({s.node}, C);
    out.node = id;
    tp->set_back(id, [id, sn = s.node, base, C](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& gs = t.grad_mut(sn);
      for (int c = 0; c < C; ++c) gs[base + static_cast<size_t>(c)] += go[static_cast<size_t>(c)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concatenation along the channel axis of [N, C_i] arrays.

template <typename T>
ArrayT<T> concat_cols(const std::vector<ArrayT<T>>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const int N = parts[0].dim(0);
  int Ctot = 0;
  TapeT<T>* tp = nullptr;
  for (const auto& p : parts) {
    check(p.rank() == 2 && p.dim(0) == N, "concat_cols: row count mismatch");
    Ctot += p.dim(1);
    if (p.attached()) {
      if (!tp) tp = p.tape;
      check(tp == p.tape, "concat_cols: operands on different tapes");
    }
  }
  ArrayT<T> out({N, Ctot});
  int off = 0;
  for (const auto& p : parts) {
    const int C = p.dim(1);
    for (int n = 0; n < N; ++n)
      std::memcpy(out.data() + static_cast<size_t>(n) * Ctot + off,
                  p.data() + static_cast<size_t>(n) * C, sizeof(T) * static_cast<size_t>(C));
    off += C;
  }
  if (tp) {
    std::vector<int> ps;
    std::vector<std::pair<int, int>> spans;  // (node, width) in order, -1 node for constants
    for (const auto& p : parts) {
      if (p.attached()) ps.push_back(p.node);
      spans.emplace_back(p.attached() ? p.node : -1, p.dim(1));
    }
    out.tape = tp;
    int id = tp->alloc(std::move(ps), out.numel());
    out.node = id;
    tp->set_back(id, [id, spans = std::move(spans), N, Ctot](TapeT<T>& t) {
      const auto& go = t.grad(id);
      int off2 = 0;
      for (auto [node, width] : spans) {
        if (node >= 0) {
          auto& gp = t.grad_mut(node);
          for (int n = 0; n < N; ++n) {
            const T* gr = go.data() + static_cast<size_t>(n) * Ctot + off2;
            T* dst = gp.data() + static_cast<size_t>(n) * width;
            for (int c = 0; c < width; ++c) dst[c] += gr[c];
          }
        }
        off2 += width;
      }
    });
  }
  return out;
}

template <typename T>
ArrayT<T> concat_cols(const ArrayT<T>& a, const ArrayT<T>& b) {
  return concat_cols(std::vector<ArrayT<T>>{a, b});
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
ArrayT<T> sum_all(const ArrayT<T>& x) {
  ArrayT<T> out({1});
  T s = T(0);
  const int n = x.numel();
  for (int i = 0; i < n; ++i) s += x[i];
  out[0] = s;
  if (auto* tp = detail::tape_of<T>({&x})) {
    out.tape = tp;
    int id = tp->alloc({x.node}, 1);
    out.node = id;
    tp->set_back(id, [id, xn = x.node, n](TapeT<T>& t) {
      const T g = t.grad(id)[0];
      auto& gx = t.grad_mut(xn);
      for (int i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

// Summed smooth-L1 (beta = 1) between prediction and a constant target.
template <typename T>
ArrayT<T> smooth_l1_sum(const ArrayT<T>& pred, const ArrayT<T>& target) {
  check(detail::same_shape(pred.shape, target.shape), "smooth_l1_sum: shape mismatch");
  ArrayT<T> out({1});
  const int n = pred.numel();
  T s = T(0);
  for (int i = 0; i < n; ++i) {
    const T d = pred[i] - target[i];
    const T a = std::abs(d);
    s += a < T(1) ? T(0.5) * d * d : a - T(0.5);
  }
  out[0] = s;
  if (auto* tp = detail::tape_of<T>({&pred})) {
    out.tape = tp;
    int id = tp->alloc({pred.node}, 1);
    out.node = id;
    tp->set_back(id, [id, pn = pred.node, pv = pred.val, tv = target.val, n](TapeT<T>& t) {
      const T g = t.grad(id)[0];
      auto& gp = t.grad_mut(pn);
      const T* pd = pv->data();
      const T* td = tv->data();
      for (int i = 0; i < n; ++i) {
        const T d = pd[i] - td[i];
        gp[i] += g * (std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1)));
      }
    });
  }
  return out;
}

// Cyclic first differences of a closed ring [N, 2]. The closing row is the
// negated sum of the preceding rows so the ring of offsets sums to exactly
// (0, 0) in floating point; in exact arithmetic it equals p[0] - p[N-1].
template <typename T>
ArrayT<T> cyclic_diff(const ArrayT<T>& c) {
  check(c.rank() == 2 && c.dim(1) == 2, "cyclic_diff: input must be [N, 2]");
  const int N = c.dim(0);
  check(N >= 2, "cyclic_diff: need at least 2 vertices");
  ArrayT<T> out({N, 2});
  T sx = T(0), sy = T(0);
  for (int i = 0; i + 1 < N; ++i) {
    const T dx = c[(i + 1) * 2] - c[i * 2];
    const T dy = c[(i + 1) * 2 + 1] - c[i * 2 + 1];
    out[i * 2] = dx;
    out[i * 2 + 1] = dy;
    sx += dx;
    sy += dy;
  }
  out[(N - 1) * 2] = -sx;
  out[(N - 1) * 2 + 1] = -sy;
  if (auto* tp = detail::tape_of<T>({&c})) {
    out.tape = tp;
    int id = tp->alloc({c.node}, out.numel());
    out.node = id;
    tp->set_back(id, [id, cn = c.node, N](TapeT<T>& t) {
      const auto& go = t.grad(id);
      auto& gc = t.grad_mut(cn);
      for (int i = 0; i + 1 < N; ++i)
        for (int k = 0; k < 2; ++k) {
          gc[(i + 1) * 2 + k] += go[i * 2 + k];
          gc[i * 2 + k] -= go[i * 2 + k];
        }
      for (int k = 0; k < 2; ++k) {
        gc[k] += go[(N - 1) * 2 + k];
        gc[(N - 1) * 2 + k] -= go[(N - 1) * 2 + k];
      }
    });
  }
  return out;
}

// Penalty-reduced pixelwise focal loss with exponents (2, 4), normalized by
// the number of target-peak cells (or 1 when there are none). Targets are a
// constant splatted heatmap with exact 1.0 at peak cells.
template <typename T>
ArrayT<T> focal_loss(const ArrayT<T>& y, const ArrayT<T>& y_hat) {
  check(detail::same_shape(y.shape, y_hat.shape), "focal_loss: shape mismatch");
  const int n = y.numel();
  const T eps = T(1e-6);
  int npos = 0;
  for (int i = 0; i < n; ++i)
    if (y_hat[i] == T(1)) ++npos;
  const T norm = T(1) / T(std::max(npos, 1));
  ArrayT<T> out({1});
  T s = T(0);
  for (int i = 0; i < n; ++i) {
    const T p = std::min(std::max(y[i], eps), T(1) - eps);
    if (y_hat[i] == T(1)) {
      s -= (T(1) - p) * (T(1) - p) * std::log(p);
    } else {
      const T w = std::pow(T(1) - y_hat[i], T(4));
      s -= w * p * p * std::log(T(1) - p);
    }
  }
  out[0] = s * norm;
  if (auto* tp = detail::tape_of<T>({&y})) {
    out.tape = tp;
    int id = tp->alloc({y.node}, 1);
    out.node = id;
    tp->set_back(id, [id, yn = y.node, yv = y.val, hv = y_hat.val, n, norm, eps](TapeT<T>& t) {
      const T g = t.grad(id)[0] * norm;
      auto& gy = t.grad_mut(yn);
      const T* yd = yv->data();
      const T* hd = hv->data();
      for (int i = 0; i < n; ++i) {
        const T p = std::min(std::max(yd[i], eps), T(1) - eps);
        if (yd[i] <= eps || yd[i] >= T(1) - eps) continue;  // clamped: flat
        T d;
        if (hd[i] == T(1)) {
          d = -(T(-2) * (T(1) - p) * std::log(p) + (T(1) - p) * (T(1) - p) / p);
        } else {
          const T w = std::pow(T(1) - hd[i], T(4));
          d = -w * (T(2) * p * std::log(T(1) - p) - p * p / (T(1) - p));
        }
        gy[i] += g * d;
      }
    });
  }
  return out;
}

// Binary cross-entropy between prediction in (0,1) and a {0,1} constant
// target, averaged over all pixels. Predictions are clamped to [eps, 1-eps].
template <typename T>
ArrayT<T> bce_mean(const ArrayT<T>& y, const ArrayT<T>& y_hat) {
  check(detail::same_shape(y.shape, y_hat.shape), "bce_mean: shape mismatch");
  const int n = y.numel();
  const T eps = T(1e-6);
  const T norm = T(1) / T(n);
  ArrayT<T> out({1});
  T s = T(0);
  for (int i = 0; i < n; ++i) {
    const T p = std::min(std::max(y[i], eps), T(1) - eps);
    s -= y_hat[i] * std::log(p) + (T(1) - y_hat[i]) * std::log(T(1) - p);
  }
  out[0] = s * norm;
  if (auto* tp = detail::tape_of<T>({&y})) {
    out.tape = tp;
    int id = tp->alloc({y.node}, 1);
    out.node = id;
    tp->set_back(id, [id, yn = y.node, yv = y.val, hv = y_hat.val, n, norm, eps](TapeT<T>& t) {
      const T g = t.grad(id)[0] * norm;
      auto& gy = t.grad_mut(yn);
      const T* yd = yv->data();
      const T* hd = hv->data();
      for (int i = 0; i < n; ++i) {
        if (yd[i] <= eps || yd[i] >= T(1) - eps) continue;
        const T p = yd[i];
        gy[i] += g * ((T(1) - hd[i]) / (T(1) - p) - hd[i] / p);
      }
    });
  }
  return out;
}

}  // namespace recontour::ad
