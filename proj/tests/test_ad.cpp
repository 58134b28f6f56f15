#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "recontour/ad/grad_check.hpp"
#include "recontour/ad/ops.hpp"
#include "recontour/data/rng.hpp"

using namespace recontour;
using ad::ArrayT;
using DArr = ad::ArrayT<double>;
using DTape = ad::TapeT<double>;

namespace {

DArr random_array(std::vector<int> shape, data::Rng& rng, double lo = -1.0, double hi = 1.0) {
  DArr a(std::move(shape));
  for (int i = 0; i < a.numel(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

// Naive cyclic convolution oracle, scalar loops only.
std::vector<double> naive_cconv(const std::vector<double>& x, int N, int Cin,
                                const std::vector<double>& w, int Cout, int ks,
                                const std::vector<double>& b) {
  std::vector<double> out(static_cast<size_t>(N) * Cout, 0.0);
  const int h = (ks - 1) / 2;
  for (int i = 0; i < N; ++i)
    for (int o = 0; o < Cout; ++o) {
      double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
      for (int t = -h; t <= h; ++t) {
        int j = ((i + t) % N + N) % N;
        for (int c = 0; c < Cin; ++c)
          acc += w[static_cast<size_t>((o * Cin + c) * ks + (t + h))] *
                 x[static_cast<size_t>(j * Cin + c)];
      }
      out[static_cast<size_t>(i * Cout + o)] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("circular_conv1d identity kernel") {
  DArr x({4, 1}, {1, 2, 3, 4});
  DArr w({1, 1, 1}, {1});
  DArr b({1}, {0});
  DArr y = ad::circular_conv1d(x, w, b);
  CHECK(y[0] == 1);
  CHECK(y[1] == 2);
  CHECK(y[2] == 3);
  CHECK(y[3] == 4);
}

TEST_CASE("circular_conv1d ks=3 box kernel matches hand case") {
  DArr x({4, 1}, {1, 2, 3, 4});
  DArr w({1, 1, 3}, {1, 1, 1});
  DArr b({1}, {0});
  DArr y = ad::circular_conv1d(x, w, b);
  CHECK(y[0] == 7);
  CHECK(y[1] == 6);
  CHECK(y[2] == 9);
  CHECK(y[3] == 8);
}

TEST_CASE("circular_conv1d matches naive oracle on random shapes") {
  data::Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int N = rng.uniform_int(5, 17);
    const int Cin = rng.uniform_int(1, 5);
    const int Cout = rng.uniform_int(1, 5);
    const int ks = 1 + 2 * rng.uniform_int(0, 2);
    DArr x = random_array({N, Cin}, rng);
    DArr w = random_array({Cout, Cin, ks}, rng);
    DArr b = random_array({Cout}, rng);
    DArr y = ad::circular_conv1d(x, w, b);
    auto ref = naive_cconv(*x.val, N, Cin, *w.val, Cout, ks, *b.val);
    for (int i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("circular_conv1d is exactly equivariant to cyclic shifts") {
  data::Rng rng(11);
  const int N = 9, Cin = 3, Cout = 2, ks = 3;
  DArr x = random_array({N, Cin}, rng);
  DArr w = random_array({Cout, Cin, ks}, rng);
  DArr b = random_array({Cout}, rng);
  DArr y = ad::circular_conv1d(x, w, b);
  for (int s = 1; s < N; ++s) {
    DArr xs({N, Cin});
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < Cin; ++c) xs.at2(i, c) = x.at2((i + s) % N, c);
    DArr ys = ad::circular_conv1d(xs, w, b);
    for (int i = 0; i < N; ++i)
      for (int o = 0; o < Cout; ++o) CHECK(ys.at2(i, o) == y.at2((i + s) % N, o));
  }
}

TEST_CASE("circular_conv1d rejects bad inputs") {
  DArr x({4, 1}, {1, 2, 3, 4});
  DArr weven({1, 1, 2}, {1, 1});
  DArr b({1}, {0});
  CHECK_THROWS_AS((void)ad::circular_conv1d(x, weven, b), ad::contract_error);
  DArr wmis({1, 2, 3}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS((void)ad::circular_conv1d(x, wmis, b), ad::contract_error);
  DArr wlong({1, 1, 5}, std::vector<double>(5, 1.0));
  CHECK_THROWS_AS((void)ad::circular_conv1d(x, wlong, b), ad::contract_error);
}

TEST_CASE("bilinear_sample exact cases") {
  // F[y][x][d]; 2x2 single-channel patch with corners 0,10,20,30.
  DArr f({2, 2, 1}, {0, 10, 20, 30});
  DArr p_int({2}, {1.0, 0.0});
  CHECK(ad::bilinear_sample(f, p_int)[0] == 10);  // integer lattice point
  DArr p_mid({2}, {0.5, 0.5});
  CHECK(ad::bilinear_sample(f, p_mid)[0] == doctest::Approx(15.0));
  // Closed-form bilinear weights at (x=0.25, y=0.75):
  // (1-.75)(1-.25)*0 + (1-.75)(.25)*10 + .75*(1-.25)*20 + .75*.25*30 = 17.5
  DArr p({2}, {0.25, 0.75});
  CHECK(ad::bilinear_sample(f, p)[0] == doctest::Approx(17.5));
}

TEST_CASE("bilinear_sample clamps out-of-range coordinates to the border") {
  DArr f({2, 3, 1}, {0, 1, 2, 3, 4, 5});
  DArr p({2}, {-5.0, 0.0});
  CHECK(ad::bilinear_sample(f, p)[0] == 0);
  DArr q({2}, {99.0, 99.0});
  CHECK(ad::bilinear_sample(f, q)[0] == 5);
}

TEST_CASE("dense op spot values") {
  DArr x({3}, {-1.0, 0.0, 2.0});
  DArr r = ad::relu(x);
  CHECK(r[0] == 0);
  CHECK(r[2] == 2);
  DArr z({1}, {0.0});
  CHECK(ad::sigmoid(z)[0] == doctest::Approx(0.5));
  CHECK(ad::tanh_(z)[0] == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 valid") {
  DArr x({3, 3, 1}, std::vector<double>(9, 1.0));
  DArr w({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  DArr b({1}, {0.0});
  DArr y = ad::conv2d(x, w, b, 1, 0);
  REQUIRE(y.shape == std::vector<int>{1, 1, 1});
  CHECK(y[0] == 9);
}

TEST_CASE("max_pool2d matches brute-force oracle on random 8x8 arrays") {
  data::Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    DArr x = random_array({8, 8, 2}, rng);
    DArr y = ad::max_pool2d_3x3(x);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c)
        for (int ch = 0; ch < 2; ++ch) {
          double best = -1e300;
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              int rr = r + dr, cc = c + dc;
              if (rr < 0 || rr >= 8 || cc < 0 || cc >= 8) continue;
              best = std::max(best, x.at3(rr, cc, ch));
            }
          CHECK(y.at3(r, c, ch) == best);
        }
  }
}

TEST_CASE("grad: linear sum has exact all-ones gradient") {
  data::Rng rng(31);
  DArr x = random_array({3, 4}, rng);
  double err = ad::grad_check([](const DArr& a) { return ad::sum_all(a); }, x, 1e-5);
  CHECK(err < 1e-10);
}

TEST_CASE("grad: elementwise and linear ops") {
  data::Rng rng(37);
  for (int trial = 0; trial < 5; ++trial) {
    DArr x = random_array({4, 3}, rng, 0.1, 1.5);  // away from relu kink
    DArr other = random_array({4, 3}, rng);
    CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::mul(a, other)); }, x, 1e-6) <
          1e-8);
    CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::add(a, other)); }, x, 1e-6) <
          1e-8);
    CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::sub(other, a)); }, x, 1e-6) <
          1e-8);
    CHECK(ad::grad_check(
              [&](const DArr& a) { return ad::sum_all(ad::relu(ad::affine(a, 2.0, -1.0))); }, x,
              1e-6) < 1e-6);
    CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::sigmoid(a)); }, x, 1e-6) <
          1e-8);
    CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::tanh_(a)); }, x, 1e-6) <
          1e-8);
  }
}

TEST_CASE("grad: circular_conv1d w.r.t. input, kernel, bias") {
  data::Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int N = rng.uniform_int(5, 9);
    const int Cin = rng.uniform_int(1, 3);
    const int Cout = rng.uniform_int(1, 3);
    DArr x = random_array({N, Cin}, rng);
    DArr w = random_array({Cout, Cin, 3}, rng);
    DArr b = random_array({Cout}, rng);
    auto wrt_x = [&](const DArr& a) {
      return ad::sum_all(ad::tanh_(ad::circular_conv1d(a, w, b)));
    };
    auto wrt_w = [&](const DArr& a) {
      return ad::sum_all(ad::tanh_(ad::circular_conv1d(x, a, b)));
    };
    auto wrt_b = [&](const DArr& a) {
      return ad::sum_all(ad::tanh_(ad::circular_conv1d(x, w, a)));
    };
    CHECK(ad::grad_check(wrt_x, x, 1e-5) < 1e-4);
    CHECK(ad::grad_check(wrt_w, w, 1e-5) < 1e-4);
    CHECK(ad::grad_check(wrt_b, b, 1e-5) < 1e-4);
  }
}

TEST_CASE("grad: bilinear sampling w.r.t. features and coordinates") {
  data::Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    DArr f = random_array({5, 6, 3}, rng);
    DArr p({4, 2});
    for (int i = 0; i < 4; ++i) {
      p[i * 2] = rng.uniform(0.3, 4.7);      // interior, off-lattice
      p[i * 2 + 1] = rng.uniform(0.3, 3.7);
    }
    auto wrt_f = [&](const DArr& a) { return ad::sum_all(ad::tanh_(ad::grid_sample(a, p))); };
    auto wrt_p = [&](const DArr& a) { return ad::sum_all(ad::tanh_(ad::grid_sample(f, a))); };
    CHECK(ad::grad_check(wrt_f, f, 1e-5) < 1e-4);
    CHECK(ad::grad_check(wrt_p, p, 1e-5) < 1e-4);
  }
}

TEST_CASE("grad: conv2d, fc, pooling, upsampling, concat, read_cell") {
  data::Rng rng(47);
  DArr x = random_array({5, 4, 2}, rng);
  DArr w = random_array({3, 2, 3, 3}, rng);
  DArr b = random_array({3}, rng);
  CHECK(ad::grad_check(
            [&](const DArr& a) { return ad::sum_all(ad::tanh_(ad::conv2d(a, w, b, 2, 1))); }, x,
            1e-5) < 1e-4);
  CHECK(ad::grad_check(
            [&](const DArr& a) { return ad::sum_all(ad::tanh_(ad::conv2d(x, a, b, 1, 1))); }, w,
            1e-5) < 1e-4);
  CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::max_pool2d_3x3(a)); }, x,
                       1e-6) < 1e-6);
  CHECK(ad::grad_check(
            [&](const DArr& a) { return ad::sum_all(ad::tanh_(ad::upsample2x_bilinear(a))); }, x,
            1e-5) < 1e-4);
  CHECK(ad::grad_check([&](const DArr& a) { return ad::sum_all(ad::read_cell(a, 2, 1)); }, x,
                       1e-6) < 1e-8);

  DArr xf = random_array({4, 3}, rng);
  DArr wf = random_array({5, 3}, rng);
  DArr bf = random_array({5}, rng);
  CHECK(ad::grad_check(
            [&](const DArr& a) {
              return ad::sum_all(ad::tanh_(ad::fully_connected(a, wf, bf)));
            },
            xf, 1e-5) < 1e-4);
  CHECK(ad::grad_check(
            [&](const DArr& a) {
              return ad::sum_all(ad::tanh_(ad::fully_connected(xf, a, bf)));
            },
            wf, 1e-5) < 1e-4);
  DArr xc = random_array({4, 2}, rng);
  CHECK(ad::grad_check(
            [&](const DArr& a) { return ad::sum_all(ad::tanh_(ad::concat_cols(a, xf))); }, xc,
            1e-5) < 1e-4);
}

TEST_CASE("grad: losses") {
  data::Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    DArr pred = random_array({6, 2}, rng, -2.0, 2.0);
    DArr tgt = random_array({6, 2}, rng, -2.0, 2.0);
    // keep |d| away from the smooth-L1 kink at 1
    for (int i = 0; i < pred.numel(); ++i)
      if (std::abs(std::abs(pred[i] - tgt[i]) - 1.0) < 0.05) pred[i] += 0.1;
    CHECK(ad::grad_check([&](const DArr& a) { return ad::smooth_l1_sum(a, tgt); }, pred, 1e-6) <
          1e-6);
    CHECK(ad::grad_check(
              [&](const DArr& a) { return ad::smooth_l1_sum(ad::cyclic_diff(a), tgt); }, pred,
              1e-6) < 1e-6);

    DArr y({4, 4, 1});
    DArr yh({4, 4, 1});
    for (int i = 0; i < 16; ++i) {
      y[i] = rng.uniform(0.05, 0.95);
      yh[i] = rng.uniform(0.0, 0.9);
    }
    yh[5] = 1.0;  // one peak cell
    CHECK(ad::grad_check([&](const DArr& a) { return ad::focal_loss(a, yh); }, y, 1e-7) < 1e-4);
    DArr bh({4, 4});
    DArr bp({4, 4});
    for (int i = 0; i < 16; ++i) {
      bh[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      bp[i] = rng.uniform(0.05, 0.95);
    }
    CHECK(ad::grad_check([&](const DArr& a) { return ad::bce_mean(a, bh); }, bp, 1e-7) < 1e-4);
  }
}

TEST_CASE("cyclic_diff offsets sum to exactly zero") {
  data::Rng rng(59);
  for (int trial = 0; trial < 200; ++trial) {
    const int N = rng.uniform_int(3, 130);
    DArr c({N, 2});
    for (int i = 0; i < c.numel(); ++i) c[i] = rng.uniform(0.0, 512.0);
    DArr d = ad::cyclic_diff(c);
    double sx = 0.0, sy = 0.0;
    for (int i = 0; i < N; ++i) {
      sx += d[i * 2];
      sy += d[i * 2 + 1];
    }
    CHECK(sx == 0.0);
    CHECK(sy == 0.0);
  }
}

TEST_CASE("backward twice over the same tape inputs is bit-identical") {
  data::Rng rng(61);
  DArr x = random_array({6, 3}, rng);
  DArr w = random_array({2, 3, 3}, rng);
  DArr b = random_array({2}, rng);

  auto run = [&]() {
    DTape tape;
    DArr xw = tape.leaf(x);
    DArr ww = tape.leaf(w);
    DArr bw = tape.leaf(b);
    DArr y = ad::sum_all(ad::tanh_(ad::circular_conv1d(xw, ww, bw)));
    tape.backward(y);
    std::vector<double> g = xw.grad();
    auto gw = ww.grad();
    g.insert(g.end(), gw.begin(), gw.end());
    return g;
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("detached arrays never receive gradient; grads zero after reset") {
  DArr x({2}, {1.0, 2.0});
  DArr c({2}, {3.0, 4.0});  // constant
  DTape tape;
  DArr xw = tape.leaf(x);
  DArr y = ad::sum_all(ad::mul(xw, c));
  tape.backward(y);
  CHECK(xw.grad()[0] == 3.0);
  CHECK(xw.grad()[1] == 4.0);
  CHECK_FALSE(c.attached());
  tape.reset_grads();
  CHECK(xw.grad()[0] == 0.0);
  CHECK(xw.grad()[1] == 0.0);
}

TEST_CASE("ops reject mixing arrays from different tapes") {
  DArr x({2}, {1.0, 2.0});
  DTape t1, t2;
  DArr a = t1.leaf(x);
  DArr b = t2.leaf(x);
  CHECK_THROWS_AS((void)ad::add(a, b), ad::contract_error);
}
