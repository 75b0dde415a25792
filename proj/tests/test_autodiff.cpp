#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avsync/autodiff.hpp"

#include <cmath>
#include <functional>
#include <vector>

using namespace avsync;

namespace {

// Central-difference check of every input coordinate against the tape
// gradient. `build` must construct a 1x1 root from the given leaves.
using BuildFn =
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

void check_grads(const std::vector<MatX>& inputs, const BuildFn& build,
                 double tol = 1e-6, double h = 1e-5) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const MatX& m : inputs) leaves.push_back(tape.leaf(m, true));
  ad::Var root = build(tape, leaves);
  REQUIRE(tape.value(root).size() == 1);
  tape.backward(root);

  std::vector<MatX> analytic;
  for (ad::Var v : leaves) {
    MatX g = tape.grad(v);
    if (g.size() == 0) g = MatX::Zero(tape.value(v).rows(), tape.value(v).cols());
    analytic.push_back(g);
  }

  auto value_at = [&](const std::vector<MatX>& pert) {
    ad::Tape t;
    std::vector<ad::Var> l;
    for (const MatX& m : pert) l.push_back(t.leaf(m));
    return t.value(build(t, l))(0, 0);
  };

  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (Index r = 0; r < inputs[i].rows(); ++r)
      for (Index c = 0; c < inputs[i].cols(); ++c) {
        std::vector<MatX> plus = inputs, minus = inputs;
        plus[i](r, c) += h;
        minus[i](r, c) -= h;
        const double fd = (value_at(plus) - value_at(minus)) / (2 * h);
        const double an = analytic[i](r, c);
        INFO("input ", i, " at (", r, ",", c, "): analytic ", an, " fd ", fd);
        CHECK(std::abs(an - fd) <= tol * std::max(1.0, std::abs(fd)));
      }
}

MatX seeded(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return random_normal(rows, cols, scale, rng);
}

}  // namespace

TEST_CASE("elementwise arithmetic gradients") {
  const MatX a = seeded(2, 3, 1), b = seeded(2, 3, 2);
  check_grads({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.add(l[0], l[1]));
  });
  check_grads({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.sub(l[0], l[1]));
  });
  check_grads({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.mul(l[0], l[1]));
  });
  check_grads({a}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.scale(l[0], -2.5));
  });
}

TEST_CASE("matmul and transpose gradients") {
  const MatX a = seeded(3, 4, 3), b = seeded(4, 2, 4);
  check_grads({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.matmul(l[0], l[1]));
  });
  check_grads({a}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.mul(t.transpose(l[0]), t.transpose(l[0])));
  });
}

TEST_CASE("bias_add and tile_cols broadcast gradients") {
  const MatX m = seeded(3, 5, 5), b = seeded(3, 1, 6);
  check_grads({m, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.mul(t.bias_add(l[0], l[1]), l[0]));
  });
  check_grads({b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.mean_all(t.tile_cols(l[0], 4));
  });
}

TEST_CASE("concat and slice gradients route to the right blocks") {
  const MatX a = seeded(2, 3, 7), b = seeded(4, 3, 8), c = seeded(2, 2, 9);
  check_grads({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.mul(t.concat_rows(l[0], l[1]),
                           t.concat_rows(l[0], l[1])));
  });
  check_grads({a, c}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    ad::Var cc = t.concat_cols({l[0], l[1]});
    return t.sum_all(t.mul(cc, cc));
  });
  check_grads({a}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.slice_cols(l[0], 1, 2));
  });
}

TEST_CASE("activation gradients away from kinks") {
  MatX x = seeded(3, 3, 10);
  x.array() += 0.2;  // keep leaky_relu inputs off exact zero
  check_grads({x}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.tanh_(l[0]));
  });
  check_grads({x}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.sigmoid_(l[0]));
  });
  check_grads({x}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.leaky_relu(l[0], 0.2));
  });
  check_grads({x}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.softplus_(l[0]));
  });
  MatX pos = x.array().abs() + 0.5;
  check_grads({pos}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.log_(l[0]));
  });
}

TEST_CASE("clamp passes gradient inside and blocks it outside") {
  MatX x(1, 3);
  x << -2.0, 0.3, 2.0;  // below, inside, above the clamp band
  ad::Tape t;
  ad::Var v = t.leaf(x, true);
  t.backward(t.sum_all(t.clamp_(v, -1.0, 1.0)));
  const MatX g = t.grad(v);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(0, 2) == 0.0);

  MatX interior(2, 2);
  interior << 0.2, -0.4, 0.6, -0.1;
  check_grads({interior}, [](ad::Tape& tt, const std::vector<ad::Var>& l) {
    return tt.sum_all(tt.mul(tt.clamp_(l[0], -1.0, 1.0), l[0]));
  });
}

TEST_CASE("reduction gradients") {
  const MatX a = seeded(3, 4, 11), b = seeded(3, 4, 12);
  check_grads({a}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.mean_all(t.mul(l[0], l[0]));
  });
  check_grads({a}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.sum_all(t.mul(t.mean_rows(l[0]), t.mean_rows(l[0])));
  });
  check_grads({a, b}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.mean_sq_diff(l[0], l[1]);
  });
  check_grads({a}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.l2_norm(l[0]);
  });
  // mean_abs_diff is non-smooth at ties; these inputs have none.
  MatX c = b;
  c.array() += 0.37;
  check_grads({a, c}, [](ad::Tape& t, const std::vector<ad::Var>& l) {
    return t.mean_abs_diff(l[0], l[1]);
  });
}

TEST_CASE("col_cosine values and gradients") {
  MatX a(2, 2), b(2, 2);
  a.col(0) << 1, 0;
  b.col(0) << 0, 1;  // orthogonal
  a.col(1) << 2, 0;
  b.col(1) << 3, 0;  // parallel
  ad::Tape t;
  const MatX cs = t.value(t.col_cosine(t.leaf(a), t.leaf(b)));
  CHECK(cs(0, 0) == doctest::Approx(0.0));
  CHECK(cs(0, 1) == doctest::Approx(1.0));

  const MatX x = seeded(3, 4, 13), y = seeded(3, 4, 14);
  check_grads({x, y}, [](ad::Tape& tt, const std::vector<ad::Var>& l) {
    return tt.mean_col_cosine(l[0], l[1]);
  });
}

TEST_CASE("col_cosine zero-norm columns yield zero similarity and gradient") {
  MatX a = MatX::Zero(3, 1);
  MatX b(3, 1);
  b << 1, 2, 3;
  ad::Tape t;
  ad::Var va = t.leaf(a, true), vb = t.leaf(b, true);
  ad::Var cs = t.col_cosine(va, vb);
  CHECK(t.value(cs)(0, 0) == 0.0);
  t.backward(t.sum_all(cs));
  CHECK(t.grad(va).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.grad(vb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("avg_pool forward oracle and gradient") {
  // One channel, 4x4 image; 2x pooling averages disjoint quads.
  MatX x(1, 16);
  for (Index i = 0; i < 16; ++i) x(0, i) = static_cast<double>(i);
  ad::Tape t;
  const MatX y = t.value(t.avg_pool(t.leaf(x), 4, 4, 2));
  REQUIRE(y.cols() == 4);
  CHECK(y(0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(y(0, 1) == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
  CHECK(y(0, 2) == doctest::Approx((8 + 9 + 12 + 13) / 4.0));
  CHECK(y(0, 3) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));

  const MatX z = seeded(2, 16, 15);
  check_grads({z}, [](ad::Tape& tt, const std::vector<ad::Var>& l) {
    ad::Var p = tt.avg_pool(l[0], 4, 4, 2);
    return tt.sum_all(tt.mul(p, p));
  });
}

TEST_CASE("im2col and col2im are adjoint") {
  const Index c_in = 2, h = 5, w = 4, k = 3, stride = 2, pad = 1;
  const MatX x = seeded(c_in, h * w, 16);
  const MatX cols = ad::im2col(x, h, w, k, stride, pad);
  const MatX y = seeded(cols.rows(), cols.cols(), 17);
  const double lhs = (cols.array() * y.array()).sum();
  const MatX back = ad::col2im(y, c_in, h, w, k, stride, pad);
  const double rhs = (x.array() * back.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv2d forward matches a naive sliding window") {
  const Index c_in = 2, c_out = 3, h = 4, w = 4, k = 3, stride = 1, pad = 1;
  const MatX x = seeded(c_in, h * w, 18);
  const MatX wgt = seeded(c_out, c_in * k * k, 19);
  const MatX b = seeded(c_out, 1, 20);

  ad::Tape t;
  const MatX y =
      t.value(t.conv2d(t.leaf(x), t.leaf(wgt), t.leaf(b), h, w, k, stride, pad));

  for (Index co = 0; co < c_out; ++co)
    for (Index oy = 0; oy < h; ++oy)
      for (Index ox = 0; ox < w; ++ox) {
        double acc = b(co, 0);
        for (Index ci = 0; ci < c_in; ++ci)
          for (Index ky = 0; ky < k; ++ky)
            for (Index kx = 0; kx < k; ++kx) {
              const Index iy = oy * stride + ky - pad;
              const Index ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += wgt(co, ci * k * k + ky * k + kx) * x(ci, iy * w + ix);
            }
        CHECK(y(co, oy * w + ox) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv2d gradients") {
  const Index c_in = 2, h = 4, w = 4, k = 3;
  const MatX x = seeded(c_in, h * w, 21);
  const MatX wgt = seeded(3, c_in * k * k, 22);
  const MatX b = seeded(3, 1, 23);
  check_grads({x, wgt, b}, [&](ad::Tape& t, const std::vector<ad::Var>& l) {
    ad::Var y = t.conv2d(l[0], l[1], l[2], h, w, k, 1, 1);
    return t.mean_all(t.mul(y, y));
  });
}

TEST_CASE("conv2d_transpose doubles the side and has exact gradients") {
  const Index c_in = 3, c_out = 2, h = 3, w = 3, k = 2, stride = 2;
  const MatX x = seeded(c_in, h * w, 24);
  const MatX wt = seeded(c_in, c_out * k * k, 25);
  const MatX b = seeded(c_out, 1, 26);

  ad::Tape t;
  const MatX y = t.value(
      t.conv2d_transpose(t.leaf(x), t.leaf(wt), t.leaf(b), h, w, k, stride));
  CHECK(y.rows() == c_out);
  CHECK(y.cols() == ((h - 1) * stride + k) * ((w - 1) * stride + k));

  check_grads({x, wt, b}, [&](ad::Tape& tt, const std::vector<ad::Var>& l) {
    ad::Var yy = tt.conv2d_transpose(l[0], l[1], l[2], h, w, k, stride);
    return tt.mean_all(tt.mul(yy, yy));
  });
}

TEST_CASE("backward leaves untouched gradients empty for non-trainable leaves") {
  ad::Tape t;
  ad::Var a = t.leaf(MatX::Ones(2, 2), true);
  ad::Var b = t.leaf(MatX::Ones(2, 2), false);
  t.backward(t.sum_all(t.mul(a, b)));
  CHECK(t.grad(a).size() == 4);
  CHECK(t.grad(b).size() == 0);
}

TEST_CASE("adam matches a hand-stepped scalar reference") {
  ad::Adam opt;
  opt.lr = 0.1;
  ad::Adam::State s;
  MatX w = MatX::Constant(1, 1, 1.0);
  const MatX g = MatX::Constant(1, 1, 0.5);

  // Step 1 by hand: m = (1-b1)g, v = (1-b2)g^2, bias-corrected to g and g^2.
  double m = 0.1 * 0.5, v = 0.001 * 0.25;
  double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
  double expect = 1.0 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  opt.step(s, w, g);
  CHECK(w(0, 0) == doctest::Approx(expect).epsilon(1e-12));

  // Step 2 continues the moments.
  m = 0.9 * m + 0.1 * 0.5;
  v = 0.999 * v + 0.001 * 0.25;
  mhat = m / (1 - 0.9 * 0.9);
  vhat = v / (1 - 0.999 * 0.999);
  expect -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  opt.step(s, w, g);
  CHECK(w(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}
