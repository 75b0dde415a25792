#include "avsync/autodiff.hpp"

#include <cmath>

namespace avsync::ad {

namespace {

void check_same_shape(const MatX& a, const MatX& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": operand shapes " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

}  // namespace

Var Tape::make(MatX value, bool requires_grad,
               std::function<void(Tape&, const MatX&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(MatX value, bool requires_grad) {
  return make(std::move(value), requires_grad);
}

const MatX& Tape::value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

const MatX& Tape::grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

bool Tape::needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

void Tape::accumulate(int id, const MatX& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var root) {
  const MatX& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1)
    throw ShapeError("backward root must be a 1x1 scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!needs(root)) return;
  nodes_[static_cast<std::size_t>(root.id)].grad = MatX::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Dense algebra

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  Var out = make(value(a) + value(b), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id](Tape& t, const MatX& g) {
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  Var out = make(value(a) - value(b), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id](Tape& t, const MatX& g) {
    t.accumulate(ai, g);
    t.accumulate(bi, -g);
  };
  return out;
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  Var out = make(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id](Tape& t, const MatX& g) {
    t.accumulate(ai, g.cwiseProduct(t.val(bi)));
    t.accumulate(bi, g.cwiseProduct(t.val(ai)));
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = make(s * value(a), needs(a));
  nodes_.back().backward = [ai = a.id, s](Tape& t, const MatX& g) {
    t.accumulate(ai, s * g);
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows())
    throw ShapeError("matmul: inner dimensions disagree");
  Var out = make(value(a) * value(b), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id](Tape& t, const MatX& g) {
    t.accumulate(ai, g * t.val(bi).transpose());
    t.accumulate(bi, t.val(ai).transpose() * g);
  };
  return out;
}

Var Tape::transpose(Var a) {
  Var out = make(value(a).transpose(), needs(a));
  nodes_.back().backward = [ai = a.id](Tape& t, const MatX& g) {
    t.accumulate(ai, g.transpose());
  };
  return out;
}

Var Tape::bias_add(Var m, Var b) {
  if (value(b).cols() != 1 || value(b).rows() != value(m).rows())
    throw ShapeError("bias_add: bias must be C x 1 matching the matrix rows");
  MatX v = value(m);
  v.colwise() += VecX(value(b).col(0));
  Var out = make(std::move(v), needs(m) || needs(b));
  nodes_.back().backward = [mi = m.id, bi = b.id](Tape& t, const MatX& g) {
    t.accumulate(mi, g);
    t.accumulate(bi, g.rowwise().sum());
  };
  return out;
}

Var Tape::tile_cols(Var v, Index n) {
  if (value(v).cols() != 1) throw ShapeError("tile_cols: input must be C x 1");
  Var out = make(value(v).replicate(1, n), needs(v));
  nodes_.back().backward = [vi = v.id](Tape& t, const MatX& g) {
    t.accumulate(vi, g.rowwise().sum());
  };
  return out;
}

Var Tape::concat_rows(Var a, Var b) {
  if (value(a).cols() != value(b).cols())
    throw ShapeError("concat_rows: column counts disagree");
  MatX v(value(a).rows() + value(b).rows(), value(a).cols());
  v.topRows(value(a).rows()) = value(a);
  v.bottomRows(value(b).rows()) = value(b);
  const Index ra = value(a).rows(), rb = value(b).rows();
  Var out = make(std::move(v), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id, ra, rb](Tape& t, const MatX& g) {
    t.accumulate(ai, g.topRows(ra));
    t.accumulate(bi, g.bottomRows(rb));
  };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Index rows = value(parts[0]).rows(), cols = 0;
  bool req = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row counts disagree");
    cols += value(p).cols();
    req = req || needs(p);
  }
  MatX v(rows, cols);
  std::vector<std::pair<int, Index>> spans;  // (id, offset)
  Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    spans.emplace_back(p.id, at);
    at += value(p).cols();
  }
  Var out = make(std::move(v), req);
  nodes_.back().backward = [spans](Tape& t, const MatX& g) {
    for (auto [id, offset] : spans) {
      const Index w = t.val(id).cols();
      t.accumulate(id, g.middleCols(offset, w));
    }
  };
  return out;
}

Var Tape::slice_cols(Var a, Index start, Index len) {
  if (start < 0 || len < 0 || start + len > value(a).cols())
    throw ShapeError("slice_cols: range exceeds matrix");
  Var out = make(value(a).middleCols(start, len), needs(a));
  nodes_.back().backward = [ai = a.id, start, len](Tape& t, const MatX& g) {
    MatX full = MatX::Zero(t.val(ai).rows(), t.val(ai).cols());
    full.middleCols(start, len) = g;
    t.accumulate(ai, full);
  };
  return out;
}

Var Tape::mean_rows(Var a) {
  const Index rows = value(a).rows();
  Var out = make(value(a).colwise().mean(), needs(a));
  nodes_.back().backward = [ai = a.id, rows](Tape& t, const MatX& g) {
    t.accumulate(ai, g.replicate(rows, 1) / static_cast<double>(rows));
  };
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

Var Tape::tanh_(Var a) {
  Var out = make(value(a).array().tanh().matrix(), needs(a));
  nodes_.back().backward = [ai = a.id, oi = out.id](Tape& t, const MatX& g) {
    t.accumulate(ai, (g.array() * (1.0 - t.val(oi).array().square())).matrix());
  };
  return out;
}

Var Tape::sigmoid_(Var a) {
  MatX v = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  Var out = make(std::move(v), needs(a));
  nodes_.back().backward = [ai = a.id, oi = out.id](Tape& t, const MatX& g) {
    const auto y = t.val(oi).array();
    t.accumulate(ai, (g.array() * y * (1.0 - y)).matrix());
  };
  return out;
}

Var Tape::leaky_relu(Var a, double alpha) {
  MatX v = value(a).unaryExpr([alpha](double x) { return x > 0.0 ? x : alpha * x; });
  Var out = make(std::move(v), needs(a));
  nodes_.back().backward = [ai = a.id, alpha](Tape& t, const MatX& g) {
    const MatX& x = t.val(ai);
    t.accumulate(ai, g.binaryExpr(x, [alpha](double gv, double xv) {
      return xv > 0.0 ? gv : alpha * gv;
    }));
  };
  return out;
}

Var Tape::softplus_(Var a) {
  MatX v = value(a).unaryExpr([](double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  });
  Var out = make(std::move(v), needs(a));
  nodes_.back().backward = [ai = a.id](Tape& t, const MatX& g) {
    const auto x = t.val(ai).array();
    t.accumulate(ai, (g.array() / (1.0 + (-x).exp())).matrix());
  };
  return out;
}

Var Tape::log_(Var a) {
  Var out = make(value(a).array().log().matrix(), needs(a));
  nodes_.back().backward = [ai = a.id](Tape& t, const MatX& g) {
    t.accumulate(ai, (g.array() / t.val(ai).array()).matrix());
  };
  return out;
}

Var Tape::clamp_(Var a, double lo, double hi) {
  MatX v = value(a).array().max(lo).min(hi).matrix();
  Var out = make(std::move(v), needs(a));
  nodes_.back().backward = [ai = a.id, lo, hi](Tape& t, const MatX& g) {
    const MatX& x = t.val(ai);
    t.accumulate(ai, g.binaryExpr(x, [lo, hi](double gv, double xv) {
      return (xv > lo && xv < hi) ? gv : 0.0;
    }));
  };
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

Var Tape::sum_all(Var a) {
  Var out = make(MatX::Constant(1, 1, value(a).sum()), needs(a));
  nodes_.back().backward = [ai = a.id](Tape& t, const MatX& g) {
    t.accumulate(ai, MatX::Constant(t.val(ai).rows(), t.val(ai).cols(), g(0, 0)));
  };
  return out;
}

Var Tape::mean_all(Var a) {
  const double count = static_cast<double>(value(a).size());
  Var out = make(MatX::Constant(1, 1, value(a).mean()), needs(a));
  nodes_.back().backward = [ai = a.id, count](Tape& t, const MatX& g) {
    t.accumulate(ai, MatX::Constant(t.val(ai).rows(), t.val(ai).cols(),
                                    g(0, 0) / count));
  };
  return out;
}

Var Tape::mean_abs_diff(Var a, Var b) {
  check_same_shape(value(a), value(b), "mean_abs_diff");
  const double count = static_cast<double>(value(a).size());
  const double v = (value(a) - value(b)).array().abs().mean();
  Var out = make(MatX::Constant(1, 1, v), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id, count](Tape& t, const MatX& g) {
    MatX s = (t.val(ai) - t.val(bi)).array().sign().matrix() * (g(0, 0) / count);
    t.accumulate(ai, s);
    t.accumulate(bi, -s);
  };
  return out;
}

Var Tape::mean_sq_diff(Var a, Var b) {
  check_same_shape(value(a), value(b), "mean_sq_diff");
  const double count = static_cast<double>(value(a).size());
  const double v = (value(a) - value(b)).array().square().mean();
  Var out = make(MatX::Constant(1, 1, v), needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id, count](Tape& t, const MatX& g) {
    MatX s = (t.val(ai) - t.val(bi)) * (2.0 * g(0, 0) / count);
    t.accumulate(ai, s);
    t.accumulate(bi, -s);
  };
  return out;
}

Var Tape::l2_norm(Var a) {
  const double v = value(a).norm();
  Var out = make(MatX::Constant(1, 1, v), needs(a));
  nodes_.back().backward = [ai = a.id, v](Tape& t, const MatX& g) {
    if (v == 0.0) return;  // subgradient 0 at the kink
    t.accumulate(ai, t.val(ai) * (g(0, 0) / v));
  };
  return out;
}

Var Tape::col_cosine(Var a, Var b, double eps) {
  check_same_shape(value(a), value(b), "col_cosine");
  const Index T = value(a).cols();
  if (T == 0) throw ShapeError("col_cosine: empty sequence");
  const MatX& u = value(a);
  const MatX& v = value(b);
  VecX nu(T), nv(T);
  MatX cs(1, T);
  for (Index t = 0; t < T; ++t) {
    nu[t] = u.col(t).norm();
    nv[t] = v.col(t).norm();
    cs(0, t) = (nu[t] < eps || nv[t] < eps)
                   ? 0.0
                   : u.col(t).dot(v.col(t)) / (nu[t] * nv[t]);
  }
  Var out = make(cs, needs(a) || needs(b));
  nodes_.back().backward = [ai = a.id, bi = b.id, nu, nv, cs, eps,
                            T](Tape& t, const MatX& g) {
    const MatX& u = t.val(ai);
    const MatX& v = t.val(bi);
    MatX gu = MatX::Zero(u.rows(), T), gv = MatX::Zero(u.rows(), T);
    for (Index j = 0; j < T; ++j) {
      if (nu[j] < eps || nv[j] < eps) continue;  // flat at the degenerate point
      const double s = g(0, j);
      gu.col(j) = s * (v.col(j) / (nu[j] * nv[j]) -
                       cs(0, j) * u.col(j) / (nu[j] * nu[j]));
      gv.col(j) = s * (u.col(j) / (nu[j] * nv[j]) -
                       cs(0, j) * v.col(j) / (nv[j] * nv[j]));
    }
    t.accumulate(ai, gu);
    t.accumulate(bi, gv);
  };
  return out;
}

Var Tape::mean_col_cosine(Var a, Var b, double eps) {
  return mean_all(col_cosine(a, b, eps));
}

// ---------------------------------------------------------------------------
// Spatial ops

Var Tape::avg_pool(Var a, Index h, Index w, Index factor) {
  const MatX& x = value(a);
  if (x.cols() != h * w) throw ShapeError("avg_pool: spatial size disagrees with H*W");
  if (factor <= 0 || h % factor != 0 || w % factor != 0)
    throw ShapeError("avg_pool: factor must divide both sides");
  const Index h2 = h / factor, w2 = w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  MatX v = MatX::Zero(x.rows(), h2 * w2);
  for (Index y2 = 0; y2 < h2; ++y2)
    for (Index x2 = 0; x2 < w2; ++x2) {
      auto col = v.col(y2 * w2 + x2);
      for (Index dy = 0; dy < factor; ++dy)
        for (Index dx = 0; dx < factor; ++dx)
          col += x.col((y2 * factor + dy) * w + (x2 * factor + dx));
      col *= inv;
    }
  Var out = make(std::move(v), needs(a));
  nodes_.back().backward = [ai = a.id, h, w, h2, w2, factor, inv](Tape& t,
                                                                  const MatX& g) {
    MatX gx = MatX::Zero(t.val(ai).rows(), h * w);
    for (Index y2 = 0; y2 < h2; ++y2)
      for (Index x2 = 0; x2 < w2; ++x2)
        for (Index dy = 0; dy < factor; ++dy)
          for (Index dx = 0; dx < factor; ++dx)
            gx.col((y2 * factor + dy) * w + (x2 * factor + dx)) +=
                inv * g.col(y2 * w2 + x2);
    t.accumulate(ai, gx);
  };
  return out;
}

MatX im2col(const MatX& x, Index h, Index w, Index k, Index stride, Index pad) {
  const Index c_in = x.rows();
  const Index h_out = (h + 2 * pad - k) / stride + 1;
  const Index w_out = (w + 2 * pad - k) / stride + 1;
  MatX cols = MatX::Zero(c_in * k * k, h_out * w_out);
  for (Index oy = 0; oy < h_out; ++oy)
    for (Index ox = 0; ox < w_out; ++ox) {
      const Index col = oy * w_out + ox;
      for (Index ky = 0; ky < k; ++ky) {
        const Index sy = oy * stride - pad + ky;
        if (sy < 0 || sy >= h) continue;
        for (Index kx = 0; kx < k; ++kx) {
          const Index sx = ox * stride - pad + kx;
          if (sx < 0 || sx >= w) continue;
          cols.block((ky * k + kx) * c_in, col, c_in, 1) = x.col(sy * w + sx);
        }
      }
    }
  return cols;
}

MatX col2im(const MatX& cols, Index c_in, Index h, Index w, Index k,
            Index stride, Index pad) {
  const Index h_out = (h + 2 * pad - k) / stride + 1;
  const Index w_out = (w + 2 * pad - k) / stride + 1;
  MatX x = MatX::Zero(c_in, h * w);
  for (Index oy = 0; oy < h_out; ++oy)
    for (Index ox = 0; ox < w_out; ++ox) {
      const Index col = oy * w_out + ox;
      for (Index ky = 0; ky < k; ++ky) {
        const Index sy = oy * stride - pad + ky;
        if (sy < 0 || sy >= h) continue;
        for (Index kx = 0; kx < k; ++kx) {
          const Index sx = ox * stride - pad + kx;
          if (sx < 0 || sx >= w) continue;
          x.col(sy * w + sx) += cols.block((ky * k + kx) * c_in, col, c_in, 1);
        }
      }
    }
  return x;
}

Var Tape::conv2d(Var x, Var w, Var b, Index h, Index wd, Index k, Index stride,
                 Index pad) {
  const MatX& xv = value(x);
  const MatX& wv = value(w);
  if (xv.cols() != h * wd) throw ShapeError("conv2d: spatial size disagrees with H*W");
  if (wv.cols() != xv.rows() * k * k)
    throw ShapeError("conv2d: weight columns must be C_in*k*k");
  if ((h + 2 * pad - k) % stride != 0 || (wd + 2 * pad - k) % stride != 0)
    throw ShapeError("conv2d: stride does not tile the padded input");

  MatX K = im2col(xv, h, wd, k, stride, pad);
  MatX v = wv * K;
  v.colwise() += VecX(value(b).col(0));
  const Index c_in = xv.rows();
  Var out = make(std::move(v), needs(x) || needs(w) || needs(b));
  nodes_.back().backward = [xi = x.id, wi = w.id, bi = b.id, K = std::move(K),
                            c_in, h, wd, k, stride, pad](Tape& t, const MatX& g) {
    t.accumulate(wi, g * K.transpose());
    t.accumulate(bi, g.rowwise().sum());
    if (t.nodes_[static_cast<std::size_t>(xi)].requires_grad)
      t.accumulate(xi, col2im(t.val(wi).transpose() * g, c_in, h, wd, k, stride, pad));
  };
  return out;
}

Var Tape::conv2d_transpose(Var x, Var wt, Var b, Index h, Index wd, Index k,
                           Index stride) {
  const MatX& xv = value(x);
  const MatX& wv = value(wt);
  if (xv.cols() != h * wd)
    throw ShapeError("conv2d_transpose: spatial size disagrees with H*W");
  if (wv.rows() != xv.rows() || wv.cols() % (k * k) != 0)
    throw ShapeError("conv2d_transpose: weights must be C_in x (C_out*k*k)");
  const Index c_out = wv.cols() / (k * k);
  const Index h_out = (h - 1) * stride + k;
  const Index w_out = (wd - 1) * stride + k;

  MatX cols = wv.transpose() * xv;  // (C_out*k*k) x (H*W)
  MatX v = MatX::Zero(c_out, h_out * w_out);
  for (Index y = 0; y < h; ++y)
    for (Index xx = 0; xx < wd; ++xx) {
      const Index col = y * wd + xx;
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx)
          v.col((y * stride + ky) * w_out + (xx * stride + kx)) +=
              cols.block((ky * k + kx) * c_out, col, c_out, 1);
    }
  v.colwise() += VecX(value(b).col(0));

  Var out = make(std::move(v), needs(x) || needs(wt) || needs(b));
  nodes_.back().backward = [xi = x.id, wi = wt.id, bi = b.id, c_out, h, wd, k,
                            stride, h_out, w_out](Tape& t, const MatX& g) {
    // Gather is the adjoint of the scatter above.
    MatX G(c_out * k * k, h * wd);
    for (Index y = 0; y < h; ++y)
      for (Index xx = 0; xx < wd; ++xx) {
        const Index col = y * wd + xx;
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx)
            G.block((ky * k + kx) * c_out, col, c_out, 1) =
                g.col((y * stride + ky) * w_out + (xx * stride + kx));
      }
    t.accumulate(wi, t.val(xi) * G.transpose());
    t.accumulate(bi, g.rowwise().sum());
    if (t.nodes_[static_cast<std::size_t>(xi)].requires_grad)
      t.accumulate(xi, t.val(wi) * G);
  };
  return out;
}

void Adam::step(State& s, MatX& w, const MatX& g) const {
  if (s.t == 0) {
    s.m = MatX::Zero(w.rows(), w.cols());
    s.v = MatX::Zero(w.rows(), w.cols());
  }
  ++s.t;
  s.m = beta1 * s.m + (1.0 - beta1) * g;
  s.v = beta2 * s.v + (1.0 - beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
  w.array() -= lr * (s.m.array() / c1) /
               ((s.v.array() / c2).sqrt() + eps);
}

}  // namespace avsync::ad
