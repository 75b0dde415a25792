// Reverse-mode autodiff over Eigen matrices. A Tape owns a topologically
// ordered node list; Vars are handles into it. The op set is exactly what the
// sync losses and the toy adversarial harness need: dense algebra, a few
// activations, im2col convolution and its transpose, and fused reductions.
//
// Feature matrices follow a columns-are-timesteps convention (D x T) and
// image tensors a channels-are-rows convention (C x H*W, spatial index
// y*W + x), so every op is a plain GEMM or an elementwise map.
#pragma once

#include "avsync/common.hpp"

#include <functional>
#include <vector>

namespace avsync::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  // Leaves. `requires_grad` marks a trainable input whose gradient should be
  // materialized by backward().
  Var leaf(MatX value, bool requires_grad = false);

  const MatX& value(Var v) const;
  // Valid after backward(); zero-sized for nodes backward never reached.
  const MatX& grad(Var v) const;

  // Runs reverse accumulation from a scalar (1x1) root.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  // --- op constructors (also exposed as free functions below) -------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);            // elementwise
  Var scale(Var a, double s);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var bias_add(Var m, Var b);       // b is C x 1, broadcast over columns
  Var tile_cols(Var v, Index n);    // C x 1 -> C x n
  Var concat_rows(Var a, Var b);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, Index start, Index len);
  Var mean_rows(Var a);             // C x N -> 1 x N

  Var tanh_(Var a);
  Var sigmoid_(Var a);
  Var leaky_relu(Var a, double alpha);
  Var softplus_(Var a);
  Var log_(Var a);
  Var clamp_(Var a, double lo, double hi);  // zero gradient outside (lo, hi)

  Var sum_all(Var a);               // -> 1 x 1
  Var mean_all(Var a);              // -> 1 x 1
  Var mean_abs_diff(Var a, Var b);  // -> 1 x 1
  Var mean_sq_diff(Var a, Var b);   // -> 1 x 1
  Var l2_norm(Var a);               // Frobenius norm -> 1 x 1
  // Cosine similarity between matching columns as a 1 x N row. Columns whose
  // norm falls below `eps` yield similarity 0 with zero gradient.
  Var col_cosine(Var a, Var b, double eps = 1e-12);
  // mean_all(col_cosine(a, b)).
  Var mean_col_cosine(Var a, Var b, double eps = 1e-12);

  // 2x average pooling generalized to `factor`; input is C x H*W.
  Var avg_pool(Var a, Index h, Index w, Index factor);

  // x: C_in x H*W, w: C_out x (C_in*k*k), b: C_out x 1.
  Var conv2d(Var x, Var w, Var b, Index h, Index wd, Index k, Index stride,
             Index pad);
  // Transposed conv, no padding: output is (H-1)*stride + k per side.
  // x: C_in x H*W, wt: C_in x (C_out*k*k), b: C_out x 1.
  Var conv2d_transpose(Var x, Var wt, Var b, Index h, Index wd, Index k,
                       Index stride);

 private:
  struct Node {
    MatX value;
    MatX grad;
    bool requires_grad = false;
    std::function<void(Tape&, const MatX&)> backward;
  };

  Var make(MatX value, bool requires_grad,
           std::function<void(Tape&, const MatX&)> backward = nullptr);
  void accumulate(int id, const MatX& g);
  bool needs(Var v) const;
  const MatX& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  std::vector<Node> nodes_;
};

// Convenience free-function forms.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(double s, Var a) { return a.tape->scale(a, s); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var tanh_(Var a) { return a.tape->tanh_(a); }
inline Var sigmoid_(Var a) { return a.tape->sigmoid_(a); }
inline Var softplus_(Var a) { return a.tape->softplus_(a); }

// im2col/col2im used by conv2d; exposed for the oracle tests.
MatX im2col(const MatX& x, Index h, Index w, Index k, Index stride, Index pad);
MatX col2im(const MatX& cols, Index c_in, Index h, Index w, Index k,
            Index stride, Index pad);

// Adaptive-moment optimizer over raw matrices; one State per parameter.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  struct State {
    MatX m, v;
    long t = 0;
  };

  void step(State& s, MatX& w, const MatX& g) const;
};

}  // namespace avsync::ad
