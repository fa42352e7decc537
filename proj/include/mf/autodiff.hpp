#pragma once

// Reverse-mode automatic differentiation over Eigen matrices.
//
// A Tape owns a growing list of nodes; every operation appends one node
// holding its value and a backward closure that scatters the node's
// adjoint into its parents. backward() seeds the terminal node with 1
// and replays the closures in reverse creation order, which is exactly
// backpropagation-through-time for the recurrent graphs built on top.
//
// All values are dense MatrixXd. Vectors are n x 1 matrices. Scalars are
// 1 x 1. Ops are deliberately few; model code composes them.

#include "mf/common.hpp"

#include <functional>
#include <vector>

namespace mf::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Mat& value() const;
    const Mat& grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
};

class Tape {
public:
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        std::function<void()> backward;  // empty for leaves
    };

    Var constant(Mat v) { return push(std::move(v), /*needs_grad=*/false, {}); }

    // Trainable leaf. The caller keeps ownership of the source matrix;
    // grads are read back from grad() after backward().
    Var leaf(const Mat& v) { return push(v, /*needs_grad=*/true, {}); }

    void backward(Var loss);
    void clear_grads();

    const Mat& value(int idx) const { return nodes_[idx].value; }
    const Mat& grad(int idx) const { return nodes_[idx].grad; }
    Mat& grad_mut(int idx) { return nodes_[idx].grad; }
    bool needs_grad(int idx) const { return nodes_[idx].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    Var push(Mat value, bool needs_grad, std::function<void()> backward);

private:
    std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(idx); }
inline const Mat& Var::grad() const { return tape->grad(idx); }

// --- arithmetic ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// matrix product a * b
Var matmul(Var a, Var b);
// a * b^T, the shape used by row-major linear layers
Var matmul_nt(Var a, Var b);
// broadcast a row bias: out_ij = a_ij + v_j (v is n x 1)
Var add_rowvec(Var a, Var v);
// E_ij = u_i + v_j from two column vectors (pairwise attention logits)
Var pairwise_sum(Var u, Var v);

// --- shape ---
Var concat_cols(Var a, Var b);
Var concat_cols(Var a, Var b, Var c);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
// out row (i * times + j) = in row i; backward sums replica grads
Var repeat_rows(Var a, Eigen::Index times);

// --- reductions ---
Var sum(Var a);       // 1 x 1
Var mean_all(Var a);  // 1 x 1

// --- elementwise nonlinearities ---
Var vexp(Var a);
Var vlog(Var a);  // caller guarantees positivity
Var vtanh(Var a);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope);
Var elu(Var a);
Var hardtanh(Var a, double lo, double hi);

// Row-wise softmax restricted to mask != 0; entries outside the mask are
// exactly zero. Every row must have at least one unmasked entry.
Var masked_softmax_rows(Var logits, const Eigen::ArrayXXd& mask);

// BatchNorm over rows (one feature per column). In training mode the batch
// statistics enter the graph and running stats are updated in place with
// `momentum`; in eval mode the frozen running stats act as constants.
struct BatchNormBuffers {
    Mat* running_mean = nullptr;  // n x 1
    Mat* running_var = nullptr;   // n x 1
};
Var batchnorm(Var x, Var gamma, Var beta, BatchNormBuffers buffers, bool training,
              double momentum = 0.1, double eps = 1e-5);

}  // namespace mf::ad
