#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unlab/tensor.hpp"

namespace unlab {

// Reverse-mode autodiff over 2D tensors. Nodes live on a tape; backward
// walks the tape in reverse creation order, which is a valid reverse
// topological order because every op is created after its inputs.
using Var = int;

class Tape {
 public:
  Var leaf(Tensor value);

  const Tensor& val(Var x) const { return nodes_[size_t(x)].value; }
  const Tensor& grad(Var x) const { return nodes_[size_t(x)].grad; }
  double scalar(Var x) const;

  // Seeds d(root)=1 and accumulates gradients into every node.
  void backward(Var root);

  size_t size() const { return nodes_.size(); }

  // ---- ops ----
  Var gather_rows(Var a, std::vector<int> ids);
  Var matmul(Var a, Var b);     // [m,k]x[k,n]
  Var matmul_nt(Var a, Var b);  // a * b^T : [m,k]x[n,k] -> [m,n]
  Var add(Var a, Var b);        // same shape
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var relu(Var a);
  Var exp_elem(Var a);
  Var log_elem(Var a);          // inputs floored at 1e-300 to keep logs finite
  Var sub_from_const(double c, Var a);
  Var softplus(Var a);          // elementwise ln(1+e^x), stable
  Var rmsnorm_rows(Var a, double eps);
  Var causal_softmax_rows(Var s);  // row r: softmax over cols 0..r, zero above
  Var log_softmax_rows(Var a);
  Var slice_cols(Var a, int c0, int len);
  Var concat_cols(const std::vector<Var>& parts);
  Var gather_row_cols(Var a, int row, std::vector<int> cols);  // -> [1,C]
  // -sum over rows r >= row_begin of lp[r, targets[r]]
  Var nll_rows(Var lp, std::vector<int> targets, int row_begin);
  // KL(P_theta || Q) where lp holds log-probs of P_theta and log_q = ln Q.
  Var kl_forward_to_const(Var lp, Tensor log_q);
  // sum over given rows of KL(Q || P_theta); q entries are probabilities.
  Var kl_reverse_to_const(Var lp, Tensor q, std::vector<int> rows);
  Var sum_all(Var a);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&)> bw;  // empty for leaves
  };

  Var push(Tensor value, std::function<void(Tape&)> bw, const char* where);
  std::vector<Node> nodes_;

  friend class TapeGradAccess;
  Tensor& grad_mut(Var x) { return nodes_[size_t(x)].grad; }
};

}  // namespace unlab
