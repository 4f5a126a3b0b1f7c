#include "unlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace unlab {

Var Tape::push(Tensor value, std::function<void(Tape&)> bw, const char* where) {
  value.check_finite(where);
  Node n;
  n.grad = Tensor(value.rows, value.cols, 0.0);
  n.value = std::move(value);
  n.bw = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) { return push(std::move(value), nullptr, "leaf"); }

double Tape::scalar(Var x) const {
  const Tensor& t = val(x);
  if (t.size() != 1) throw std::logic_error("scalar() on non-scalar node");
  return t.v[0];
}

void Tape::backward(Var root) {
  if (val(root).size() != 1) throw std::logic_error("backward() root must be scalar");
  grad_mut(root).v[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].bw) nodes_[i].bw(*this);
  }
}

Var Tape::gather_rows(Var a, std::vector<int> ids) {
  const Tensor& A = val(a);
  Tensor out(int(ids.size()), A.cols);
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy(A.row_ptr(ids[r]), A.row_ptr(ids[r]) + A.cols, out.row_ptr(int(r)));
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self, ids = std::move(ids)](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                for (size_t r = 0; r < ids.size(); ++r) {
                  double* dst = ga.row_ptr(ids[r]);
                  const double* src = g.row_ptr(int(r));
                  for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
                }
              },
              "gather_rows");
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.cols != B.rows) throw std::logic_error("matmul shape mismatch");
  Tensor out(A.rows, B.cols, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    const double* __restrict arow = A.row_ptr(i);
    double* __restrict orow = out.row_ptr(i);
    for (int k = 0; k < A.cols; ++k) {
      double av = arow[k];
      const double* __restrict brow = B.row_ptr(k);
      for (int j = 0; j < B.cols; ++j) orow[j] += av * brow[j];
    }
  }
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, b, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& A = t.val(a);
                const Tensor& B = t.val(b);
                Tensor& ga = t.grad_mut(a);
                Tensor& gb = t.grad_mut(b);
                // dA += g * B^T
                for (int i = 0; i < A.rows; ++i) {
                  const double* __restrict grow = g.row_ptr(i);
                  double* __restrict garow = ga.row_ptr(i);
                  for (int k = 0; k < A.cols; ++k) {
                    const double* __restrict brow = B.row_ptr(k);
                    double acc = 0.0;
                    for (int j = 0; j < B.cols; ++j) acc += grow[j] * brow[j];
                    garow[k] += acc;
                  }
                }
                // dB += A^T * g
                for (int i = 0; i < A.rows; ++i) {
                  const double* __restrict arow = A.row_ptr(i);
                  const double* __restrict grow = g.row_ptr(i);
                  for (int k = 0; k < A.cols; ++k) {
                    double av = arow[k];
                    double* __restrict gbrow = gb.row_ptr(k);
                    for (int j = 0; j < B.cols; ++j) gbrow[j] += av * grow[j];
                  }
                }
              },
              "matmul");
}

Var Tape::matmul_nt(Var a, Var b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.cols != B.cols) throw std::logic_error("matmul_nt shape mismatch");
  Tensor out(A.rows, B.rows, 0.0);
  for (int i = 0; i < A.rows; ++i) {
    const double* __restrict arow = A.row_ptr(i);
    double* __restrict orow = out.row_ptr(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* __restrict brow = B.row_ptr(j);
      double acc = 0.0;
      for (int k = 0; k < A.cols; ++k) acc += arow[k] * brow[k];
      orow[j] = acc;
    }
  }
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, b, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& A = t.val(a);
                const Tensor& B = t.val(b);
                Tensor& ga = t.grad_mut(a);
                Tensor& gb = t.grad_mut(b);
                // dA += g * B ; dB += g^T * A
                for (int i = 0; i < A.rows; ++i) {
                  const double* __restrict grow = g.row_ptr(i);
                  double* __restrict garow = ga.row_ptr(i);
                  for (int j = 0; j < B.rows; ++j) {
                    double gv = grow[j];
                    const double* __restrict brow = B.row_ptr(j);
                    for (int k = 0; k < A.cols; ++k) garow[k] += gv * brow[k];
                  }
                }
                for (int i = 0; i < A.rows; ++i) {
                  const double* __restrict grow = g.row_ptr(i);
                  const double* __restrict arow = A.row_ptr(i);
                  for (int j = 0; j < B.rows; ++j) {
                    double gv = grow[j];
                    double* __restrict gbrow = gb.row_ptr(j);
                    for (int k = 0; k < A.cols; ++k) gbrow[k] += gv * arow[k];
                  }
                }
              },
              "matmul_nt");
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) throw std::logic_error("add shape mismatch");
  Tensor out = A;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] += B.v[i];
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, b, self](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                Tensor& gb = t.grad_mut(b);
                for (size_t i = 0; i < g.size(); ++i) {
                  ga.v[i] += g.v[i];
                  gb.v[i] += g.v[i];
                }
              },
              "add");
}

Var Tape::scale(Var a, double c) {
  Tensor out = val(a);
  for (double& x : out.v) x *= c;
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, c, self](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i) ga.v[i] += c * g.v[i];
              },
              "scale");
}

Var Tape::add_const(Var a, double c) {
  Tensor out = val(a);
  for (double& x : out.v) x += c;
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i];
              },
              "add_const");
}

Var Tape::relu(Var a) {
  Tensor out = val(a);
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& A = t.val(a);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i)
                  if (A.v[i] > 0.0) ga.v[i] += g.v[i];
              },
              "relu");
}

Var Tape::exp_elem(Var a) {
  Tensor out = val(a);
  for (double& x : out.v) x = std::exp(x);
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& Y = t.val(self);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * Y.v[i];
              },
              "exp");
}

Var Tape::log_elem(Var a) {
  Tensor out = val(a);
  for (double& x : out.v) x = std::log(std::max(x, 1e-300));
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& A = t.val(a);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i)
                  ga.v[i] += g.v[i] / std::max(A.v[i], 1e-300);
              },
              "log");
}

Var Tape::sub_from_const(double c, Var a) {
  Tensor out = val(a);
  for (double& x : out.v) x = c - x;
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i) ga.v[i] -= g.v[i];
              },
              "sub_from_const");
}

Var Tape::softplus(Var a) {
  Tensor out = val(a);
  for (double& x : out.v) x = std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& A = t.val(a);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < g.size(); ++i) {
                  double s = 1.0 / (1.0 + std::exp(-A.v[i]));
                  ga.v[i] += g.v[i] * s;
                }
              },
              "softplus");
}

Var Tape::rmsnorm_rows(Var a, double eps) {
  const Tensor& A = val(a);
  Tensor out(A.rows, A.cols);
  std::vector<double> inv_s(size_t(A.rows));
  for (int r = 0; r < A.rows; ++r) {
    const double* x = A.row_ptr(r);
    double ms = 0.0;
    for (int c = 0; c < A.cols; ++c) ms += x[c] * x[c];
    ms = ms / A.cols + eps;
    double s = 1.0 / std::sqrt(ms);
    inv_s[size_t(r)] = s;
    double* y = out.row_ptr(r);
    for (int c = 0; c < A.cols; ++c) y[c] = x[c] * s;
  }
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self, inv_s = std::move(inv_s)](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& A = t.val(a);
                Tensor& ga = t.grad_mut(a);
                for (int r = 0; r < A.rows; ++r) {
                  const double* x = A.row_ptr(r);
                  const double* gy = g.row_ptr(r);
                  double* gx = ga.row_ptr(r);
                  double s = inv_s[size_t(r)];
                  double dot = 0.0;
                  for (int c = 0; c < A.cols; ++c) dot += gy[c] * x[c];
                  double k = dot * s * s * s / A.cols;
                  for (int c = 0; c < A.cols; ++c) gx[c] += gy[c] * s - x[c] * k;
                }
              },
              "rmsnorm");
}

Var Tape::causal_softmax_rows(Var s) {
  const Tensor& S = val(s);
  Tensor out(S.rows, S.cols, 0.0);
  for (int r = 0; r < S.rows; ++r) {
    int lim = std::min(r + 1, S.cols);
    const double* x = S.row_ptr(r);
    double* p = out.row_ptr(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < lim; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < lim; ++c) {
      p[c] = std::exp(x[c] - mx);
      z += p[c];
    }
    for (int c = 0; c < lim; ++c) p[c] /= z;
  }
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [s, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& P = t.val(self);
                Tensor& gs = t.grad_mut(s);
                for (int r = 0; r < P.rows; ++r) {
                  int lim = std::min(r + 1, P.cols);
                  const double* p = P.row_ptr(r);
                  const double* gp = g.row_ptr(r);
                  double* gx = gs.row_ptr(r);
                  double dot = 0.0;
                  for (int c = 0; c < lim; ++c) dot += gp[c] * p[c];
                  for (int c = 0; c < lim; ++c) gx[c] += p[c] * (gp[c] - dot);
                }
              },
              "causal_softmax");
}

Var Tape::log_softmax_rows(Var a) {
  const Tensor& A = val(a);
  Tensor out(A.rows, A.cols);
  for (int r = 0; r < A.rows; ++r) {
    const double* x = A.row_ptr(r);
    double* y = out.row_ptr(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < A.cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (int c = 0; c < A.cols; ++c) z += std::exp(x[c] - mx);
    double lz = mx + std::log(z);
    for (int c = 0; c < A.cols; ++c) y[c] = x[c] - lz;
  }
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, self](Tape& t) {
                const Tensor& g = t.grad(self);
                const Tensor& Y = t.val(self);
                Tensor& ga = t.grad_mut(a);
                for (int r = 0; r < Y.rows; ++r) {
                  const double* y = Y.row_ptr(r);
                  const double* gy = g.row_ptr(r);
                  double* gx = ga.row_ptr(r);
                  double sum = 0.0;
                  for (int c = 0; c < Y.cols; ++c) sum += gy[c];
                  for (int c = 0; c < Y.cols; ++c) gx[c] += gy[c] - std::exp(y[c]) * sum;
                }
              },
              "log_softmax");
}

Var Tape::slice_cols(Var a, int c0, int len) {
  const Tensor& A = val(a);
  Tensor out(A.rows, len);
  for (int r = 0; r < A.rows; ++r)
    std::copy(A.row_ptr(r) + c0, A.row_ptr(r) + c0 + len, out.row_ptr(r));
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, c0, len, self](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                for (int r = 0; r < g.rows; ++r) {
                  double* dst = ga.row_ptr(r) + c0;
                  const double* src = g.row_ptr(r);
                  for (int c = 0; c < len; ++c) dst[c] += src[c];
                }
              },
              "slice_cols");
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::logic_error("concat_cols: empty");
  int rows = val(parts[0]).rows;
  int total = 0;
  for (Var p : parts) {
    if (val(p).rows != rows) throw std::logic_error("concat_cols: row mismatch");
    total += val(p).cols;
  }
  Tensor out(rows, total);
  int off = 0;
  for (Var p : parts) {
    const Tensor& P = val(p);
    for (int r = 0; r < rows; ++r)
      std::copy(P.row_ptr(r), P.row_ptr(r) + P.cols, out.row_ptr(r) + off);
    off += P.cols;
  }
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [parts, self](Tape& t) {
                const Tensor& g = t.grad(self);
                int off = 0;
                for (Var p : parts) {
                  Tensor& gp = t.grad_mut(p);
                  for (int r = 0; r < g.rows; ++r) {
                    const double* src = g.row_ptr(r) + off;
                    double* dst = gp.row_ptr(r);
                    for (int c = 0; c < gp.cols; ++c) dst[c] += src[c];
                  }
                  off += gp.cols;
                }
              },
              "concat_cols");
}

Var Tape::gather_row_cols(Var a, int row, std::vector<int> cols) {
  const Tensor& A = val(a);
  Tensor out(1, int(cols.size()));
  for (size_t i = 0; i < cols.size(); ++i) out.v[i] = A.at(row, cols[i]);
  Var self = Var(nodes_.size());
  return push(std::move(out),
              [a, row, self, cols = std::move(cols)](Tape& t) {
                const Tensor& g = t.grad(self);
                Tensor& ga = t.grad_mut(a);
                for (size_t i = 0; i < cols.size(); ++i) ga.at(row, cols[i]) += g.v[i];
              },
              "gather_row_cols");
}

Var Tape::nll_rows(Var lp, std::vector<int> targets, int row_begin) {
  const Tensor& LP = val(lp);
  if (int(targets.size()) != LP.rows) throw std::logic_error("nll_rows: target size mismatch");
  double loss = 0.0;
  for (int r = row_begin; r < LP.rows; ++r) loss -= LP.at(r, targets[size_t(r)]);
  Var self = Var(nodes_.size());
  return push(Tensor::scalar(loss),
              [lp, row_begin, self, targets = std::move(targets)](Tape& t) {
                double g = t.grad(self).v[0];
                Tensor& glp = t.grad_mut(lp);
                for (int r = row_begin; r < glp.rows; ++r) glp.at(r, targets[size_t(r)]) -= g;
              },
              "nll_rows");
}

Var Tape::kl_forward_to_const(Var lp, Tensor log_q) {
  const Tensor& LP = val(lp);
  if (!LP.same_shape(log_q)) throw std::logic_error("kl_forward_to_const shape mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < LP.size(); ++i) loss += std::exp(LP.v[i]) * (LP.v[i] - log_q.v[i]);
  Var self = Var(nodes_.size());
  return push(Tensor::scalar(loss),
              [lp, self, log_q = std::move(log_q)](Tape& t) {
                double g = t.grad(self).v[0];
                const Tensor& LP = t.val(lp);
                Tensor& glp = t.grad_mut(lp);
                for (size_t i = 0; i < LP.size(); ++i)
                  glp.v[i] += g * std::exp(LP.v[i]) * (LP.v[i] - log_q.v[i] + 1.0);
              },
              "kl_forward_to_const");
}

Var Tape::kl_reverse_to_const(Var lp, Tensor q, std::vector<int> rows) {
  const Tensor& LP = val(lp);
  if (!LP.same_shape(q)) throw std::logic_error("kl_reverse_to_const shape mismatch");
  double loss = 0.0;
  for (int r : rows) {
    const double* qi = q.row_ptr(r);
    const double* li = LP.row_ptr(r);
    for (int c = 0; c < q.cols; ++c) {
      if (qi[c] <= 0.0) continue;
      loss += qi[c] * (std::log(std::max(qi[c], 1e-12)) - li[c]);
    }
  }
  Var self = Var(nodes_.size());
  return push(Tensor::scalar(loss),
              [lp, self, q = std::move(q), rows = std::move(rows)](Tape& t) {
                double g = t.grad(self).v[0];
                Tensor& glp = t.grad_mut(lp);
                for (int r : rows) {
                  const double* qi = q.row_ptr(r);
                  double* gi = glp.row_ptr(r);
                  for (int c = 0; c < q.cols; ++c) gi[c] -= g * qi[c];
                }
              },
              "kl_reverse_to_const");
}

Var Tape::sum_all(Var a) {
  const Tensor& A = val(a);
  double s = 0.0;
  for (double x : A.v) s += x;
  Var self = Var(nodes_.size());
  return push(Tensor::scalar(s),
              [a, self](Tape& t) {
                double g = t.grad(self).v[0];
                Tensor& ga = t.grad_mut(a);
                for (double& x : ga.v) x += g;
              },
              "sum_all");
}

}  // namespace unlab
