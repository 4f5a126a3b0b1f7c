#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "unlab/autodiff.hpp"
#include "unlab/model.hpp"
#include "unlab/rng.hpp"
#include "unlab/train.hpp"

using namespace unlab;

TEST_CASE("backward through matmul and softmax matches finite differences") {
  ParamStore ps;
  Rng rng(3);
  Tensor a(3, 4), b(4, 5);
  for (double& x : a.v) x = rng.normal();
  for (double& x : b.v) x = rng.normal();
  ps.add("a", a);
  ps.add("b", b);

  auto builder = [&](Tape& t, TapeLeaves& l) {
    Var va = l.get(t, ps, "a");
    Var vb = l.get(t, ps, "b");
    Var c = t.matmul(va, vb);
    Var lp = t.log_softmax_rows(c);
    return t.nll_rows(lp, {1, 3, 0}, 0);
  };
  CHECK(grad_check(builder, ps, 1e-6, 35, 1) < 1e-6);
}

TEST_CASE("quadratic loss gradient is exact to float noise") {
  ParamStore ps;
  Tensor x(1, 6);
  for (int i = 0; i < 6; ++i) x.v[size_t(i)] = 0.3 * i - 1.0;
  ps.add("x", x);
  auto builder = [&](Tape& t, TapeLeaves& l) {
    Var vx = l.get(t, ps, "x");
    Var sq = t.sum_all(t.relu(vx));  // kink away from 0 for these values
    Var q = t.sum_all(t.exp_elem(t.scale(vx, 0.0)));
    (void)q;
    Var x2 = t.matmul_nt(vx, vx);  // sum of squares
    return t.add(t.scale(x2, 0.5), t.scale(sq, 0.0));
  };
  CHECK(grad_check(builder, ps, 1e-5, 6, 2) < 1e-7);
}

TEST_CASE("rmsnorm, attention softmax, relu, slice/concat gradients") {
  ParamStore ps;
  Rng rng(11);
  Tensor x(4, 8), w(8, 8);
  for (double& v : x.v) v = rng.normal();
  for (double& v : w.v) v = rng.normal();
  ps.add("x", x);
  ps.add("w", w);
  auto builder = [&](Tape& t, TapeLeaves& l) {
    Var vx = l.get(t, ps, "x");
    Var vw = l.get(t, ps, "w");
    Var n = t.rmsnorm_rows(vx, 1e-6);
    Var q = t.slice_cols(t.matmul(n, vw), 0, 4);
    Var k = t.slice_cols(t.matmul(n, vw), 4, 4);
    Var s = t.causal_softmax_rows(t.scale(t.matmul_nt(q, k), 0.5));
    Var o = t.concat_cols({t.matmul(s, k), q});
    Var r = t.relu(o);
    return t.sum_all(r);
  };
  CHECK(grad_check(builder, ps, 1e-6, 40, 4) < 1e-4);
}

TEST_CASE("kl ops and softplus gradients") {
  ParamStore ps;
  Rng rng(5);
  Tensor x(1, 5);
  for (double& v : x.v) v = rng.normal();
  ps.add("x", x);
  auto builder = [&](Tape& t, TapeLeaves& l) {
    Var lp = t.log_softmax_rows(l.get(t, ps, "x"));
    Tensor log_q(1, 5, std::log(0.2));
    Var kl1 = t.kl_forward_to_const(lp, log_q);
    Tensor q(1, 5);
    q.v = {0.5, 0.2, 0.1, 0.1, 0.1};
    Var kl2 = t.kl_reverse_to_const(lp, q, {0});
    return t.softplus(t.add(kl1, kl2));
  };
  CHECK(grad_check(builder, ps, 1e-6, 5, 6) < 1e-6);
}

TEST_CASE("non-finite values trip an error") {
  Tape t;
  Tensor bad = Tensor::scalar(1.0);
  Var v = t.leaf(bad);
  Var lg = t.log_elem(t.add_const(v, -1.0));  // log(0) is floored, still finite
  CHECK(std::isfinite(t.scalar(lg)));
  Tensor inf = Tensor::scalar(1e308);
  Var vi = t.leaf(inf);
  CHECK_THROWS_AS(t.exp_elem(vi), std::runtime_error);
}

TEST_CASE("gradients accumulate across shared leaves") {
  ParamStore ps;
  Tensor x(1, 3);
  x.v = {1.0, 2.0, 3.0};
  ps.add("x", x);
  Tape t;
  TapeLeaves l;
  Var vx = l.get(t, ps, "x");
  CHECK(l.get(t, ps, "x") == vx);  // cached
  Var s1 = t.sum_all(vx);
  Var s2 = t.sum_all(t.scale(vx, 2.0));
  Var total = t.add(s1, s2);
  t.backward(total);
  std::map<std::string, Tensor> grads;
  collect_grads(t, l, grads);
  for (double g : grads.at("x").v) CHECK(g == doctest::Approx(3.0));
}
