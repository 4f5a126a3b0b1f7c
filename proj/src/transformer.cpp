#include "unlab/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "unlab/rng.hpp"

namespace unlab {

const std::string TransformerModel::kBackend = "transformer";

namespace {
constexpr double kRmsEps = 1e-6;

void rmsnorm_inplace(Tensor& x) {
  for (int r = 0; r < x.rows; ++r) {
    double* p = x.row_ptr(r);
    double ms = 0.0;
    for (int c = 0; c < x.cols; ++c) ms += p[c] * p[c];
    double s = 1.0 / std::sqrt(ms / x.cols + kRmsEps);
    for (int c = 0; c < x.cols; ++c) p[c] *= s;
  }
}

// out = a * b, all row-major
void mm(const Tensor& a, const Tensor& b, Tensor& out) {
  out = Tensor(a.rows, b.cols, 0.0);
  for (int i = 0; i < a.rows; ++i) {
    const double* __restrict arow = a.row_ptr(i);
    double* __restrict orow = out.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      double av = arow[k];
      const double* __restrict brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
}
}  // namespace

TransformerModel::TransformerModel(std::shared_ptr<const Vocab> vocab,
                                   const TransformerConfig& config)
    : vocab_(std::move(vocab)), config_(config) {
  if (config_.d_model % config_.n_heads != 0)
    throw std::invalid_argument("d_model must be divisible by n_heads");
  int v = vocab_->size();
  int d = config_.d_model;
  Rng rng(config_.init_seed);
  auto randn = [&rng, &config](int rows, int cols) {
    Tensor t(rows, cols);
    for (double& x : t.v) x = rng.normal() * config.init_std;
    return t;
  };
  params_.add("tok_emb", randn(v, d));
  params_.add("pos_emb", randn(config_.max_ctx, d));
  for (int l = 0; l < config_.n_layers; ++l) {
    std::string p = "l" + std::to_string(l) + ".";
    params_.add(p + "wq", randn(d, d));
    params_.add(p + "wk", randn(d, d));
    params_.add(p + "wv", randn(d, d));
    params_.add(p + "wo", randn(d, d));
    params_.add(p + "w1", randn(d, 4 * d));
    params_.add(p + "w2", randn(4 * d, d));
  }
  params_.add("head", Tensor(d, v, 0.0));  // zero logits = uniform start
}

Var TransformerModel::forward_logprobs(Tape& tape, TapeLeaves& leaves,
                                       const std::vector<int>& input) {
  int t_len = int(input.size());
  if (t_len < 1) throw std::invalid_argument("empty input");
  if (t_len > config_.max_ctx)
    throw std::invalid_argument("sequence longer than max context");
  int d = config_.d_model;
  int hd = d / config_.n_heads;
  double att_scale = 1.0 / std::sqrt(double(hd));

  std::vector<int> pos(static_cast<size_t>(t_len), 0);
  for (int i = 0; i < t_len; ++i) pos[size_t(i)] = i;

  Var tok = tape.gather_rows(leaves.get(tape, params_, "tok_emb"), input);
  Var pe = tape.gather_rows(leaves.get(tape, params_, "pos_emb"), pos);
  Var x = tape.add(tok, pe);

  for (int l = 0; l < config_.n_layers; ++l) {
    std::string p = "l" + std::to_string(l) + ".";
    Var xn = tape.rmsnorm_rows(x, kRmsEps);
    Var q = tape.matmul(xn, leaves.get(tape, params_, p + "wq"));
    Var k = tape.matmul(xn, leaves.get(tape, params_, p + "wk"));
    Var v = tape.matmul(xn, leaves.get(tape, params_, p + "wv"));
    std::vector<Var> heads;
    for (int h = 0; h < config_.n_heads; ++h) {
      Var qh = tape.slice_cols(q, h * hd, hd);
      Var kh = tape.slice_cols(k, h * hd, hd);
      Var vh = tape.slice_cols(v, h * hd, hd);
      Var scores = tape.scale(tape.matmul_nt(qh, kh), att_scale);
      Var weights = tape.causal_softmax_rows(scores);
      heads.push_back(tape.matmul(weights, vh));
    }
    Var att = tape.matmul(tape.concat_cols(heads), leaves.get(tape, params_, p + "wo"));
    x = tape.add(x, att);
    Var xm = tape.rmsnorm_rows(x, kRmsEps);
    Var h1 = tape.relu(tape.matmul(xm, leaves.get(tape, params_, p + "w1")));
    Var h2 = tape.matmul(h1, leaves.get(tape, params_, p + "w2"));
    x = tape.add(x, h2);
  }
  Var xf = tape.rmsnorm_rows(x, kRmsEps);
  Var logits = tape.matmul(xf, leaves.get(tape, params_, "head"));
  return tape.log_softmax_rows(logits);
}

Tensor TransformerModel::forward_logits(const std::vector<int>& tokens, bool only_last) const {
  int t_len = int(tokens.size());
  if (t_len < 1) throw std::invalid_argument("empty context");
  if (t_len > config_.max_ctx)
    throw std::invalid_argument("sequence longer than max context");
  int d = config_.d_model;
  int hd = d / config_.n_heads;
  double att_scale = 1.0 / std::sqrt(double(hd));

  const Tensor& tok_emb = params_.at("tok_emb");
  const Tensor& pos_emb = params_.at("pos_emb");
  Tensor x(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    const double* te = tok_emb.row_ptr(tokens[size_t(t)]);
    const double* pe = pos_emb.row_ptr(t);
    double* xr = x.row_ptr(t);
    for (int c = 0; c < d; ++c) xr[c] = te[c] + pe[c];
  }

  Tensor q, k, v, att, h1, h2;
  for (int l = 0; l < config_.n_layers; ++l) {
    std::string p = "l" + std::to_string(l) + ".";
    Tensor xn = x;
    rmsnorm_inplace(xn);
    mm(xn, params_.at(p + "wq"), q);
    mm(xn, params_.at(p + "wk"), k);
    mm(xn, params_.at(p + "wv"), v);
    Tensor merged(t_len, d, 0.0);
    for (int h = 0; h < config_.n_heads; ++h) {
      int c0 = h * hd;
      for (int i = 0; i < t_len; ++i) {
        // causal attention row
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> w(size_t(i) + 1);
        for (int j = 0; j <= i; ++j) {
          double acc = 0.0;
          const double* qi = q.row_ptr(i) + c0;
          const double* kj = k.row_ptr(j) + c0;
          for (int c = 0; c < hd; ++c) acc += qi[c] * kj[c];
          w[size_t(j)] = acc * att_scale;
          mx = std::max(mx, w[size_t(j)]);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          w[size_t(j)] = std::exp(w[size_t(j)] - mx);
          z += w[size_t(j)];
        }
        double* out = merged.row_ptr(i) + c0;
        for (int j = 0; j <= i; ++j) {
          double wj = w[size_t(j)] / z;
          const double* vj = v.row_ptr(j) + c0;
          for (int c = 0; c < hd; ++c) out[c] += wj * vj[c];
        }
      }
    }
    mm(merged, params_.at(p + "wo"), att);
    for (size_t i = 0; i < x.size(); ++i) x.v[i] += att.v[i];
    Tensor xm = x;
    rmsnorm_inplace(xm);
    mm(xm, params_.at(p + "w1"), h1);
    for (double& e : h1.v) e = e > 0.0 ? e : 0.0;
    mm(h1, params_.at(p + "w2"), h2);
    for (size_t i = 0; i < x.size(); ++i) x.v[i] += h2.v[i];
  }
  rmsnorm_inplace(x);
  const Tensor& head = params_.at("head");
  if (only_last) {
    Tensor last(1, d);
    std::copy(x.row_ptr(t_len - 1), x.row_ptr(t_len - 1) + d, last.row_ptr(0));
    Tensor logits;
    mm(last, head, logits);
    logits.check_finite("transformer logits");
    return logits;
  }
  Tensor logits;
  mm(x, head, logits);
  logits.check_finite("transformer logits");
  return logits;
}

Vec TransformerModel::next_token_dist(const std::vector<int>& context) const {
  Tensor logits = forward_logits(context, true);
  Vec out(size_t(logits.cols));
  double mx = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, logits.v[size_t(c)]);
  double z = 0.0;
  for (int c = 0; c < logits.cols; ++c) {
    out[size_t(c)] = std::exp(logits.v[size_t(c)] - mx);
    z += out[size_t(c)];
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<Vec> TransformerModel::per_position_dists(const std::vector<int>& tokens) const {
  if (tokens.size() < 2) return {};
  std::vector<int> input(tokens.begin(), tokens.end() - 1);
  Tensor logits = forward_logits(input, false);
  std::vector<Vec> out;
  for (int r = 0; r < logits.rows; ++r) {
    const double* row = logits.row_ptr(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, row[c]);
    Vec d(size_t(logits.cols));
    double z = 0.0;
    for (int c = 0; c < logits.cols; ++c) {
      d[size_t(c)] = std::exp(row[c] - mx);
      z += d[size_t(c)];
    }
    for (double& x : d) x /= z;
    out.push_back(std::move(d));
  }
  return out;
}

Var TransformerModel::sequence_nll(Tape& tape, TapeLeaves& leaves,
                                   const std::vector<int>& tokens, int from) {
  if (tokens.size() < 2) throw std::invalid_argument("sequence too short");
  if (from < 1) from = 1;
  std::vector<int> input(tokens.begin(), tokens.end() - 1);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  Var lp = forward_logprobs(tape, leaves, input);
  return tape.nll_rows(lp, targets, from - 1);
}

Var TransformerModel::choice_logprobs(Tape& tape, TapeLeaves& leaves,
                                      const std::vector<int>& prompt,
                                      const std::vector<int>& letter_ids) {
  Var lp = forward_logprobs(tape, leaves, prompt);
  Var sub = tape.gather_row_cols(lp, int(prompt.size()) - 1, letter_ids);
  return tape.log_softmax_rows(sub);
}

Var TransformerModel::distill_kl(Tape& tape, TapeLeaves& leaves,
                                 const std::vector<int>& tokens,
                                 const std::vector<Vec>& teacher) {
  if (tokens.size() < 2) throw std::invalid_argument("sequence too short");
  std::vector<int> input(tokens.begin(), tokens.end() - 1);
  Var lp = forward_logprobs(tape, leaves, input);
  int rows = int(input.size());
  Tensor q(rows, vocab_->size(), 0.0);
  std::vector<int> active;
  for (int r = 0; r < rows && r < int(teacher.size()); ++r) {
    const Vec& src = teacher[size_t(r)];
    std::copy(src.begin(), src.end(), q.row_ptr(r));
    active.push_back(r);
  }
  return tape.kl_reverse_to_const(lp, std::move(q), std::move(active));
}

std::unique_ptr<LanguageModel> TransformerModel::clone() const {
  auto copy = std::make_unique<TransformerModel>(vocab_, config_);
  copy->params_ = params_;
  return copy;
}

}  // namespace unlab
