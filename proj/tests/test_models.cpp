#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

#include "unlab/checkpoint.hpp"
#include "unlab/corpus.hpp"
#include "unlab/rng.hpp"
#include "unlab/tabular.hpp"
#include "unlab/train.hpp"
#include "unlab/transformer.hpp"
#include "unlab/util.hpp"

using namespace unlab;

namespace {

struct Fixture {
  std::shared_ptr<World> world;
  std::shared_ptr<Vocab> vocab;
  Fixture(int persons = 6, int relations = 3, int forget = 1, uint64_t seed = 7) {
    WorldConfig cfg;
    cfg.n_persons = persons;
    cfg.n_relations = relations;
    cfg.n_forget = forget;
    world = std::make_shared<World>(generate_world(cfg, seed));
    vocab = std::make_shared<Vocab>(build_vocab(*world));
  }
};

// Fixed-distribution model for exercising the distribution-extraction ops.
class FixedModel : public LanguageModel {
 public:
  FixedModel(std::shared_ptr<const Vocab> vocab, Vec dist)
      : vocab_(std::move(vocab)), dist_(std::move(dist)) {}
  const std::string& backend() const override {
    static std::string b = "fixed";
    return b;
  }
  const Vocab& vocab() const override { return *vocab_; }
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  Vec next_token_dist(const std::vector<int>&) const override { return dist_; }
  Var sequence_nll(Tape& t, TapeLeaves&, const std::vector<int>&, int) override {
    return t.leaf(Tensor::scalar(0.0));
  }
  Var choice_logprobs(Tape& t, TapeLeaves&, const std::vector<int>&,
                      const std::vector<int>& letters) override {
    Tensor out(1, int(letters.size()), std::log(1.0 / double(letters.size())));
    return t.leaf(std::move(out));
  }
  Var distill_kl(Tape& t, TapeLeaves&, const std::vector<int>&,
                 const std::vector<Vec>&) override {
    return t.leaf(Tensor::scalar(0.0));
  }
  std::vector<Vec> per_position_dists(const std::vector<int>& tokens) const override {
    return std::vector<Vec>(tokens.size() - 1, dist_);
  }
  std::unique_ptr<LanguageModel> clone() const override {
    return std::make_unique<FixedModel>(vocab_, dist_);
  }

 private:
  std::shared_ptr<const Vocab> vocab_;
  ParamStore params_;
  Vec dist_;
};

}  // namespace

TEST_CASE("restricted choice distribution renormalizes raw letter mass") {
  Fixture fx;
  Vec raw(size_t(fx.vocab->size()), 0.0);
  auto letters = fx.vocab->letter_ids(3);
  raw[size_t(letters[0])] = 0.2;
  raw[size_t(letters[1])] = 0.2;
  raw[size_t(letters[2])] = 0.1;
  raw[size_t(fx.vocab->eos_id())] = 0.5;
  FixedModel m(fx.vocab, raw);
  ChoiceDistribution d = restricted_choice_distribution(m, {0}, letters);
  CHECK(d.probs[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(d.probs[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(d.probs[2] == doctest::Approx(0.2).epsilon(1e-12));

  auto five = fx.vocab->letter_ids(5);
  Vec one_hot(size_t(fx.vocab->size()), 0.0);
  one_hot[size_t(five[0])] = 1.0;
  FixedModel m2(fx.vocab, one_hot);
  ChoiceDistribution d2 = restricted_choice_distribution(m2, {0}, five);
  CHECK(d2.probs[0] == doctest::Approx(1.0));
  CHECK(d2.probs[4] == doctest::Approx(0.0));

  CHECK_THROWS_AS(
      restricted_choice_distribution(m, {0}, {letters[0], letters[0], letters[1]}),
      std::invalid_argument);
}

TEST_CASE("normalized yes/no from raw probabilities") {
  Fixture fx;
  Vec raw(size_t(fx.vocab->size()), 0.0);
  raw[size_t(fx.vocab->yes_id())] = 0.3;
  raw[size_t(fx.vocab->no_id())] = 0.1;
  raw[size_t(fx.vocab->eos_id())] = 0.6;
  FixedModel m(fx.vocab, raw);
  auto [p_yes, p_no] = normalized_yes_no(m, {0});
  CHECK(p_yes == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(p_no == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("tabular: open-question distribution equals the softmax logit row") {
  Fixture fx;
  TabularModel m(fx.world, fx.vocab);
  // randomize logits, then recompute the softmax by hand
  Rng rng(3);
  for (const auto& name : m.params().names)
    for (double& x : m.params().at(name).v) x = rng.normal();

  const Person& p = fx.world->persons[2];
  const FactTriplet& f = facts_of(*fx.world, p.id)[0];
  const Relation& r = fx.world->relation(f.relation);
  std::vector<int> prompt = fx.vocab->tokenize(open_prompt_text(r, p.full_name(), 0));
  Vec dist = m.next_token_dist(prompt);

  const Tensor& logits = m.params().at("rel." + r.id);
  int prow = 2;
  double mx = -1e300, z = 0.0;
  for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, logits.at(prow, c));
  for (int c = 0; c < logits.cols; ++c) z += std::exp(logits.at(prow, c) - mx);
  for (size_t c = 0; c < r.object_vocab.size(); ++c) {
    double expect = std::exp(logits.at(prow, int(c)) - mx) / z;
    CHECK(dist[size_t(fx.vocab->id(r.object_vocab[c]))] ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  double sum = 0.0;
  for (double x : dist) sum += x;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("tabular: trains to exact QA memorization") {
  Fixture fx(6, 3, 1, 11);
  TrainingCorpus corpus = render_corpus(*fx.world, *fx.vocab, 2, 5);
  TabularModel m(fx.world, fx.vocab);
  TrainHyper hy;
  hy.epochs = 60;
  hy.min_epochs = 5;
  hy.lr = 0.1;
  hy.batch_size = 32;
  hy.target_qa_acc = 1.0;
  BaseTrainStats st = train_base(m, corpus, hy, *fx.world);
  CHECK(st.qa_accuracy == doctest::Approx(1.0));
  CHECK(st.heldout_ce_after < st.heldout_ce_before);
}

TEST_CASE("fresh transformer with zeroed head is uniform") {
  Fixture fx;
  TransformerConfig tc;
  tc.n_layers = 2;
  tc.d_model = 16;
  tc.n_heads = 2;
  TransformerModel m(fx.vocab, tc);
  Vec dist = m.next_token_dist(fx.vocab->tokenize("Question:"));
  for (double p : dist) CHECK(p == doctest::Approx(1.0 / fx.vocab->size()).epsilon(1e-12));
}

TEST_CASE("transformer: tape forward agrees with the inference path") {
  Fixture fx;
  TransformerConfig tc;
  tc.n_layers = 2;
  tc.d_model = 16;
  tc.n_heads = 2;
  TransformerModel m(fx.vocab, tc);
  Rng rng(5);
  for (const auto& name : m.params().names)
    for (double& x : m.params().at(name).v) x += 0.05 * rng.normal();

  const Person& p = fx.world->persons[0];
  const Relation& r = fx.world->relations[0];
  std::vector<int> prompt = fx.vocab->tokenize(open_prompt_text(r, p.full_name(), 0));

  Tape tape;
  TapeLeaves leaves;
  auto letters = fx.vocab->letter_ids(5);
  Var lp = m.choice_logprobs(tape, leaves, prompt, letters);
  ChoiceDistribution d = restricted_choice_distribution(m, prompt, letters);
  for (int i = 0; i < 5; ++i)
    CHECK(std::exp(tape.val(lp).v[size_t(i)]) ==
          doctest::Approx(d.probs[size_t(i)]).epsilon(1e-9));

  // sequence nll equals -sum log p over the inference path
  std::vector<int> seq = prompt;
  seq.push_back(fx.vocab->id(facts_of(*fx.world, p.id)[0].object));
  seq.push_back(fx.vocab->eos_id());
  Tape t2;
  TapeLeaves l2;
  double nll = t2.scalar(m.sequence_nll(t2, l2, seq, 1));
  double manual = 0.0;
  for (size_t t = 1; t < seq.size(); ++t) {
    std::vector<int> ctx(seq.begin(), seq.begin() + long(t));
    manual -= std::log(m.next_token_dist(ctx)[size_t(seq[t])]);
  }
  CHECK(nll == doctest::Approx(manual).epsilon(1e-9));
}

TEST_CASE("transformer gradients match finite differences") {
  Fixture fx(4, 3, 1, 2);
  TransformerConfig tc;
  tc.n_layers = 2;
  tc.d_model = 8;
  tc.n_heads = 2;
  TransformerModel m(fx.vocab, tc);
  Rng rng(9);
  for (const auto& name : m.params().names)
    for (double& x : m.params().at(name).v) x += 0.05 * rng.normal();
  std::vector<Sequence> qa = render_open_qa(*fx.world, *fx.vocab, fx.world->persons[0].id);
  auto builder = [&](Tape& t, TapeLeaves& l) {
    return m.sequence_nll(t, l, qa[0].tokens, 1);
  };
  CHECK(grad_check(builder, m.params(), 1e-6, 30, 3) < 1e-4);
}

TEST_CASE("next_token_dist is a probability distribution on random contexts") {
  Fixture fx;
  TransformerConfig tc;
  tc.n_layers = 1;
  tc.d_model = 8;
  tc.n_heads = 1;
  TransformerModel m(fx.vocab, tc);
  Rng rng(17);
  for (const auto& name : m.params().names)
    for (double& x : m.params().at(name).v) x += 0.1 * rng.normal();
  for (int trial = 0; trial < 20; ++trial) {
    int len = 1 + int(rng.below(10));
    std::vector<int> ctx;
    for (int i = 0; i < len; ++i) ctx.push_back(int(rng.below(uint64_t(fx.vocab->size()))));
    Vec d = m.next_token_dist(ctx);
    double sum = 0.0;
    for (double p : d) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("checkpoint round-trip reproduces distributions bit-exactly") {
  Fixture fx;
  TransformerConfig tc;
  tc.n_layers = 1;
  tc.d_model = 8;
  tc.n_heads = 1;
  TransformerModel m(fx.vocab, tc);
  Rng rng(23);
  for (const auto& name : m.params().names)
    for (double& x : m.params().at(name).v) x += 0.1 * rng.normal();
  m.params().step = 42;

  std::string path = "/tmp/unlab_test_ckpt.bin";
  save_checkpoint(m, path);
  TransformerModel m2(fx.vocab, tc);
  load_checkpoint(m2, path);
  CHECK(m2.params().step == 42);
  std::vector<int> ctx = fx.vocab->tokenize("Question: Where was");
  Vec a = m.next_token_dist(ctx);
  Vec b = m2.next_token_dist(ctx);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // truncation -> corrupt-file error
  std::string full = read_file(path);
  write_file(path, full.substr(0, full.size() / 2));
  TransformerModel m3(fx.vocab, tc);
  CHECK_THROWS_AS(load_checkpoint(m3, path), std::runtime_error);

  // backend mismatch
  save_checkpoint(m, path);
  TabularModel tab(fx.world, fx.vocab);
  CHECK_THROWS_AS(load_checkpoint(tab, path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("clone keeps a frozen copy while the source trains") {
  Fixture fx;
  TabularModel m(fx.world, fx.vocab);
  auto frozen = m.clone();
  const Person& p = fx.world->persons[0];
  const FactTriplet& f = facts_of(*fx.world, p.id)[0];
  const Relation& r = fx.world->relation(f.relation);
  std::vector<int> prompt = fx.vocab->tokenize(open_prompt_text(r, p.full_name(), 0));
  Vec before = frozen->next_token_dist(prompt);
  for (double& x : m.params().at("rel." + r.id).v) x += 1.0;
  Vec after = frozen->next_token_dist(prompt);
  for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}
