#include <doctest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <stdexcept>
#include <thread>

#include <httplib.h>

#include "unlab/paraphrase.hpp"
#include "unlab/pipeline.hpp"
#include "unlab/report.hpp"
#include "unlab/util.hpp"

using namespace unlab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_tabular_config(const std::string& dir) {
  ExperimentConfig cfg = default_config();
  cfg.backend = "tabular";
  cfg.out_dir = dir;
  cfg.world.n_persons = 8;
  cfg.world.n_relations = 3;
  cfg.world.n_forget = 2;
  cfg.corpus_reps = 2;
  cfg.base_train.epochs = 50;
  cfg.base_train.min_epochs = 5;
  cfg.base_train.lr = 0.1;
  cfg.base_train.batch_size = 32;
  cfg.base_train.target_qa_acc = 1.0;
  cfg.df_mcq.epochs = 200;
  cfg.df_mcq.step_size = 0.05;
  cfg.df_mcq.early_stop_entropy_frac = 0.99;
  cfg.whp_plus.epochs = 10;
  cfg.whp_plus.step_size = 0.1;
  cfg.whp_plus.n_obfuscation_samples = 16;
  cfg.npo.epochs = 4;
  cfg.npo.step_size = 0.05;
  cfg.ga.epochs = 3;
  cfg.ga.step_size = 0.02;
  cfg.ga.retain_floor = 0.2;
  cfg.probes.training_mcqs_per_person = 24;
  return cfg;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("/tmp/unlab_test_" + name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config: defaults render and parse back identically") {
  ExperimentConfig cfg = default_config();
  std::string text = render_config(cfg);
  ExperimentConfig back = parse_config(text);
  CHECK(render_config(back) == text);
  CHECK(back.world.n_persons == cfg.world.n_persons);
  CHECK(back.df_mcq.epochs == cfg.df_mcq.epochs);
  CHECK(back.seeds.world == cfg.seeds.world);
}

TEST_CASE("config: unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(parse_config("[world]\nbogus_key = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[nope]\nx = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[run]\nbackend = quantum\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[probes]\nc = 2\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[npo]\nbeta = -1\n"), std::invalid_argument);
}

TEST_CASE("df-mcq default epochs is 3") {
  // the training default the method ships with
  CHECK(default_config().df_mcq.epochs == 3);
}

TEST_CASE("paraphrase: rotation provider cycles question forms") {
  WorldConfig wc;
  wc.n_persons = 4;
  wc.n_relations = 3;
  wc.n_forget = 1;
  World w = generate_world(wc, 7);
  Vocab v = build_vocab(w);
  RotationParaphraser rot(w);
  const Person& p = w.persons[0];
  const Relation& r = w.relations[0];
  std::string stem = question_text(r, p.full_name(), 0);
  std::string next = rot.rewrite(stem);
  CHECK(next == question_text(r, p.full_name(), 1));
  CHECK(rot.rewrite(next) == stem);  // two forms cycle back
  CHECK(rot.rewrite("unknown stem") == "unknown stem");
}

TEST_CASE("paraphrase: unreachable endpoint falls back deterministically") {
  WorldConfig wc;
  wc.n_persons = 4;
  wc.n_relations = 3;
  wc.n_forget = 1;
  World w = generate_world(wc, 7);
  Vocab v = build_vocab(w);
  auto provider = make_paraphraser(w, v, "http://127.0.0.1:1/paraphrase", 100);
  const Person& p = w.persons[0];
  const Relation& r = w.relations[0];
  std::string stem = question_text(r, p.full_name(), 0);
  CHECK(provider->rewrite(stem) == question_text(r, p.full_name(), 1));
}

TEST_CASE("paraphrase: http endpoint used when healthy, rejected on OOV") {
  WorldConfig wc;
  wc.n_persons = 4;
  wc.n_relations = 3;
  wc.n_forget = 1;
  World w = generate_world(wc, 7);
  Vocab v = build_vocab(w);
  const Person& p = w.persons[0];
  const Relation& r = w.relations[0];
  std::string stem = question_text(r, p.full_name(), 0);
  std::string alt = question_text(r, p.full_name(), 1);

  httplib::Server server;
  std::atomic<bool> oov_mode{false};
  server.Post("/paraphrase", [&](const httplib::Request&, httplib::Response& res) {
    if (oov_mode) {
      res.set_content("{\"text\": \"zorblax the unknowable\"}", "application/json");
    } else {
      res.set_content("{\"text\": \"" + alt + "\"}", "application/json");
    }
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto provider = make_paraphraser(
      w, v, "http://127.0.0.1:" + std::to_string(port) + "/paraphrase", 2000);
  CHECK(provider->rewrite(stem) == alt);

  oov_mode = true;  // endpoint returns out-of-vocab text; provider must fall back
  CHECK(provider->rewrite(stem) == alt);  // rotation of the original stem

  server.stop();
  th.join();
}

TEST_CASE("report csv parses back losslessly") {
  ExperimentReport rep;
  rep.config_hash = 12345;
  rep.seed_stamp = "seeds: world=7";
  MetricRow r1;
  r1.method = "df_mcq";
  r1.question_kind = "mcq";
  r1.split = "reference";
  r1.subset = "all";
  r1.n = 24;
  r1.accuracy = 0.19;
  r1.mean_entropy = 1.6072817394823181;
  r1.p_obf_choice = 0.2;
  MetricRow r2;
  r2.method = "base";
  r2.question_kind = "open_ended";
  r2.split = "retain";
  r2.subset = "all";
  r2.n = 32;
  r2.rouge_l = 0.97;
  r2.refusal_rate = 0.0;
  rep.rows = {r1, r2};
  rep.skipped.push_back("npo (no unlearn checkpoint/results)");

  std::string csv = report_csv(rep);
  auto rows = parse_report_csv(csv);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "df_mcq");
  CHECK(*rows[0].mean_entropy == r1.mean_entropy);  // exact round-trip
  CHECK(!rows[0].rouge_l.has_value());
  CHECK(!rows[1].accuracy.has_value());
  CHECK(*rows[1].rouge_l == 0.97);

  ExperimentReport rep2 = rep;
  rep2.rows = rows;
  CHECK(report_csv(rep2) == csv);
}

TEST_CASE("scatter csv round-trips") {
  std::vector<SweepPoint> pts;
  SweepPoint a;
  a.step_size = 1e-4;
  a.n_samples = 8;
  a.yes_rate = 0.25;
  a.efficacy = 0.5;
  SweepPoint b;
  b.step_size = 3e-4;
  b.n_samples = 24;
  b.status = "skipped";
  b.reason = "diverged";
  pts = {a, b};
  auto back = parse_scatter_csv(scatter_csv(pts));
  REQUIRE(back.size() == 2);
  CHECK(back[0].yes_rate == 0.25);
  CHECK(back[1].status == "skipped");
  CHECK(back[1].reason == "diverged");
  CHECK(scatter_csv(back) == scatter_csv(pts));
}

TEST_CASE("stage gating: actionable errors name the missing stage") {
  TempDir dir("gating");
  ExperimentConfig cfg = tiny_tabular_config(dir.path + "/run");

  CHECK_THROWS_WITH_AS(cmd_train_base(cfg),
                       doctest::Contains("gen-world"), std::runtime_error);
  cmd_gen_world(cfg);
  cmd_train_base(cfg);
  try {
    cmd_probe(cfg);
    FAIL("probe should require an unlearn checkpoint");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("unlearn") != std::string::npos);
  }
}

TEST_CASE("tabular end-to-end pipeline: stages, report, determinism") {
  TempDir dir("pipeline");
  ExperimentConfig cfg = tiny_tabular_config(dir.path + "/run1");
  ExperimentReport rep = run_full_pipeline(cfg);
  CHECK(!rep.rows.empty());

  // every configured method present (or listed as skipped)
  std::set<std::string> methods;
  for (const auto& r : rep.rows) methods.insert(r.method);
  CHECK(methods.count("base") == 1);
  CHECK(methods.count("df_mcq") == 1);
  CHECK(methods.count("whp_plus") == 1);
  CHECK(methods.count("npo") == 1);
  CHECK(methods.count("grad_ascent") == 1);

  // alternate-split rows exist for df-mcq
  bool has_alt = false;
  for (const auto& r : rep.rows)
    has_alt = has_alt || (r.method == "df_mcq" && r.question_kind == "yes_no_alt");
  CHECK(has_alt);

  // report csv on disk parses back into the same rows
  RunPaths paths{cfg.out_dir};
  auto parsed = parse_report_csv(read_file(paths.report_csv()));
  CHECK(parsed.size() == rep.rows.size());

  // reports are a pure function of (config, seeds)
  ExperimentConfig cfg2 = cfg;
  cfg2.out_dir = dir.path + "/run2";
  run_full_pipeline(cfg2);
  RunPaths paths2{cfg2.out_dir};
  std::string csv1 = read_file(paths.report_csv());
  std::string csv2 = read_file(paths2.report_csv());
  CHECK(csv1 == csv2);

  // re-running report alone is idempotent (re-scoring from stored results)
  cmd_report(cfg);
  CHECK(read_file(paths.report_csv()) == csv1);

  // df-mcq flattened the forget MCQs on this tabular run
  for (const auto& r : rep.rows) {
    if (r.method == "df_mcq" && r.question_kind == "mcq" && r.split == "reference" &&
        r.subset == "all") {
      CHECK(*r.mean_entropy >= 0.9 * std::log(5.0));
    }
    if (r.method == "base" && r.question_kind == "mcq" && r.split == "reference" &&
        r.subset == "all") {
      CHECK(*r.accuracy >= 0.9);
    }
  }
}

TEST_CASE("manifest records content hashes for artifacts") {
  TempDir dir("manifest");
  ExperimentConfig cfg = tiny_tabular_config(dir.path + "/run");
  cmd_gen_world(cfg);
  RunPaths paths{cfg.out_dir};
  std::string manifest = read_file(paths.manifest());
  CHECK(manifest.find("world.txt") != std::string::npos);
  CHECK(manifest.find("corpus.txt") != std::string::npos);
}
