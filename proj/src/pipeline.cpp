#include "unlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include "unlab/checkpoint.hpp"
#include "unlab/metrics.hpp"
#include "unlab/paraphrase.hpp"
#include "unlab/rng.hpp"
#include "unlab/tabular.hpp"
#include "unlab/transformer.hpp"
#include "unlab/util.hpp"

namespace unlab {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const std::string& stage_hint) {
  if (!file_exists(path))
    throw std::runtime_error("missing " + path + "; run the " + stage_hint + " stage first");
}

void ensure_dirs(const RunPaths& paths) {
  fs::create_directories(paths.root);
  fs::create_directories(paths.root + "/checkpoints");
  fs::create_directories(paths.root + "/logs");
  fs::create_directories(paths.root + "/probes");
  fs::create_directories(paths.root + "/results");
  fs::create_directories(paths.root + "/report");
}

// Content-hash manifest; rewritten sorted so reruns are byte-stable.
void record_artifact(const RunPaths& paths, const std::string& file) {
  std::map<std::string, std::string> entries;
  if (file_exists(paths.manifest())) {
    std::istringstream is(read_file(paths.manifest()));
    std::string line;
    while (std::getline(is, line)) {
      auto parts = split_on(line, '\t');
      if (parts.size() == 2) entries[parts[1]] = parts[0];
    }
  }
  std::string content = read_file(file);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(content)));
  std::string rel = file.substr(paths.root.size() + 1);
  entries[rel] = buf;
  std::ostringstream os;
  for (const auto& [p, h] : entries) os << h << "\t" << p << "\n";
  write_file(paths.manifest(), os.str());
}

const std::vector<std::string> kMethodNames = {"df_mcq", "whp_plus", "npo", "grad_ascent"};

std::vector<int> answer_tokens(const std::vector<int>& generated, const Vocab& vocab) {
  (void)vocab;
  return generated;
}

std::vector<std::string> to_words(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int t : ids) out.push_back(vocab.word(t));
  return out;
}

}  // namespace

RunContext load_context(const ExperimentConfig& cfg) {
  RunContext ctx;
  ctx.paths.root = cfg.out_dir;
  require_file(ctx.paths.world(), "gen-world");
  auto world = std::make_shared<World>(parse_world(read_file(ctx.paths.world())));
  ctx.vocab = std::make_shared<Vocab>(build_vocab(*world));
  ctx.world = std::move(world);
  return ctx;
}

std::unique_ptr<LanguageModel> build_model(const ExperimentConfig& cfg,
                                           std::shared_ptr<const World> world,
                                           std::shared_ptr<const Vocab> vocab) {
  if (cfg.backend == "tabular") return std::make_unique<TabularModel>(world, vocab);
  TransformerConfig tc = cfg.transformer;
  tc.init_seed = cfg.seeds.train;
  return std::make_unique<TransformerModel>(vocab, tc);
}

std::unique_ptr<LanguageModel> load_model(const ExperimentConfig& cfg, const RunContext& ctx,
                                          const std::string& name) {
  auto model = build_model(cfg, ctx.world, ctx.vocab);
  load_checkpoint(*model, ctx.paths.ckpt(name));
  return model;
}

void cmd_gen_world(const ExperimentConfig& cfg) {
  RunPaths paths{cfg.out_dir};
  ensure_dirs(paths);
  World world = generate_world(cfg.world, cfg.seeds.world);
  Vocab vocab = build_vocab(world);
  uint64_t render_seed = cfg.seeds.world ^ 0x5bd1e995u;
  TrainingCorpus corpus = render_corpus(world, vocab, cfg.corpus_reps, render_seed,
                                        cfg.probes.c);
  write_file(paths.config(), cfg.raw_text.empty() ? render_config(cfg) : cfg.raw_text);
  write_file(paths.world(), serialize_world(world));
  write_file(paths.world_meta(), world_header(world));
  write_file(paths.corpus(), serialize_corpus(corpus, vocab));
  write_file(paths.corpus_meta(), corpus_header(world, cfg.corpus_reps, render_seed));
  for (const auto& f : {paths.config(), paths.world(), paths.world_meta(), paths.corpus(),
                        paths.corpus_meta()})
    record_artifact(paths, f);
}

BaseTrainStats cmd_train_base(const ExperimentConfig& cfg) {
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.corpus(), "gen-world");
  TrainingCorpus corpus = parse_corpus(read_file(ctx.paths.corpus()), *ctx.vocab);
  auto model = build_model(cfg, ctx.world, ctx.vocab);
  TrainHyper hyper = cfg.base_train;
  hyper.seed = cfg.seeds.train;
  BaseTrainStats stats = train_base(*model, corpus, hyper, *ctx.world);
  save_checkpoint(*model, ctx.paths.ckpt("base"));
  std::ostringstream os;
  os << "heldout_ce_before\t" << format_double(stats.heldout_ce_before) << "\n"
     << "heldout_ce_after\t" << format_double(stats.heldout_ce_after) << "\n"
     << "qa_accuracy\t" << format_double(stats.qa_accuracy) << "\n"
     << "mcq_accuracy\t" << format_double(stats.mcq_accuracy) << "\n"
     << "epochs_run\t" << stats.epochs_run << "\n";
  write_file(ctx.paths.train_log("base"), os.str());
  record_artifact(ctx.paths, ctx.paths.ckpt("base"));
  record_artifact(ctx.paths, ctx.paths.train_log("base"));
  if (stats.heldout_ce_after >= stats.heldout_ce_before)
    throw std::runtime_error("train-base postcondition failed: held-out CE did not decrease");
  if (stats.qa_accuracy < hyper.target_qa_acc)
    throw std::runtime_error("train-base postcondition failed: QA accuracy " +
                             format_double(stats.qa_accuracy) + " below target " +
                             format_double(hyper.target_qa_acc));
  return stats;
}

ObfuscationPlan build_obfuscation_plan(const ExperimentConfig& cfg, const RunContext& ctx,
                                       const LanguageModel& teacher, int n_samples) {
  ObfuscationPlan plan;
  for (const auto& target : ctx.world->forget_ids) {
    ObfuscationSet set = make_obfuscation_samples(
        *ctx.world, *ctx.vocab, teacher, target, ctx.world->retain_ids, n_samples,
        cfg.seeds.unlearn ^ fnv1a64("obf|" + target));
    for (const auto& [key, objs] : set.record.objects)
      plan.record.objects[key].insert(objs.begin(), objs.end());
    plan.per_person.push_back(std::move(set));
  }
  return plan;
}

namespace {

// Training MCQs for df-mcq, optionally rewriting stems through the
// paraphrase provider (deterministic rotation unless an endpoint is set).
std::vector<McqItem> build_training_mcqs(const ExperimentConfig& cfg, const RunContext& ctx,
                                         const std::vector<std::string>& persons,
                                         McqOrigin origin, int per_person) {
  std::vector<McqItem> items;
  for (const auto& pid : persons) {
    auto batch = gen_training_mcqs(*ctx.world, *ctx.vocab, pid, per_person, cfg.probes.c,
                                   cfg.seeds.unlearn);
    for (auto& it : batch) it.origin = origin;
    items.insert(items.end(), batch.begin(), batch.end());
  }

  std::string endpoint = cfg.paraphrase_endpoint;
  if (const char* env = std::getenv("UNLAB_PARAPHRASE_URL")) endpoint = env;
  if (!endpoint.empty()) {
    auto provider = make_paraphraser(*ctx.world, *ctx.vocab, endpoint,
                                     cfg.paraphrase_timeout_ms);
    const Vocab& v = *ctx.vocab;
    int tok_q = v.id("Question"), tok_c = v.id("Choices"), tok_colon = v.id(":");
    for (auto& it : items) {
      // stem = tokens between "Question :" and "Choices :"
      size_t stem_end = 2;
      while (stem_end + 1 < it.question.size() &&
             !(it.question[stem_end] == tok_c && it.question[stem_end + 1] == tok_colon))
        stem_end += 1;
      std::vector<int> stem(it.question.begin() + 2, it.question.begin() + long(stem_end));
      std::string rewritten = provider->rewrite(v.detokenize(stem));
      std::vector<int> new_stem = v.tokenize(rewritten);
      std::vector<int> rebuilt;
      rebuilt.push_back(tok_q);
      rebuilt.push_back(tok_colon);
      rebuilt.insert(rebuilt.end(), new_stem.begin(), new_stem.end());
      rebuilt.insert(rebuilt.end(), it.question.begin() + long(stem_end), it.question.end());
      it.question = std::move(rebuilt);
    }
  }
  return items;
}

}  // namespace

void cmd_unlearn(const ExperimentConfig& cfg, Method method) {
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.ckpt("base"), "train-base");
  auto model = load_model(cfg, ctx, "base");
  auto original = model->clone();
  const World& world = *ctx.world;
  const Vocab& vocab = *ctx.vocab;
  std::string name = method_name(method);

  MethodConfig mc;
  switch (method) {
    case Method::df_mcq: mc = cfg.df_mcq; break;
    case Method::whp_plus: mc = cfg.whp_plus; break;
    case Method::npo: mc = cfg.npo; break;
    case Method::grad_ascent: mc = cfg.ga; break;
  }
  mc.seed = cfg.seeds.unlearn;

  if (method == Method::df_mcq) {
    auto forget = build_training_mcqs(cfg, ctx, world.forget_ids, McqOrigin::forget_train,
                                      cfg.probes.training_mcqs_per_person);
    int per_retain = int((forget.size() + world.retain_ids.size() - 1) /
                         world.retain_ids.size());
    auto retain = build_training_mcqs(cfg, ctx, world.retain_ids, McqOrigin::retain_train,
                                      per_retain);
    std::vector<std::vector<int>> gen_prompts;
    std::vector<McqItem> probe_items;
    ObfuscationRecord empty;
    for (const auto& pid : world.forget_ids) {
      const Person& p = world.person(pid);
      const Relation& r = world.relation(facts_of(world, pid)[0].relation);
      gen_prompts.push_back(vocab.tokenize(open_prompt_text(r, p.full_name(), 0)));
      auto probes = gen_mcq(world, vocab, pid, empty, cfg.probes.c, cfg.seeds.probe_shuffle, 1);
      auto items = probe_mcqs_as_items(probes);
      probe_items.insert(probe_items.end(), items.begin(), items.end());
    }
    auto logs = run_df_mcq(*model, *original, forget, retain, mc, gen_prompts, probe_items);
    write_file(ctx.paths.train_log(name), serialize_epoch_logs(logs));
    write_file(ctx.paths.training_mcqs(), serialize_mcq_items(forget, vocab));
    record_artifact(ctx.paths, ctx.paths.training_mcqs());
  } else if (method == Method::whp_plus) {
    ObfuscationPlan plan = build_obfuscation_plan(cfg, ctx, *original,
                                                  mc.n_obfuscation_samples);
    for (const auto& set : plan.per_person) run_obfuscation(*model, set, mc);
    write_file(ctx.paths.obf_record(), serialize_obf_record(plan.record));
    record_artifact(ctx.paths, ctx.paths.obf_record());
    std::ostringstream os;
    os << "samples_per_person\t" << mc.n_obfuscation_samples << "\n";
    write_file(ctx.paths.train_log(name), os.str());
  } else {
    std::vector<Sequence> forget_qa;
    for (const auto& pid : world.forget_ids) {
      auto qa = render_open_qa(world, vocab, pid);
      forget_qa.insert(forget_qa.end(), qa.begin(), qa.end());
    }
    std::vector<double> curve;
    if (method == Method::npo) {
      curve = run_npo(*model, forget_qa, *original, mc.npo_beta, mc);
    } else {
      curve = run_gradient_ascent(*model, forget_qa, mc, world);
    }
    std::ostringstream os;
    for (size_t i = 0; i < curve.size(); ++i)
      os << i << "\t" << format_double(curve[i]) << "\n";
    write_file(ctx.paths.train_log(name), os.str());
  }
  save_checkpoint(*model, ctx.paths.ckpt(name));
  record_artifact(ctx.paths, ctx.paths.ckpt(name));
  record_artifact(ctx.paths, ctx.paths.train_log(name));
}

namespace {

std::string eval_payload(const LanguageModel& model, const ProbeQuestion& q) {
  const Vocab& vocab = model.vocab();
  if (q.kind == ProbeKind::open_ended) {
    std::vector<int> gen = greedy_decode(model, q.prompt, 12);
    std::ostringstream os;
    for (size_t i = 0; i < gen.size(); ++i) os << (i ? " " : "") << vocab.word(gen[i]);
    return os.str();
  }
  if (q.kind == ProbeKind::yes_no) {
    auto [p_yes, p_no] = normalized_yes_no(model, q.prompt);
    (void)p_no;
    return format_double(p_yes);
  }
  ChoiceDistribution d = restricted_choice_distribution(model, q.prompt, q.choice_letters);
  std::ostringstream os;
  for (size_t i = 0; i < d.probs.size(); ++i) os << (i ? ";" : "") << format_double(d.probs[i]);
  return os.str();
}

struct Agg {
  int n = 0;
  double rouge = 0.0;
  int refusals = 0;
  int correct = 0;
  double entropy_sum = 0.0;
  int yes = 0;
  double p_obf_sum = 0.0;
  int p_obf_n = 0;
};

void score_question(const ProbeQuestion& q, const std::string& payload, const Vocab& vocab,
                    Agg& agg) {
  agg.n += 1;
  if (q.kind == ProbeKind::open_ended) {
    std::vector<std::string> words = split_ws(payload);
    agg.refusals += is_refusal(words) ? 1 : 0;
    agg.rouge += rouge_l_recall(words, split_ws(q.gold));
  } else if (q.kind == ProbeKind::yes_no) {
    double p_yes = std::stod(payload);
    bool said_yes = p_yes > 0.5;
    agg.yes += said_yes ? 1 : 0;
    agg.correct += said_yes == (q.gold == "Yes") ? 1 : 0;
    agg.entropy_sum += entropy({p_yes, 1.0 - p_yes}).value;
  } else {
    std::vector<double> probs;
    for (const auto& s : split_on(payload, ';')) probs.push_back(std::stod(s));
    size_t best = 0;
    for (size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    agg.correct += vocab.word(q.choice_letters[best]) == q.gold ? 1 : 0;
    agg.entropy_sum += entropy(probs).value;
    for (size_t i = 0; i < q.choice_meta.size(); ++i) {
      if (q.choice_meta[i] == Split::in_training) {
        agg.p_obf_sum += probs[i];
        agg.p_obf_n += 1;
      }
    }
  }
}

MetricRow finish_row(const std::string& method, const std::string& kind,
                     const std::string& split, const std::string& subset, ProbeKind pk,
                     const Agg& a) {
  MetricRow r;
  r.method = method;
  r.question_kind = kind;
  r.split = split;
  r.subset = subset;
  r.n = a.n;
  if (a.n == 0) return r;
  if (pk == ProbeKind::open_ended) {
    r.rouge_l = a.rouge / a.n;
    r.refusal_rate = double(a.refusals) / a.n;
  } else if (pk == ProbeKind::yes_no) {
    r.accuracy = double(a.correct) / a.n;
    r.mean_entropy = a.entropy_sum / a.n;
    r.yes_rate = double(a.yes) / a.n;
  } else {
    r.accuracy = double(a.correct) / a.n;
    r.mean_entropy = a.entropy_sum / a.n;
    if (a.p_obf_n > 0) r.p_obf_choice = a.p_obf_sum / a.p_obf_n;
  }
  return r;
}

}  // namespace

void cmd_probe(const ExperimentConfig& cfg) {
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.ckpt("base"), "train-base");
  std::vector<std::string> models = {"base"};
  for (const auto& m : kMethodNames)
    if (file_exists(ctx.paths.ckpt(m))) models.push_back(m);
  if (models.size() == 1)
    throw std::runtime_error(
        "probe: no unlearned checkpoints found; run the unlearn stage first "
        "(unlab unlearn --method df-mcq)");

  ObfuscationRecord record;
  if (file_exists(ctx.paths.obf_record()))
    record = parse_obf_record(read_file(ctx.paths.obf_record()));
  ProbeSuite suite = build_probe_suite(*ctx.world, *ctx.vocab, record, cfg.probes.c,
                                       cfg.seeds.probe_shuffle);
  write_file(ctx.paths.probe_suite(), serialize_probes(suite, *ctx.vocab));
  record_artifact(ctx.paths, ctx.paths.probe_suite());

  for (const auto& name : models) {
    auto model = load_model(cfg, ctx, name);
    std::ostringstream os;
    for (size_t i = 0; i < suite.questions.size(); ++i)
      os << i << "\t" << eval_payload(*model, suite.questions[i]) << "\n";
    write_file(ctx.paths.results(name), os.str());
    record_artifact(ctx.paths, ctx.paths.results(name));
  }
}

ExperimentReport cmd_report(const ExperimentConfig& cfg) {
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.probe_suite(), "probe");
  ProbeSuite suite = parse_probes(read_file(ctx.paths.probe_suite()), *ctx.vocab);
  const Vocab& vocab = *ctx.vocab;

  ExperimentReport report;
  report.config_hash = config_identity_hash(cfg);
  std::ostringstream stamp;
  stamp << "seeds: world=" << cfg.seeds.world << " train=" << cfg.seeds.train
        << " unlearn=" << cfg.seeds.unlearn << " probe_shuffle=" << cfg.seeds.probe_shuffle
        << " sweep=" << cfg.seeds.sweep;
  report.seed_stamp = stamp.str();

  std::vector<McqItem> training_mcqs;
  if (file_exists(ctx.paths.training_mcqs()))
    training_mcqs = parse_mcq_items(read_file(ctx.paths.training_mcqs()), vocab);

  std::vector<std::string> models = {"base"};
  for (const auto& m : kMethodNames) {
    if (file_exists(ctx.paths.results(m)))
      models.push_back(m);
    else
      report.skipped.push_back(m + " (no unlearn checkpoint/results)");
  }
  if (models.size() == 1) throw std::runtime_error("report: no method results; run probe first");

  for (const auto& name : models) {
    require_file(ctx.paths.results(name), "probe");
    std::vector<std::string> payloads(suite.questions.size());
    std::istringstream is(read_file(ctx.paths.results(name)));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      size_t qid = std::stoul(line.substr(0, tab));
      payloads.at(qid) = tab == std::string::npos ? "" : line.substr(tab + 1);
    }

    std::map<std::tuple<int, int, std::string>, Agg> groups;
    for (size_t i = 0; i < suite.questions.size(); ++i) {
      const ProbeQuestion& q = suite.questions[i];
      score_question(q, payloads[i], vocab, groups[{int(q.kind), int(q.split), "all"}]);
      if (q.split == Split::reference &&
          (q.kind == ProbeKind::open_ended || q.kind == ProbeKind::mcq))
        score_question(q, payloads[i], vocab,
                       groups[{int(q.kind), int(q.split), q.target_person}]);
    }
    // Alternate split (training-MCQ distractors as the in-training set).
    if (name == "df_mcq" && !training_mcqs.empty()) {
      auto relabeled = alternate_split(training_mcqs, suite.questions);
      size_t j = 0;
      for (size_t i = 0; i < suite.questions.size(); ++i) {
        if (suite.questions[i].kind != ProbeKind::yes_no) continue;
        const ProbeQuestion& q = relabeled[j];
        if (q.split == Split::in_training || q.split == Split::out_of_training) {
          Agg& agg = groups[{100, int(q.split), "all"}];  // kind 100 = yes_no_alt
          score_question(q, payloads[i], vocab, agg);
        }
        j += 1;
      }
    }
    for (const auto& [key, agg] : groups) {
      auto [kind_i, split_i, subset] = key;
      std::string kind =
          kind_i == 100 ? "yes_no_alt" : probe_kind_name(ProbeKind(kind_i));
      ProbeKind pk = kind_i == 100 ? ProbeKind::yes_no : ProbeKind(kind_i);
      report.rows.push_back(
          finish_row(name, kind, split_name(Split(split_i)), subset, pk, agg));
    }
  }

  if (file_exists(ctx.paths.scatter())) {
    report.sweep_points = parse_scatter_csv(read_file(ctx.paths.scatter()));
    std::vector<double> xs, ys;
    for (const auto& p : report.sweep_points) {
      if (p.status != "ok") continue;
      xs.push_back(p.yes_rate);
      ys.push_back(p.efficacy);
    }
    if (xs.size() >= 3) {
      try {
        report.sweep_pearson = pearson(xs, ys);
      } catch (const std::invalid_argument&) {
        report.sweep_pearson = std::nullopt;
      }
    }
  }

  write_file(ctx.paths.report_csv(), report_csv(report));
  write_file(ctx.paths.report_md(), report_markdown(report));
  record_artifact(ctx.paths, ctx.paths.report_csv());
  record_artifact(ctx.paths, ctx.paths.report_md());
  return report;
}

std::vector<ProbeQuestion> filter_probes(const std::vector<ProbeQuestion>& qs, ProbeKind kind,
                                         Split split) {
  std::vector<ProbeQuestion> out;
  for (const auto& q : qs)
    if (q.kind == kind && q.split == split) out.push_back(q);
  return out;
}

std::vector<McqItem> probe_mcqs_as_items(const std::vector<ProbeQuestion>& qs) {
  std::vector<McqItem> out;
  for (const auto& q : qs) {
    if (q.kind != ProbeKind::mcq) continue;
    McqItem item;
    item.question = q.prompt;
    item.choice_letters = q.choice_letters;
    item.choice_texts = q.choice_texts;
    item.origin = McqOrigin::probe;
    item.target_person = q.target_person;
    item.relation = q.relation;
    out.push_back(std::move(item));
  }
  return out;
}

OpenEval eval_open_ended(const LanguageModel& model, const std::vector<ProbeQuestion>& qs) {
  OpenEval out;
  const Vocab& vocab = model.vocab();
  for (const auto& q : qs) {
    if (q.kind != ProbeKind::open_ended) continue;
    std::vector<int> gen = answer_tokens(greedy_decode(model, q.prompt, 12), vocab);
    std::vector<std::string> words = to_words(gen, vocab);
    out.mean_rouge += rouge_l_recall(words, split_ws(q.gold));
    out.refusal += is_refusal(words) ? 1.0 : 0.0;
    out.n += 1;
  }
  if (out.n > 0) {
    out.mean_rouge /= out.n;
    out.refusal /= out.n;
  }
  return out;
}

double eval_mcq_entropy(const LanguageModel& model, const std::vector<ProbeQuestion>& qs) {
  double s = 0.0;
  int n = 0;
  for (const auto& q : qs) {
    if (q.kind != ProbeKind::mcq) continue;
    ChoiceDistribution d = restricted_choice_distribution(model, q.prompt, q.choice_letters);
    s += entropy(d.probs).value;
    n += 1;
  }
  return n > 0 ? s / n : 0.0;
}

double eval_mcq_accuracy(const LanguageModel& model, const std::vector<ProbeQuestion>& qs) {
  int hit = 0, n = 0;
  const Vocab& vocab = model.vocab();
  for (const auto& q : qs) {
    if (q.kind != ProbeKind::mcq) continue;
    ChoiceDistribution d = restricted_choice_distribution(model, q.prompt, q.choice_letters);
    size_t best = 0;
    for (size_t i = 1; i < d.probs.size(); ++i)
      if (d.probs[i] > d.probs[best]) best = i;
    hit += vocab.word(q.choice_letters[best]) == q.gold ? 1 : 0;
    n += 1;
  }
  return n > 0 ? double(hit) / n : 0.0;
}

double eval_yes_rate(const LanguageModel& model, const std::vector<ProbeQuestion>& qs) {
  std::vector<double> ps;
  for (const auto& q : qs) {
    if (q.kind != ProbeKind::yes_no) continue;
    ps.push_back(normalized_yes_no(model, q.prompt).first);
  }
  return yes_rate(ps);
}

std::vector<SweepPoint> cmd_sweep(const ExperimentConfig& cfg) {
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.ckpt("base"), "train-base");
  auto base = load_model(cfg, ctx, "base");
  const World& world = *ctx.world;
  const Vocab& vocab = *ctx.vocab;

  // Fixed out-of-training Yes-No probe set, shared across all cells: the
  // in-training split moves with the samples, the out-of-training one does
  // not (it is defined by the run's canonical obfuscation record).
  ObfuscationRecord record;
  if (file_exists(ctx.paths.obf_record())) {
    record = parse_obf_record(read_file(ctx.paths.obf_record()));
  } else {
    record = build_obfuscation_plan(cfg, ctx, *base, cfg.whp_plus.n_obfuscation_samples)
                 .record;
  }
  std::vector<ProbeQuestion> yes_no_probes, open_probes;
  for (const auto& pid : world.forget_ids) {
    for (auto& q : gen_yes_no(world, vocab, pid, record))
      if (q.split == Split::out_of_training) yes_no_probes.push_back(q);
    for (auto& q : gen_open_ended(world, vocab, pid)) open_probes.push_back(q);
  }

  std::vector<SweepPoint> points;
  for (double lr : cfg.sweep.step_sizes) {
    for (int k : cfg.sweep.sample_counts) {
      SweepPoint p;
      p.step_size = lr;
      p.n_samples = k;
      try {
        auto model = base->clone();
        MethodConfig mc = cfg.whp_plus;
        mc.step_size = lr;
        mc.n_obfuscation_samples = k;
        mc.seed = cfg.seeds.sweep;
        ObfuscationPlan plan = build_obfuscation_plan(cfg, ctx, *base, k);
        for (const auto& set : plan.per_person) run_obfuscation(*model, set, mc);
        p.yes_rate = eval_yes_rate(*model, yes_no_probes);
        OpenEval open = eval_open_ended(*model, open_probes);
        p.efficacy = 1.0 - open.mean_rouge;
        p.status = "ok";
      } catch (const std::exception& e) {
        p.status = "skipped";
        p.reason = e.what();
      }
      points.push_back(std::move(p));
    }
  }
  ensure_dirs(ctx.paths);
  write_file(ctx.paths.scatter(), scatter_csv(points));
  record_artifact(ctx.paths, ctx.paths.scatter());

  std::vector<double> xs, ys;
  for (const auto& p : points) {
    if (p.status != "ok") continue;
    xs.push_back(p.yes_rate);
    ys.push_back(p.efficacy);
  }
  std::ostringstream os;
  os << "cells_ok\t" << xs.size() << "\n";
  os << "cells_total\t" << points.size() << "\n";
  if (xs.size() >= 3) {
    try {
      os << "pearson\t" << format_double(pearson(xs, ys)) << "\n";
    } catch (const std::invalid_argument& e) {
      os << "pearson\tundefined (" << e.what() << ")\n";
    }
  }
  write_file(ctx.paths.sweep_summary(), os.str());
  record_artifact(ctx.paths, ctx.paths.sweep_summary());
  return points;
}

SftAttackResult cmd_sft_attack(const ExperimentConfig& cfg, const std::string& model_name) {
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.ckpt(model_name), model_name == "base" ? "train-base" : "unlearn");
  auto model = load_model(cfg, ctx, model_name);
  const World& world = *ctx.world;
  const Vocab& vocab = *ctx.vocab;

  ObfuscationRecord record;
  if (file_exists(ctx.paths.obf_record()))
    record = parse_obf_record(read_file(ctx.paths.obf_record()));
  std::vector<ProbeQuestion> forget_open, forget_mcq, hard_mcq;
  for (const auto& pid : world.forget_ids) {
    for (auto& q : gen_open_ended(world, vocab, pid)) forget_open.push_back(q);
    for (auto& q : gen_mcq(world, vocab, pid, record, cfg.probes.c, cfg.seeds.probe_shuffle))
      forget_mcq.push_back(q);
    for (auto& q : gen_hard_retain(world, vocab, pid, cfg.probes.c, cfg.seeds.probe_shuffle))
      if (q.kind == ProbeKind::mcq) hard_mcq.push_back(q);
  }

  SftAttackResult res;
  OpenEval before = eval_open_ended(*model, forget_open);
  res.forget_rouge_before = before.mean_rouge;
  res.refusal_before = before.refusal;
  res.forget_mcq_entropy_before = eval_mcq_entropy(*model, forget_mcq);
  res.hard_retain_acc_before = eval_mcq_accuracy(*model, hard_mcq);

  // Supervised fine-tuning on retain-person QA.
  reset_optimizer(model->params());
  std::vector<Sequence> attack_qa;
  for (const auto& pid : world.retain_ids) {
    auto qa = render_open_qa(world, vocab, pid);
    attack_qa.insert(attack_qa.end(), qa.begin(), qa.end());
  }
  Rng rng(cfg.seeds.unlearn ^ 0xa5a5a5a5ull);
  std::vector<size_t> idx(attack_qa.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (int epoch = 0; epoch < cfg.sft.epochs; ++epoch) {
    rng.shuffle(idx);
    for (size_t b = 0; b < idx.size(); b += size_t(cfg.sft.batch_size)) {
      Tape tape;
      TapeLeaves leaves;
      Var acc = -1;
      size_t e = std::min(idx.size(), b + size_t(cfg.sft.batch_size));
      for (size_t i = b; i < e; ++i) {
        Var nll = model->sequence_nll(tape, leaves, attack_qa[idx[i]].tokens, 1);
        acc = acc < 0 ? nll : tape.add(acc, nll);
      }
      tape.backward(acc);
      std::map<std::string, Tensor> grads;
      collect_grads(tape, leaves, grads);
      adam_step(model->params(), grads, cfg.sft.lr);
    }
  }

  OpenEval after = eval_open_ended(*model, forget_open);
  res.forget_rouge_after = after.mean_rouge;
  res.refusal_after = after.refusal;
  res.forget_mcq_entropy_after = eval_mcq_entropy(*model, forget_mcq);
  res.hard_retain_acc_after = eval_mcq_accuracy(*model, hard_mcq);

  save_checkpoint(*model, ctx.paths.ckpt(model_name + "_sft_attack"));
  std::ostringstream os;
  os << "model\t" << model_name << "\n";
  os << "forget_rouge\t" << format_double(res.forget_rouge_before) << "\t"
     << format_double(res.forget_rouge_after) << "\n";
  os << "refusal\t" << format_double(res.refusal_before) << "\t"
     << format_double(res.refusal_after) << "\n";
  os << "forget_mcq_entropy\t" << format_double(res.forget_mcq_entropy_before) << "\t"
     << format_double(res.forget_mcq_entropy_after) << "\n";
  os << "hard_retain_acc\t" << format_double(res.hard_retain_acc_before) << "\t"
     << format_double(res.hard_retain_acc_after) << "\n";
  write_file(ctx.paths.sft_report(), os.str());
  record_artifact(ctx.paths, ctx.paths.sft_report());
  return res;
}

ContinualResult cmd_continual(const ExperimentConfig& cfg, int n_targets) {
  if (n_targets < 2) throw std::invalid_argument("continual: need at least 2 targets");
  RunContext ctx = load_context(cfg);
  require_file(ctx.paths.ckpt("base"), "train-base");
  const World& world = *ctx.world;
  const Vocab& vocab = *ctx.vocab;
  if (n_targets > int(world.forget_ids.size()))
    throw std::invalid_argument("continual: world has only " +
                                std::to_string(world.forget_ids.size()) + " forget persons");
  std::vector<std::string> targets(world.forget_ids.begin(),
                                   world.forget_ids.begin() + n_targets);

  auto base = load_model(cfg, ctx, "base");
  auto original = base->clone();

  ObfuscationRecord empty;
  std::map<std::string, std::vector<McqItem>> probe_items;
  for (const auto& t : targets) {
    probe_items[t] = probe_mcqs_as_items(
        gen_mcq(world, vocab, t, empty, cfg.probes.c, cfg.seeds.probe_shuffle));
  }
  std::vector<ProbeQuestion> hard_mcq;
  for (const auto& t : targets)
    for (auto& q : gen_hard_retain(world, vocab, t, cfg.probes.c, cfg.seeds.probe_shuffle))
      if (q.kind == ProbeKind::mcq) hard_mcq.push_back(q);

  ContinualResult res;
  res.ln_c = std::log(double(cfg.probes.c));
  res.base_hard_retain_acc = eval_mcq_accuracy(*base, hard_mcq);

  auto make_retain = [&](uint64_t salt) {
    std::vector<McqItem> retain;
    int per_retain = int((cfg.probes.training_mcqs_per_person + world.retain_ids.size() - 1) /
                         world.retain_ids.size());
    for (const auto& pid : world.retain_ids) {
      auto items = gen_training_mcqs(world, vocab, pid, per_retain, cfg.probes.c,
                                     cfg.seeds.unlearn ^ salt);
      for (auto& it : items) it.origin = McqOrigin::retain_train;
      retain.insert(retain.end(), items.begin(), items.end());
    }
    return retain;
  };

  auto model = base->clone();
  std::vector<std::string> done;
  for (const auto& target : targets) {
    auto forget = gen_training_mcqs(world, vocab, target, cfg.probes.training_mcqs_per_person,
                                    cfg.probes.c, cfg.seeds.unlearn);
    MethodConfig mc = cfg.df_mcq;
    mc.seed = cfg.seeds.unlearn ^ fnv1a64("continual|" + target);
    run_df_mcq(*model, *original, forget, make_retain(fnv1a64(target)), mc, {},
               probe_items[target]);
    done.push_back(target);
    ContinualStage stage;
    stage.target = target;
    for (const auto& t : done)
      stage.prior_target_entropies.push_back(mean_choice_entropy(*model, probe_items[t]));
    stage.hard_retain_acc = eval_mcq_accuracy(*model, hard_mcq);
    res.stages.push_back(std::move(stage));
  }
  save_checkpoint(*model, ctx.paths.ckpt("continual"));

  // Single-target baseline for comparison.
  auto single = base->clone();
  auto forget0 = gen_training_mcqs(world, vocab, targets[0],
                                   cfg.probes.training_mcqs_per_person, cfg.probes.c,
                                   cfg.seeds.unlearn);
  MethodConfig mc0 = cfg.df_mcq;
  mc0.seed = cfg.seeds.unlearn;
  run_df_mcq(*single, *original, forget0, make_retain(fnv1a64(targets[0])), mc0, {},
             probe_items[targets[0]]);
  res.single_target_entropy = mean_choice_entropy(*single, probe_items[targets[0]]);
  res.single_target_hard_retain = eval_mcq_accuracy(*single, hard_mcq);

  std::ostringstream os;
  os << "base_hard_retain_acc\t" << format_double(res.base_hard_retain_acc) << "\n";
  for (size_t i = 0; i < res.stages.size(); ++i) {
    const auto& st = res.stages[i];
    os << "stage\t" << i << "\t" << st.target << "\thard_retain_acc="
       << format_double(st.hard_retain_acc) << "\tentropies=";
    for (size_t j = 0; j < st.prior_target_entropies.size(); ++j)
      os << (j ? "," : "") << format_double(st.prior_target_entropies[j]);
    os << "\n";
  }
  os << "single_target_entropy\t" << format_double(res.single_target_entropy) << "\n";
  os << "single_target_hard_retain\t" << format_double(res.single_target_hard_retain) << "\n";
  write_file(ctx.paths.continual_report(), os.str());
  record_artifact(ctx.paths, ctx.paths.continual_report());
  return res;
}

GradCheckResult cmd_grad_check(const ExperimentConfig& cfg) {
  GradCheckResult out;
  World world = generate_world(cfg.world, cfg.seeds.world);
  auto world_ptr = std::make_shared<World>(world);
  auto vocab = std::make_shared<Vocab>(build_vocab(world));

  double worst = 0.0;
  for (const std::string backend : {std::string("tabular"), std::string("transformer")}) {
    ExperimentConfig bc = cfg;
    bc.backend = backend;
    // Keep the transformer tiny here; the check is about correctness.
    bc.transformer.n_layers = 2;
    bc.transformer.d_model = 16;
    bc.transformer.n_heads = 2;
    auto model = build_model(bc, world_ptr, vocab);
    auto original = model->clone();

    // Perturb so gradients are not trivially zero.
    Rng noise(cfg.seeds.train ^ 0x7177u);
    for (const auto& name : model->params().names) {
      Tensor& t = model->params().at(name);
      for (double& x : t.v) x += 0.05 * noise.normal();
    }

    ObfuscationRecord empty;
    std::vector<McqItem> items;
    for (const auto& pid : world.forget_ids) {
      auto probes = gen_mcq(world, *vocab, pid, empty, cfg.probes.c, cfg.seeds.probe_shuffle, 1);
      auto as_items = probe_mcqs_as_items(probes);
      items.insert(items.end(), as_items.begin(), as_items.end());
      if (items.size() >= 3) break;
    }
    items.resize(std::min<size_t>(items.size(), 3));
    std::vector<Sequence> qa = render_open_qa(world, *vocab, world.forget_ids[0]);
    qa.resize(std::min<size_t>(qa.size(), 3));

    LanguageModel& m = *model;
    const LanguageModel& orig = *original;
    double beta = cfg.npo.npo_beta;

    std::vector<double> ref_lp(qa.size());
    for (size_t i = 0; i < qa.size(); ++i) {
      Tape t;
      TapeLeaves l;
      ref_lp[i] = -t.scalar(original->sequence_nll(t, l, qa[i].tokens, qa[i].answer_start));
    }

    std::map<std::string, std::function<Var(Tape&, TapeLeaves&)>> losses;
    losses["df_mcq"] = [&](Tape& t, TapeLeaves& l) { return df_mcq_loss_node(t, l, m, items); };
    losses["retain"] = [&](Tape& t, TapeLeaves& l) {
      return retain_loss_node(t, l, m, orig, items);
    };
    losses["cross_entropy"] = [&](Tape& t, TapeLeaves& l) {
      Var acc = -1;
      for (const auto& s : qa) {
        Var nll = m.sequence_nll(t, l, s.tokens, s.answer_start);
        acc = acc < 0 ? nll : t.add(acc, nll);
      }
      return acc;
    };
    losses["npo"] = [&](Tape& t, TapeLeaves& l) {
      Var acc = -1;
      for (size_t i = 0; i < qa.size(); ++i) {
        Var nll = m.sequence_nll(t, l, qa[i].tokens, qa[i].answer_start);
        Var arg = t.add_const(t.scale(nll, -beta), beta * (-ref_lp[i]));
        Var sp = t.softplus(arg);
        acc = acc < 0 ? sp : t.add(acc, sp);
      }
      return t.scale(acc, 2.0 / beta);
    };

    for (const auto& [lname, builder] : losses) {
      double err = grad_check(builder, model->params(), 1e-6, 24, cfg.seeds.train);
      out.max_rel_err[backend + "/" + lname] = err;
      worst = std::max(worst, err);
    }
  }
  out.ok = worst <= 1e-4;
  return out;
}

ExperimentReport run_full_pipeline(const ExperimentConfig& cfg) {
  cmd_gen_world(cfg);
  cmd_train_base(cfg);
  for (Method m : {Method::df_mcq, Method::whp_plus, Method::npo, Method::grad_ascent})
    cmd_unlearn(cfg, m);
  cmd_probe(cfg);
  return cmd_report(cfg);
}

}  // namespace unlab
