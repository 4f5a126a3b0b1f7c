#include "unlab/config.hpp"

#include <sstream>
#include <stdexcept>

#include "unlab/util.hpp"

namespace unlab {

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.world.n_persons = 10;
  cfg.world.n_relations = 6;
  cfg.world.n_forget = 2;

  cfg.base_train.epochs = 60;
  cfg.base_train.min_epochs = 10;
  cfg.base_train.lr = 1e-3;
  cfg.base_train.batch_size = 16;
  cfg.base_train.target_qa_acc = 1.0;

  cfg.df_mcq.method = Method::df_mcq;
  cfg.df_mcq.epochs = 3;
  cfg.df_mcq.step_size = 1e-4;
  cfg.df_mcq.batch_size = 8;

  cfg.whp_plus.method = Method::whp_plus;
  cfg.whp_plus.epochs = 4;
  cfg.whp_plus.step_size = 3e-4;
  cfg.whp_plus.batch_size = 8;
  cfg.whp_plus.n_obfuscation_samples = 24;

  cfg.npo.method = Method::npo;
  cfg.npo.epochs = 6;
  cfg.npo.step_size = 1e-4;
  cfg.npo.batch_size = 8;
  cfg.npo.npo_beta = 0.1;

  cfg.ga.method = Method::grad_ascent;
  cfg.ga.epochs = 6;
  cfg.ga.step_size = 1e-4;
  cfg.ga.batch_size = 8;
  cfg.ga.retain_floor = 0.5;
  return cfg;
}

namespace {

uint64_t to_u64(const std::string& s) { return std::stoull(s); }
int to_int(const std::string& s) { return std::stoi(s); }
double to_dbl(const std::string& s) { return std::stod(s); }

std::vector<double> to_dbl_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_on(s, ','))
    if (!trim(part).empty()) out.push_back(to_dbl(trim(part)));
  return out;
}

std::vector<int> to_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& part : split_on(s, ','))
    if (!trim(part).empty()) out.push_back(to_int(trim(part)));
  return out;
}

void apply_method(MethodConfig& m, const std::string& key, const std::string& val) {
  if (key == "epochs") m.epochs = to_int(val);
  else if (key == "step_size") m.step_size = to_dbl(val);
  else if (key == "batch_size") m.batch_size = to_int(val);
  else if (key == "beta") m.npo_beta = to_dbl(val);
  else if (key == "n_obfuscation_samples") m.n_obfuscation_samples = to_int(val);
  else if (key == "early_stop_entropy_frac") m.early_stop_entropy_frac = to_dbl(val);
  else if (key == "retain_floor") m.retain_floor = to_dbl(val);
  else throw std::invalid_argument("unknown method config key: " + key);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg = default_config();
  cfg.raw_text = text;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    lineno += 1;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    try {
      if (section == "run") {
        if (key == "out_dir") cfg.out_dir = val;
        else if (key == "backend") cfg.backend = val;
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "world") {
        if (key == "n_persons") cfg.world.n_persons = to_int(val);
        else if (key == "n_relations") cfg.world.n_relations = to_int(val);
        else if (key == "n_forget") cfg.world.n_forget = to_int(val);
        else if (key == "min_object_vocab") cfg.world.min_object_vocab = to_int(val);
        else if (key == "n_out_of_world") cfg.world.n_out_of_world = to_int(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "corpus") {
        if (key == "reps") cfg.corpus_reps = to_int(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "transformer") {
        if (key == "n_layers") cfg.transformer.n_layers = to_int(val);
        else if (key == "d_model") cfg.transformer.d_model = to_int(val);
        else if (key == "n_heads") cfg.transformer.n_heads = to_int(val);
        else if (key == "max_ctx") cfg.transformer.max_ctx = to_int(val);
        else if (key == "init_std") cfg.transformer.init_std = to_dbl(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "base_train") {
        if (key == "epochs") cfg.base_train.epochs = to_int(val);
        else if (key == "min_epochs") cfg.base_train.min_epochs = to_int(val);
        else if (key == "lr") cfg.base_train.lr = to_dbl(val);
        else if (key == "batch_size") cfg.base_train.batch_size = to_int(val);
        else if (key == "target_qa_acc") cfg.base_train.target_qa_acc = to_dbl(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "df_mcq") {
        apply_method(cfg.df_mcq, key, val);
      } else if (section == "whp_plus") {
        apply_method(cfg.whp_plus, key, val);
      } else if (section == "npo") {
        apply_method(cfg.npo, key, val);
      } else if (section == "ga") {
        apply_method(cfg.ga, key, val);
      } else if (section == "probes") {
        if (key == "c") cfg.probes.c = to_int(val);
        else if (key == "training_mcqs_per_person")
          cfg.probes.training_mcqs_per_person = to_int(val);
        else if (key == "per_fact") cfg.probes.per_fact = to_int(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "sweep") {
        if (key == "step_sizes") cfg.sweep.step_sizes = to_dbl_list(val);
        else if (key == "sample_counts") cfg.sweep.sample_counts = to_int_list(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "sft_attack") {
        if (key == "epochs") cfg.sft.epochs = to_int(val);
        else if (key == "lr") cfg.sft.lr = to_dbl(val);
        else if (key == "batch_size") cfg.sft.batch_size = to_int(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "seeds") {
        if (key == "world") cfg.seeds.world = to_u64(val);
        else if (key == "train") cfg.seeds.train = to_u64(val);
        else if (key == "unlearn") cfg.seeds.unlearn = to_u64(val);
        else if (key == "probe_shuffle") cfg.seeds.probe_shuffle = to_u64(val);
        else if (key == "sweep") cfg.seeds.sweep = to_u64(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else if (section == "paraphrase") {
        if (key == "endpoint") cfg.paraphrase_endpoint = val;
        else if (key == "timeout_ms") cfg.paraphrase_timeout_ms = to_int(val);
        else throw std::invalid_argument("unknown key: " + key);
      } else {
        throw std::invalid_argument("unknown config section: [" + section + "]");
      }
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

uint64_t config_identity_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.out_dir = "-";
  c.raw_text.clear();
  return fnv1a64(render_config(c));
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.backend != "transformer" && cfg.backend != "tabular")
    throw std::invalid_argument("backend must be transformer or tabular");
  if (cfg.out_dir.empty()) throw std::invalid_argument("out_dir must be set");
  if (cfg.corpus_reps < 1) throw std::invalid_argument("corpus reps must be >= 1");
  if (cfg.probes.c < 3 || cfg.probes.c > Vocab::kMaxChoiceLetters)
    throw std::invalid_argument("probes.c out of range");
  if (cfg.probes.c > cfg.world.min_object_vocab)
    throw std::invalid_argument("probes.c exceeds the object vocab guarantee");
  auto check_method = [](const MethodConfig& m, const std::string& name) {
    if (m.epochs < 0 || m.step_size <= 0.0 || m.batch_size < 1)
      throw std::invalid_argument("non-positive hyperparameter in [" + name + "]");
  };
  check_method(cfg.df_mcq, "df_mcq");
  check_method(cfg.whp_plus, "whp_plus");
  check_method(cfg.npo, "npo");
  check_method(cfg.ga, "ga");
  if (cfg.npo.npo_beta <= 0.0) throw std::invalid_argument("npo beta must be > 0");
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[run]\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  os << "backend = " << cfg.backend << "\n\n";
  os << "[world]\n";
  os << "n_persons = " << cfg.world.n_persons << "\n";
  os << "n_relations = " << cfg.world.n_relations << "\n";
  os << "n_forget = " << cfg.world.n_forget << "\n";
  os << "min_object_vocab = " << cfg.world.min_object_vocab << "\n";
  os << "n_out_of_world = " << cfg.world.n_out_of_world << "\n\n";
  os << "[corpus]\n";
  os << "reps = " << cfg.corpus_reps << "\n\n";
  os << "[transformer]\n";
  os << "n_layers = " << cfg.transformer.n_layers << "\n";
  os << "d_model = " << cfg.transformer.d_model << "\n";
  os << "n_heads = " << cfg.transformer.n_heads << "\n";
  os << "max_ctx = " << cfg.transformer.max_ctx << "\n";
  os << "init_std = " << format_double(cfg.transformer.init_std) << "\n\n";
  os << "[base_train]\n";
  os << "epochs = " << cfg.base_train.epochs << "\n";
  os << "min_epochs = " << cfg.base_train.min_epochs << "\n";
  os << "lr = " << format_double(cfg.base_train.lr) << "\n";
  os << "batch_size = " << cfg.base_train.batch_size << "\n";
  os << "target_qa_acc = " << format_double(cfg.base_train.target_qa_acc) << "\n\n";
  auto method_section = [&os](const char* name, const MethodConfig& m) {
    os << "[" << name << "]\n";
    os << "epochs = " << m.epochs << "\n";
    os << "step_size = " << format_double(m.step_size) << "\n";
    os << "batch_size = " << m.batch_size << "\n";
    if (m.method == Method::npo) os << "beta = " << format_double(m.npo_beta) << "\n";
    if (m.method == Method::whp_plus)
      os << "n_obfuscation_samples = " << m.n_obfuscation_samples << "\n";
    if (m.method == Method::df_mcq)
      os << "early_stop_entropy_frac = " << format_double(m.early_stop_entropy_frac) << "\n";
    if (m.method == Method::grad_ascent)
      os << "retain_floor = " << format_double(m.retain_floor) << "\n";
    os << "\n";
  };
  method_section("df_mcq", cfg.df_mcq);
  method_section("whp_plus", cfg.whp_plus);
  method_section("npo", cfg.npo);
  method_section("ga", cfg.ga);
  os << "[probes]\n";
  os << "c = " << cfg.probes.c << "\n";
  os << "training_mcqs_per_person = " << cfg.probes.training_mcqs_per_person << "\n";
  os << "per_fact = " << cfg.probes.per_fact << "\n\n";
  os << "[sweep]\n";
  os << "step_sizes = ";
  for (size_t i = 0; i < cfg.sweep.step_sizes.size(); ++i)
    os << (i ? "," : "") << format_double(cfg.sweep.step_sizes[i]);
  os << "\nsample_counts = ";
  for (size_t i = 0; i < cfg.sweep.sample_counts.size(); ++i)
    os << (i ? "," : "") << cfg.sweep.sample_counts[i];
  os << "\n\n[sft_attack]\n";
  os << "epochs = " << cfg.sft.epochs << "\n";
  os << "lr = " << format_double(cfg.sft.lr) << "\n";
  os << "batch_size = " << cfg.sft.batch_size << "\n\n";
  os << "[seeds]\n";
  os << "world = " << cfg.seeds.world << "\n";
  os << "train = " << cfg.seeds.train << "\n";
  os << "unlearn = " << cfg.seeds.unlearn << "\n";
  os << "probe_shuffle = " << cfg.seeds.probe_shuffle << "\n";
  os << "sweep = " << cfg.seeds.sweep << "\n\n";
  os << "[paraphrase]\n";
  os << "endpoint = " << cfg.paraphrase_endpoint << "\n";
  os << "timeout_ms = " << cfg.paraphrase_timeout_ms << "\n";
  return os.str();
}

}  // namespace unlab
