#include "unlab/report.hpp"

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "unlab/util.hpp"

namespace unlab {

namespace {

std::string opt(const std::optional<double>& x) { return x ? format_double(*x) : ""; }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

std::string fmt2(const std::optional<double>& x) {
  if (!x) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *x);
  return buf;
}

}  // namespace

std::string report_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "# config_hash=" << report.config_hash << " " << report.seed_stamp << "\n";
  for (const auto& s : report.skipped) os << "# skipped: " << s << "\n";
  os << "method,question_kind,split,subset,n,accuracy,mean_entropy,refusal_rate,rouge_l,"
        "yes_rate,p_obf_choice\n";
  for (const auto& r : report.rows) {
    os << r.method << ',' << r.question_kind << ',' << r.split << ',' << r.subset << ','
       << r.n << ',' << opt(r.accuracy) << ',' << opt(r.mean_entropy) << ','
       << opt(r.refusal_rate) << ',' << opt(r.rouge_l) << ',' << opt(r.yes_rate) << ','
       << opt(r.p_obf_choice) << "\n";
  }
  return os.str();
}

std::vector<MetricRow> parse_report_csv(const std::string& text) {
  std::vector<MetricRow> rows;
  std::istringstream is(text);
  std::string line;
  bool saw_header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      saw_header = true;  // column header
      continue;
    }
    auto f = split_on(line, ',');
    if (f.size() != 11) throw std::runtime_error("bad report row: " + line);
    MetricRow r;
    r.method = f[0];
    r.question_kind = f[1];
    r.split = f[2];
    r.subset = f[3];
    r.n = std::stoi(f[4]);
    r.accuracy = parse_opt(f[5]);
    r.mean_entropy = parse_opt(f[6]);
    r.refusal_rate = parse_opt(f[7]);
    r.rouge_l = parse_opt(f[8]);
    r.yes_rate = parse_opt(f[9]);
    r.p_obf_choice = parse_opt(f[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string scatter_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream os;
  os << "step_size,n_samples,yes_rate,efficacy,status,reason\n";
  for (const auto& p : points) {
    os << format_double(p.step_size) << ',' << p.n_samples << ',' << format_double(p.yes_rate)
       << ',' << format_double(p.efficacy) << ',' << p.status << ',' << p.reason << "\n";
  }
  return os.str();
}

std::vector<SweepPoint> parse_scatter_csv(const std::string& text) {
  std::vector<SweepPoint> out;
  std::istringstream is(text);
  std::string line;
  bool saw_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    auto f = split_on(line, ',');
    if (f.size() != 6) throw std::runtime_error("bad scatter row: " + line);
    SweepPoint p;
    p.step_size = std::stod(f[0]);
    p.n_samples = std::stoi(f[1]);
    p.yes_rate = std::stod(f[2]);
    p.efficacy = std::stod(f[3]);
    p.status = f[4];
    p.reason = f[5];
    out.push_back(p);
  }
  return out;
}

std::string report_markdown(const ExperimentReport& report) {
  std::ostringstream os;
  os << "# Experiment report\n\n";
  os << "config hash: `" << report.config_hash << "`; " << report.seed_stamp << "\n\n";
  for (const auto& s : report.skipped) os << "- skipped: " << s << "\n";
  if (!report.skipped.empty()) os << "\n";

  auto find = [&](const std::string& method, const std::string& kind,
                  const std::string& split) -> const MetricRow* {
    for (const auto& r : report.rows)
      if (r.method == method && r.question_kind == kind && r.split == split &&
          r.subset == "all")
        return &r;
    return nullptr;
  };
  std::vector<std::string> methods;
  for (const auto& r : report.rows) {
    bool seen = false;
    for (const auto& m : methods) seen = seen || m == r.method;
    if (!seen) methods.push_back(r.method);
  }

  os << "## Open-ended questions (ROUGE-L recall; refusal on the forget set)\n\n";
  os << "| Method | Forget (down) | Retain (up) | Hard retain (up) | Refusal (up) |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& m : methods) {
    const MetricRow* fr = find(m, "open_ended", "reference");
    const MetricRow* rt = find(m, "open_ended", "retain");
    const MetricRow* hr = find(m, "open_ended", "hard_retain");
    os << "| " << m << " | " << fmt2(fr ? fr->rouge_l : std::nullopt) << " | "
       << fmt2(rt ? rt->rouge_l : std::nullopt) << " | "
       << fmt2(hr ? hr->rouge_l : std::nullopt) << " | "
       << fmt2(fr ? fr->refusal_rate : std::nullopt) << " |\n";
  }

  os << "\n## Yes-No probes, accuracy (entropy)\n\n";
  os << "| Method | Reference | In-training | Out-of-training | Retain | Hard retain |\n";
  os << "|---|---|---|---|---|---|\n";
  auto cell = [&](const std::string& m, const std::string& kind, const std::string& split) {
    const MetricRow* r = find(m, kind, split);
    if (!r) return std::string("-");
    return fmt2(r->accuracy) + " (" + fmt2(r->mean_entropy) + ")";
  };
  for (const auto& m : methods) {
    os << "| " << m << " | " << cell(m, "yes_no", "reference") << " | "
       << cell(m, "yes_no", "in_training") << " | " << cell(m, "yes_no", "out_of_training")
       << " | " << cell(m, "yes_no", "retain") << " | " << cell(m, "yes_no", "hard_retain")
       << " |\n";
  }

  bool has_alt = false;
  for (const auto& r : report.rows) has_alt = has_alt || r.question_kind == "yes_no_alt";
  if (has_alt) {
    os << "\n## Yes-No probes under the MCQ-distractor split, accuracy (entropy)\n\n";
    os << "| Method | In-training | Out-of-training |\n|---|---|---|\n";
    for (const auto& m : methods) {
      const MetricRow* a = find(m, "yes_no_alt", "in_training");
      const MetricRow* b = find(m, "yes_no_alt", "out_of_training");
      if (!a && !b) continue;
      os << "| " << m << " | " << cell(m, "yes_no_alt", "in_training") << " | "
         << cell(m, "yes_no_alt", "out_of_training") << " |\n";
    }
  }

  os << "\n## MCQ probes\n\n";
  os << "| Method | Forget acc | Forget H | P(c_obf) | Hard retain acc | Hard retain H |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& m : methods) {
    const MetricRow* f = find(m, "mcq", "reference");
    const MetricRow* h = find(m, "mcq", "hard_retain");
    os << "| " << m << " | " << fmt2(f ? f->accuracy : std::nullopt) << " | "
       << fmt2(f ? f->mean_entropy : std::nullopt) << " | "
       << fmt2(f ? f->p_obf_choice : std::nullopt) << " | "
       << fmt2(h ? h->accuracy : std::nullopt) << " | "
       << fmt2(h ? h->mean_entropy : std::nullopt) << " |\n";
  }

  // Per-person breakdown of forget-set MCQ and open-ended results.
  std::map<std::string, std::vector<const MetricRow*>> by_subset;
  for (const auto& r : report.rows)
    if (r.subset != "all") by_subset[r.subset].push_back(&r);
  if (!by_subset.empty()) {
    os << "\n## Per-person breakdown (forget set)\n\n";
    os << "| Person | Method | Kind | Acc | H | ROUGE-L | Refusal |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const auto& [subset, rows] : by_subset) {
      for (const auto* r : rows) {
        os << "| " << subset << " | " << r->method << " | " << r->question_kind << " | "
           << fmt2(r->accuracy) << " | " << fmt2(r->mean_entropy) << " | " << fmt2(r->rouge_l)
           << " | " << fmt2(r->refusal_rate) << " |\n";
      }
    }
  }

  if (!report.sweep_points.empty()) {
    os << "\n## Obfuscation sweep (yes-rate vs unlearning efficacy)\n\n";
    if (report.sweep_pearson)
      os << "Pearson r = " << fmt2(report.sweep_pearson) << "\n\n";
    os << "| step size | samples | yes rate | efficacy | status |\n|---|---|---|---|---|\n";
    for (const auto& p : report.sweep_points) {
      os << "| " << format_double(p.step_size) << " | " << p.n_samples << " | "
         << fmt2(p.yes_rate) << " | " << fmt2(p.efficacy) << " | " << p.status
         << (p.reason.empty() ? "" : " (" + p.reason + ")") << " |\n";
    }
  }
  return os.str();
}

}  // namespace unlab
