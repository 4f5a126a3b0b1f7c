#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unlab/metrics.hpp"

namespace unlab {

struct SweepPoint {
  double step_size = 0.0;
  int n_samples = 0;
  double yes_rate = 0.0;
  double efficacy = 0.0;  // 1 - mean ROUGE-L on forget open-ended
  std::string status = "ok";
  std::string reason;
};

struct ExperimentReport {
  std::vector<MetricRow> rows;
  std::vector<std::string> skipped;  // "method: reason"
  std::vector<SweepPoint> sweep_points;
  std::optional<double> sweep_pearson;
  uint64_t config_hash = 0;
  std::string seed_stamp;
};

std::string report_csv(const ExperimentReport& report);
std::vector<MetricRow> parse_report_csv(const std::string& text);
std::string report_markdown(const ExperimentReport& report);

std::string scatter_csv(const std::vector<SweepPoint>& points);
std::vector<SweepPoint> parse_scatter_csv(const std::string& text);

}  // namespace unlab
