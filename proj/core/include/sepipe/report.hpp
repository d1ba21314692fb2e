#pragma once

#include <string>
#include <vector>

#include "sepipe/attacks.hpp"
#include "sepipe/evaluate.hpp"

namespace sepipe {

// One sweep cell. Numeric fields not applicable to the cell hold zero; the
// rate cell is empty in CSV form when rate_defined is false.
struct ReportRow {
  std::string model;
  std::string attack;
  double eps = 0.0;
  double alpha = 0.0;
  int iters = 0;
  std::string threat_mode;
  std::string option;
  std::string blur;
  double radius = 0.0;
  double amount = 0.0;
  double cutoff = 0.0;
  bool segmented = false;
  int n_total = 0;
  int n_filtered = 0;
  double diff_base = 0.0;
  double diff_defended = 0.0;
  bool rate_defined = false;
  double rate_of_reduction_pct = 0.0;
  std::string error;

  bool operator==(const ReportRow&) const = default;
};

ReportRow make_report_row(const std::string& model_tag, const AttackConfig& attack,
                          const PipelineConfig& pipeline, const Aggregate& base,
                          const Aggregate& defended, const RateResult& rate);

std::string report_csv_header();
std::string to_csv(const std::vector<ReportRow>& rows);
void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path);
std::vector<ReportRow> read_report_csv(const std::string& path);

// paper-style layout: one block per (model, attack), one line per technique,
// rate columns without and with segmentation
std::string to_text_table(const std::vector<ReportRow>& rows);
void write_text_table(const std::vector<ReportRow>& rows, const std::string& path);

// radius x amount grid over the gaussian unsharp rows; the caller picks the
// (model, attack, segmented) slice
std::string to_heatmap_csv(const std::vector<ReportRow>& rows);
void write_heatmap_csv(const std::vector<ReportRow>& rows, const std::string& path);

}  // namespace sepipe
