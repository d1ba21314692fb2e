#pragma once

#include <string>
#include <vector>

#include "sepipe/attacks.hpp"
#include "sepipe/dataset.hpp"
#include "sepipe/evaluate.hpp"
#include "sepipe/models.hpp"
#include "sepipe/report.hpp"

namespace sepipe {

// `defended` carries the weights evaluated behind each pipeline; `base` is the
// undefended reference used for diff_base and as the transfer crafting model.
// A null base means the defended weights double as the reference.
struct SweepModelSet {
  std::string tag;
  const Model* defended = nullptr;
  const Model* base = nullptr;
};

// clahe; unsharp gaussian radius {5,6,7} x amount {2,3,4}; unsharp
// median/max/min x amount {2,3,4}; hfe cutoff {10,20,30,40,50} - 24 configs
std::vector<EnhanceConfig> paper_enhance_grid();

// the enhance grid crossed with segmentation off/on, technique-major
std::vector<PipelineConfig> paper_pipeline_grid();

// one fgsm budget plus the iterated attack at (1/255, 2/255, 7)
std::vector<AttackConfig> paper_attack_grid(double fgsm_eps = 0.001,
                                            ThreatMode threat = ThreatMode::BpdaIdentity);

struct SweepOptions {
  MetricMode metric = MetricMode::Interpreted;
  FilterScope scope = FilterScope::Own;
  int threads = 1;
};

struct SweepOutput {
  std::vector<ReportRow> rows;
  std::string summary;
  std::vector<std::string> files;  // artifacts written under out_dir
};

// Row order: attack, then model, then pipeline grid order. Cell failures land
// in the row's error column and the sweep continues. The produced bytes do
// not depend on the thread count.
SweepOutput run_sweep(const std::vector<SweepModelSet>& models,
                      const std::vector<PipelineConfig>& pipeline_grid,
                      const std::vector<AttackConfig>& attack_grid,
                      const std::vector<Example>& test_set, const SweepOptions& opts = {},
                      const std::string& out_dir = "");

}  // namespace sepipe
