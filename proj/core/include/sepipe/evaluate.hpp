#pragma once

#include <string>
#include <vector>

#include "sepipe/attacks.hpp"
#include "sepipe/dataset.hpp"
#include "sepipe/enhance.hpp"
#include "sepipe/models.hpp"
#include "sepipe/segment.hpp"

namespace sepipe {

struct ProbRecord {
  int example_id = 0;
  int true_label = 0;  // 0 = class A, 1 = class B
  double p_a = 0.0, p_b = 0.0;          // clean probabilities behind the pipeline
  double p_a_adv = 0.0, p_b_adv = 0.0;  // adversarial probabilities behind the pipeline
  bool attack_successful = false;
};

// interpreted: per-true-class mean of the correct-class probability, averaged
// across the classes present in the filtered set. literal: mean of
// (p_a + p_b)/2 per record, kept because the formula written that way is
// constant for complementary pairs and its diff degenerates to zero.
enum class MetricMode { Interpreted, Literal };

// own: each model filters on its own successful attacks. shared: the base
// model's successful set is reused for the defended model.
enum class FilterScope { Own, Shared };

std::string to_string(MetricMode m);
std::string to_string(FilterScope s);
MetricMode metric_mode_from_string(const std::string& s);
FilterScope filter_scope_from_string(const std::string& s);

struct Aggregate {
  int n_total = 0;
  int n_filtered = 0;
  double mean_clean_conf = 0.0;
  double mean_adv_conf = 0.0;
  double diff = 0.0;  // |mean_clean_conf - mean_adv_conf|, 0 when undefined
  bool defined = false;  // false when no record passes the success filter
};

Aggregate aggregate_records(const std::vector<ProbRecord>& records,
                            MetricMode mode = MetricMode::Interpreted);

// copies attack_successful flags over from a parallel record list
std::vector<ProbRecord> with_success_from(std::vector<ProbRecord> records,
                                          const std::vector<ProbRecord>& source);

struct PipelineConfig {
  bool segmented = false;
  EnhanceConfig enhance;

  std::string label() const;  // e.g. "seg+um(gaussian,r=5,a=2)"
};

// mask first, then enhance. A provided mask is used as-is; otherwise the
// heuristic segmenter runs on the incoming image itself.
Image apply_pipeline(const Image& img, const PipelineConfig& cfg, const Mask* mask = nullptr);

struct EvalOptions {
  MetricMode metric = MetricMode::Interpreted;
  const Model* transfer_source = nullptr;  // crafting model for transfer threat mode
};

struct EvalResult {
  std::vector<ProbRecord> records;
  Aggregate aggregate;
};

// For each example: pipeline the clean image, craft the attack per the threat
// mode (bpda differentiates at pipeline(quantize(x_t))), pipeline the
// adversarial image, record both probability pairs and the success flag,
// then aggregate over the successful subset.
EvalResult evaluate(const Model& model, const std::vector<Example>& test_set,
                    const AttackConfig& attack, const PipelineConfig& pipeline,
                    const EvalOptions& opts = {});

struct RateResult {
  double value = 0.0;  // fraction; multiply by 100 for percent
  bool defined = false;
  std::string message;  // set when undefined
};

// (base.diff - defended.diff) / base.diff
RateResult rate_of_reduction(const Aggregate& base, const Aggregate& defended);

}  // namespace sepipe
