#include "sepipe/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sepipe/errors.hpp"

namespace sepipe {

std::string to_string(MetricMode m) {
  return m == MetricMode::Interpreted ? "interpreted" : "literal";
}

std::string to_string(FilterScope s) { return s == FilterScope::Own ? "own" : "shared"; }

MetricMode metric_mode_from_string(const std::string& s) {
  if (s == "interpreted") return MetricMode::Interpreted;
  if (s == "literal") return MetricMode::Literal;
  throw ConfigError("metric: unknown mode '" + s + "'");
}

FilterScope filter_scope_from_string(const std::string& s) {
  if (s == "own") return FilterScope::Own;
  if (s == "shared") return FilterScope::Shared;
  throw ConfigError("filter_scope: unknown scope '" + s + "'");
}

Aggregate aggregate_records(const std::vector<ProbRecord>& records, MetricMode mode) {
  Aggregate agg;
  agg.n_total = static_cast<int>(records.size());

  if (mode == MetricMode::Literal) {
    double clean = 0.0, adv = 0.0;
    for (const ProbRecord& r : records) {
      if (!r.attack_successful) continue;
      ++agg.n_filtered;
      clean += (r.p_a + r.p_b) / 2.0;
      adv += (r.p_a_adv + r.p_b_adv) / 2.0;
    }
    if (agg.n_filtered == 0) return agg;
    agg.mean_clean_conf = clean / agg.n_filtered;
    agg.mean_adv_conf = adv / agg.n_filtered;
    agg.diff = std::abs(agg.mean_clean_conf - agg.mean_adv_conf);
    agg.defined = true;
    return agg;
  }

  // per true class, then across the classes present, so imbalance cannot bias
  double clean[2] = {0.0, 0.0}, adv[2] = {0.0, 0.0};
  int count[2] = {0, 0};
  for (const ProbRecord& r : records) {
    if (!r.attack_successful) continue;
    ++agg.n_filtered;
    const int c = r.true_label;
    clean[c] += c == 0 ? r.p_a : r.p_b;
    adv[c] += c == 0 ? r.p_a_adv : r.p_b_adv;
    ++count[c];
  }
  if (agg.n_filtered == 0) return agg;
  double clean_sum = 0.0, adv_sum = 0.0;
  int classes = 0;
  for (int c = 0; c < 2; ++c) {
    if (count[c] == 0) continue;
    clean_sum += clean[c] / count[c];
    adv_sum += adv[c] / count[c];
    ++classes;
  }
  agg.mean_clean_conf = clean_sum / classes;
  agg.mean_adv_conf = adv_sum / classes;
  agg.diff = std::abs(agg.mean_clean_conf - agg.mean_adv_conf);
  agg.defined = true;
  return agg;
}

std::vector<ProbRecord> with_success_from(std::vector<ProbRecord> records,
                                          const std::vector<ProbRecord>& source) {
  if (records.size() != source.size())
    throw DimensionError("with_success_from: " + std::to_string(records.size()) +
                         " records vs " + std::to_string(source.size()) + " source records");
  for (std::size_t i = 0; i < records.size(); ++i)
    records[i].attack_successful = source[i].attack_successful;
  return records;
}

std::string PipelineConfig::label() const {
  std::ostringstream ss;
  if (segmented) ss << "seg+";
  ss << to_string(enhance.option);
  if (enhance.option == EnhanceOption::Um)
    ss << "(" << to_string(enhance.um.blur) << ",r=" << enhance.um.radius
       << ",a=" << enhance.um.amount << ")";
  else if (enhance.option == EnhanceOption::Hfe)
    ss << "(d0=" << enhance.hfe.cutoff << ")";
  return ss.str();
}

Image apply_pipeline(const Image& img, const PipelineConfig& cfg, const Mask* mask) {
  Image out = img;
  if (cfg.segmented) out = apply_mask(out, mask ? *mask : heuristic_segment(out).mask);
  return enhance(out, cfg.enhance);
}

EvalResult evaluate(const Model& model, const std::vector<Example>& test_set,
                    const AttackConfig& attack, const PipelineConfig& pipeline,
                    const EvalOptions& opts) {
  if (!model.trained) throw StateError("evaluate: model has not been trained");
  if (attack.epsilon != 0.0) attack.validate();  // zero budget = identity attack, a test hook
  pipeline.enhance.validate();
  const Model* crafter = &model;
  if (attack.threat == ThreatMode::Transfer) {
    if (!opts.transfer_source)
      throw ConfigError("transfer_source: transfer threat mode needs a crafting model");
    crafter = opts.transfer_source;
  }

  EvalResult result;
  result.records.reserve(test_set.size());
  const int S = model.config.input_size;

  // fixed chunking bounds graph memory and keeps reruns byte-identical
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < test_set.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, test_set.size());
    const std::size_t n = end - begin;

    auto mask_of = [&](std::size_t i) -> const Mask* {
      const auto& m = test_set[begin + i].mask;
      return m ? &*m : nullptr;
    };

    std::vector<Image> raw;
    std::vector<int> labels;
    std::vector<Image> clean_proc;
    raw.reserve(n);
    labels.reserve(n);
    clean_proc.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      raw.push_back(test_set[begin + i].image);
      labels.push_back(test_set[begin + i].label);
      clean_proc.push_back(apply_pipeline(raw[i], pipeline, mask_of(i)));
    }

    const IndexedPreprocess pre = [&](std::size_t i, const Image& im) {
      return apply_pipeline(im, pipeline, mask_of(i));
    };
    const auto outcomes = craft_attacks_indexed(*crafter, attack, raw, labels, pre);

    std::vector<Image> adv_proc;
    adv_proc.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      adv_proc.push_back(apply_pipeline(outcomes[i].adversarial, pipeline, mask_of(i)));

    std::vector<const Image*> ptrs(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      ptrs[i] = &clean_proc[i];
      ptrs[n + i] = &adv_proc[i];
    }
    const Tensor probs = forward(model, image_batch(ptrs, S));
    for (std::size_t i = 0; i < n; ++i) {
      ProbRecord rec;
      rec.example_id = static_cast<int>(begin + i);
      rec.true_label = labels[i];
      std::tie(rec.p_a, rec.p_b) = prob_pair(model.config, probs, static_cast<int>(i));
      std::tie(rec.p_a_adv, rec.p_b_adv) = prob_pair(model.config, probs, static_cast<int>(n + i));
      rec.attack_successful =
          attack_success(rec.true_label, rec.p_a, rec.p_b, rec.p_a_adv, rec.p_b_adv);
      result.records.push_back(rec);
    }
  }

  result.aggregate = aggregate_records(result.records, opts.metric);
  return result;
}

RateResult rate_of_reduction(const Aggregate& base, const Aggregate& defended) {
  RateResult r;
  if (!base.defined || base.diff == 0.0) {
    r.message = "attack ineffective on base model";
    return r;
  }
  if (!defended.defined) {
    r.message = "no successful attacks on defended model";
    return r;
  }
  r.value = (base.diff - defended.diff) / base.diff;
  r.defined = true;
  return r;
}

}  // namespace sepipe
