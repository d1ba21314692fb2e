#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sepipe/attacks.hpp"
#include "sepipe/dataset.hpp"
#include "sepipe/enhance.hpp"
#include "sepipe/errors.hpp"
#include "sepipe/evaluate.hpp"
#include "sepipe/image_io.hpp"
#include "sepipe/models.hpp"
#include "sepipe/report.hpp"
#include "sepipe/segment.hpp"
#include "sepipe/sweep.hpp"
#include "sepipe/synthetic.hpp"

namespace {

using nlohmann::json;

json load_flat_json(const std::string& path, const std::set<std::string>& allowed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sepipe::IoError(path + ": cannot open config");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw sepipe::ParseError(path + ": " + e.what());
  }
  if (!j.is_object()) throw sepipe::ParseError(path + ": config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key))
      throw sepipe::ConfigError(path + ": unknown config key '" + key + "'");
    if (value.is_object() || value.is_array())
      throw sepipe::ConfigError(path + ": key '" + key + "' must be a scalar");
  }
  return j;
}

double accuracy(const sepipe::Model& m, const std::vector<sepipe::Example>& set) {
  if (set.empty()) return 0.0;
  int hits = 0;
  for (const sepipe::Example& e : set) {
    const auto [p0, p1] = sepipe::predict_proba(m, e.image);
    hits += sepipe::predicted_class(p0, p1) == e.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

struct AttackFlags {
  std::string kind = "fgsm";
  double eps = 0.003;
  double alpha = 1.0 / 255.0;
  int iters = 7;
  std::string threat = "bpda_identity";

  void wire(CLI::App* cmd, bool with_threat) {
    cmd->add_option("--kind", kind, "attack kind")
        ->check(CLI::IsMember({"fgsm", "pgd"}))
        ->capture_default_str();
    cmd->add_option("--eps", eps, "L-inf budget in [0,1] units")->capture_default_str();
    cmd->add_option("--alpha", alpha, "step size (pgd)")->capture_default_str();
    cmd->add_option("--iters", iters, "iterations (pgd)")->capture_default_str();
    if (with_threat)
      cmd->add_option("--threat", threat, "gradient point for non-differentiable pipelines")
          ->check(CLI::IsMember({"direct", "bpda_identity", "transfer"}))
          ->capture_default_str();
  }

  sepipe::AttackConfig build() const {
    sepipe::AttackConfig cfg;
    cfg.kind = sepipe::attack_kind_from_string(kind);
    cfg.epsilon = eps;
    cfg.alpha = alpha;
    cfg.iters = iters;
    cfg.threat = sepipe::threat_mode_from_string(threat);
    cfg.validate();
    return cfg;
  }
};

struct PipelineFlags {
  std::string option = "none";
  std::string blur = "gaussian";
  int radius = 2;
  double amount = 2.0;
  double cutoff = 10.0;
  int clip = 8;
  int margin = 2;
  bool segment = false;

  void wire(CLI::App* cmd) {
    cmd->add_option("--option", option, "enhancement technique")
        ->check(CLI::IsMember({"clahe", "um", "hfe", "crop", "none"}))
        ->capture_default_str();
    cmd->add_option("--blur", blur, "um blur kind")
        ->check(CLI::IsMember({"gaussian", "median", "max", "min"}))
        ->capture_default_str();
    cmd->add_option("--radius", radius, "um blur radius")->capture_default_str();
    cmd->add_option("--amount", amount, "um sharpening amount")->capture_default_str();
    cmd->add_option("--cutoff", cutoff, "hfe gaussian cutoff")->capture_default_str();
    cmd->add_option("--clip", clip, "clahe clip multiplier")->capture_default_str();
    cmd->add_option("--margin", margin, "crop margin")->capture_default_str();
    cmd->add_flag("--segment", segment, "mask the lung field first");
  }

  sepipe::PipelineConfig build() const {
    sepipe::PipelineConfig cfg;
    cfg.segmented = segment;
    cfg.enhance.option = sepipe::enhance_option_from_string(option);
    cfg.enhance.um.blur = sepipe::blur_kind_from_string(blur);
    cfg.enhance.um.radius = radius;
    cfg.enhance.um.amount = amount;
    cfg.enhance.hfe.cutoff = cutoff;
    cfg.enhance.clahe.clip = clip;
    cfg.enhance.crop.margin = margin;
    cfg.enhance.validate();
    return cfg;
  }
};

std::vector<sepipe::PipelineConfig> load_pipeline_grid(const std::string& spec) {
  if (spec == "paper") return sepipe::paper_pipeline_grid();
  std::ifstream in(spec, std::ios::binary);
  if (!in) throw sepipe::IoError(spec + ": cannot open grid file");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw sepipe::ParseError(spec + ": " + e.what());
  }
  if (!j.is_array() || j.empty())
    throw sepipe::ParseError(spec + ": grid file must be a non-empty JSON array");
  std::vector<sepipe::PipelineConfig> grid;
  for (const auto& cell : j) {
    if (!cell.is_object()) throw sepipe::ParseError(spec + ": grid cells must be JSON objects");
    PipelineFlags flags;
    for (const auto& [key, value] : cell.items()) {
      if (key == "option")
        flags.option = value.get<std::string>();
      else if (key == "blur")
        flags.blur = value.get<std::string>();
      else if (key == "radius")
        flags.radius = value.get<int>();
      else if (key == "amount")
        flags.amount = value.get<double>();
      else if (key == "cutoff")
        flags.cutoff = value.get<double>();
      else if (key == "clip")
        flags.clip = value.get<int>();
      else if (key == "margin")
        flags.margin = value.get<int>();
      else if (key == "segment")
        flags.segment = value.get<bool>();
      else
        throw sepipe::ConfigError(spec + ": unknown grid key '" + key + "'");
    }
    grid.push_back(flags.build());
  }
  return grid;
}

void write_records_csv(const std::vector<sepipe::ProbRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw sepipe::IoError(path + ": cannot open for writing");
  out << "example_id,true_label,p_a,p_b,p_a_adv,p_b_adv,attack_successful\n";
  char line[192];
  for (const sepipe::ProbRecord& r : records) {
    std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g,%.17g,%.17g,%d\n", r.example_id,
                  r.true_label, r.p_a, r.p_b, r.p_a_adv, r.p_b_adv, r.attack_successful ? 1 : 0);
    out << line;
  }
  if (!out) throw sepipe::IoError(path + ": write failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segmentation + enhancement defense pipeline for 2-class grayscale classifiers"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic two-class corpus");
  sepipe::GenConfig gen_cfg;
  std::string gen_out;
  gen->add_option("--n", gen_cfg.n, "example count")->capture_default_str();
  gen->add_option("--size", gen_cfg.size, "square image size")->capture_default_str();
  gen->add_option("--seed", gen_cfg.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->callback([&] { std::cout << sepipe::gen_synthetic_dataset(gen_cfg, gen_out) << "\n"; });

  // train
  auto* tr = app.add_subcommand("train", "train a classifier and write a checkpoint");
  std::string tr_model, tr_config, tr_data, tr_out;
  std::uint64_t tr_seed = 0;
  tr->add_option("--model", tr_model, "architecture")
      ->required()
      ->check(CLI::IsMember({"cnn", "vit"}));
  tr->add_option("--config", tr_config,
                 "flat JSON config: training, architecture and optional preprocessing keys");
  tr->add_option("--data", tr_data, "dataset manifest")->required();
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--seed", tr_seed, "split/init/train seed")->capture_default_str();
  tr->callback([&] {
    static const std::set<std::string> keys = {
        "seed",       "input_size", "max_epochs", "batch_size", "learning_rate",
        "patience",   "val_fraction", "conv_layers", "base_channels", "patch_size",
        "layers",     "hidden_size", "mlp_size",  "heads",
        // optional train-time preprocessing, same names as the enhance flags
        "option",     "blur",       "radius",     "amount",     "cutoff",
        "clip",       "margin",     "segment"};
    const json cfg = tr_config.empty() ? json::object() : load_flat_json(tr_config, keys);
    const std::uint64_t seed = cfg.value("seed", tr_seed);
    const int input_size = cfg.value("input_size", 64);

    sepipe::ModelConfig mc = tr_model == "cnn" ? sepipe::ModelConfig::simple_cnn(input_size, seed)
                                               : sepipe::ModelConfig::toy_vit(input_size, seed);
    if (tr_model == "cnn") {
      const int layers = cfg.value("conv_layers", 4);
      const int base = cfg.value("base_channels", 8);
      mc.conv_layer_count = layers;
      mc.channels.clear();
      for (int i = 0; i < layers; ++i) mc.channels.push_back(base << i);
    } else {
      mc.patch_size = cfg.value("patch_size", mc.patch_size);
      mc.layers = cfg.value("layers", mc.layers);
      mc.hidden_size = cfg.value("hidden_size", mc.hidden_size);
      mc.mlp_size = cfg.value("mlp_size", mc.mlp_size);
      mc.heads = cfg.value("heads", mc.heads);
    }
    mc.validate();

    sepipe::TrainConfig tc;
    tc.seed = seed;
    tc.max_epochs = cfg.value("max_epochs", tc.max_epochs);
    tc.batch_size = cfg.value("batch_size", tc.batch_size);
    tc.learning_rate = cfg.value("learning_rate", tc.learning_rate);
    tc.patience = cfg.value("patience", tc.patience);
    tc.val_fraction = cfg.value("val_fraction", tc.val_fraction);
    tc.validate();

    sepipe::Dataset ds = sepipe::load_dataset(tr_data, seed);
    if (cfg.value("option", std::string("none")) != "none" || cfg.value("segment", false)) {
      PipelineFlags flags;
      flags.option = cfg.value("option", flags.option);
      flags.blur = cfg.value("blur", flags.blur);
      flags.radius = cfg.value("radius", flags.radius);
      flags.amount = cfg.value("amount", flags.amount);
      flags.cutoff = cfg.value("cutoff", flags.cutoff);
      flags.clip = cfg.value("clip", flags.clip);
      flags.margin = cfg.value("margin", flags.margin);
      flags.segment = cfg.value("segment", flags.segment);
      const sepipe::PipelineConfig pc = flags.build();
      for (std::vector<sepipe::Example>* split : {&ds.train, &ds.test})
        for (sepipe::Example& e : *split)
          e.image = sepipe::apply_pipeline(e.image, pc, e.mask ? &*e.mask : nullptr);
    }
    sepipe::Model model = sepipe::build_model(mc);
    const sepipe::TrainHistory hist = sepipe::train(model, sepipe::to_samples(ds.train), tc);
    sepipe::save_checkpoint(model, tr_out);
    std::printf("epochs=%zu best_epoch=%d val_accuracy=%.4f test_accuracy=%.4f\n",
                hist.epochs.size(), hist.best_epoch, hist.best_val_accuracy,
                accuracy(model, ds.test));
  });

  // enhance
  auto* enh = app.add_subcommand("enhance", "run the preprocessing pipeline on one image");
  PipelineFlags enh_pipe;
  std::string enh_in, enh_out, enh_mask;
  enh_pipe.wire(enh);
  enh->add_option("--mask", enh_mask, "ground-truth mask PGM (heuristic segmentation otherwise)");
  enh->add_option("--in", enh_in, "input PGM")->required();
  enh->add_option("--out", enh_out, "output PGM")->required();
  enh->callback([&] {
    const sepipe::PipelineConfig pc = enh_pipe.build();
    const sepipe::Image img = sepipe::read_pgm(enh_in);
    sepipe::Mask mask;
    const sepipe::Mask* mask_ptr = nullptr;
    if (!enh_mask.empty()) {
      mask = sepipe::read_mask_pgm(enh_mask);
      mask_ptr = &mask;
    }
    sepipe::write_pgm(sepipe::apply_pipeline(img, pc, mask_ptr), enh_out);
  });

  // attack
  auto* atk = app.add_subcommand("attack", "craft an adversarial image");
  AttackFlags atk_flags;
  std::string atk_model, atk_in, atk_out;
  int atk_label = 0;
  atk_flags.wire(atk, false);
  atk->add_option("--model", atk_model, "checkpoint")->required();
  atk->add_option("--in", atk_in, "input PGM")->required();
  atk->add_option("--label", atk_label, "true class")->required()->check(CLI::Range(0, 1));
  atk->add_option("--out", atk_out, "adversarial PGM")->required();
  atk->callback([&] {
    sepipe::AttackConfig ac = atk_flags.build();
    ac.threat = sepipe::ThreatMode::Direct;  // a lone image has no pipeline to approximate
    const sepipe::Model model = sepipe::load_checkpoint(atk_model);
    const sepipe::Image img = sepipe::read_pgm(atk_in);
    sepipe::write_pgm(sepipe::craft_attack(model, ac, img, atk_label).adversarial, atk_out);
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "rate-of-reduction inputs for one configuration");
  AttackFlags ev_attack;
  PipelineFlags ev_pipe;
  std::string ev_model, ev_data, ev_metric = "interpreted", ev_transfer, ev_records;
  std::uint64_t ev_seed = 0;
  ev->add_option("--model", ev_model, "checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset manifest")->required();
  ev->add_option("--seed", ev_seed, "train/test split seed")->capture_default_str();
  ev_attack.wire(ev, true);
  ev_pipe.wire(ev);
  ev->add_option("--metric", ev_metric, "aggregation mode")
      ->check(CLI::IsMember({"interpreted", "literal"}))
      ->capture_default_str();
  ev->add_option("--transfer-from", ev_transfer, "crafting checkpoint for transfer threat mode");
  ev->add_option("--records", ev_records, "write per-example probabilities to this CSV");
  ev->callback([&] {
    const sepipe::AttackConfig ac = ev_attack.build();
    const sepipe::PipelineConfig pc = ev_pipe.build();
    const sepipe::Model model = sepipe::load_checkpoint(ev_model);
    sepipe::Model transfer_source;
    sepipe::EvalOptions opts;
    opts.metric = sepipe::metric_mode_from_string(ev_metric);
    if (ac.threat == sepipe::ThreatMode::Transfer) {
      if (ev_transfer.empty())
        throw sepipe::ConfigError("--transfer-from: required for the transfer threat mode");
      transfer_source = sepipe::load_checkpoint(ev_transfer);
      opts.transfer_source = &transfer_source;
    }
    const sepipe::Dataset ds = sepipe::load_dataset(ev_data, ev_seed);
    const sepipe::EvalResult res = sepipe::evaluate(model, ds.test, ac, pc, opts);
    if (!ev_records.empty()) write_records_csv(res.records, ev_records);
    const sepipe::Aggregate& a = res.aggregate;
    std::printf("attack=%s pipeline=%s\n", ac.label().c_str(), pc.label().c_str());
    std::printf("n_total=%d n_filtered=%d\n", a.n_total, a.n_filtered);
    if (a.defined)
      std::printf("mean_clean_conf=%.6f mean_adv_conf=%.6f diff=%.6f\n", a.mean_clean_conf,
                  a.mean_adv_conf, a.diff);
    else
      std::printf("diff=undefined (no successful attacks)\n");
  });

  // sweep
  auto* sw = app.add_subcommand("sweep", "grid evaluation with CSV reports");
  std::vector<std::string> sw_bases;
  std::string sw_defended_dir, sw_data, sw_grid = "paper", sw_out;
  std::string sw_threat = "bpda_identity", sw_metric = "interpreted", sw_scope = "own";
  double sw_fgsm_eps = 0.001;
  int sw_threads = 1;
  std::uint64_t sw_seed = 0;
  sw->add_option("--base", sw_bases, "base checkpoint (repeatable)")->required();
  sw->add_option("--defended-dir", sw_defended_dir,
                 "directory of <tag>.ckpt files evaluated behind the pipelines");
  sw->add_option("--data", sw_data, "dataset manifest")->required();
  sw->add_option("--seed", sw_seed, "train/test split seed")->capture_default_str();
  sw->add_option("--grid", sw_grid, "'paper' or a JSON grid file")->capture_default_str();
  sw->add_option("--fgsm-eps", sw_fgsm_eps, "fgsm budget for the paper attack grid")
      ->capture_default_str();
  sw->add_option("--threat", sw_threat, "gradient point for the paper attack grid")
      ->check(CLI::IsMember({"direct", "bpda_identity", "transfer"}))
      ->capture_default_str();
  sw->add_option("--metric", sw_metric, "aggregation mode")
      ->check(CLI::IsMember({"interpreted", "literal"}))
      ->capture_default_str();
  sw->add_option("--scope", sw_scope, "success filter scope")
      ->check(CLI::IsMember({"own", "shared"}))
      ->capture_default_str();
  sw->add_option("--threads", sw_threads, "worker threads")->capture_default_str();
  sw->add_option("--out", sw_out, "report directory")->required();
  sw->callback([&] {
    std::deque<sepipe::Model> store;
    std::vector<sepipe::SweepModelSet> models;
    for (const std::string& path : sw_bases) {
      store.push_back(sepipe::load_checkpoint(path));
      const sepipe::Model& base = store.back();
      std::string tag = to_string(base.config.kind);
      for (const auto& m : models)
        if (m.tag == tag) tag += "_" + std::to_string(models.size());
      const sepipe::Model* defended = &base;
      if (!sw_defended_dir.empty()) {
        const auto ckpt = std::filesystem::path(sw_defended_dir) / (tag + ".ckpt");
        if (std::filesystem::exists(ckpt)) {
          store.push_back(sepipe::load_checkpoint(ckpt.string()));
          defended = &store.back();
        }
      }
      models.push_back({tag, defended, &base});
    }
    const sepipe::Dataset ds = sepipe::load_dataset(sw_data, sw_seed);
    sepipe::SweepOptions opts;
    opts.metric = sepipe::metric_mode_from_string(sw_metric);
    opts.scope = sepipe::filter_scope_from_string(sw_scope);
    opts.threads = sw_threads;
    const auto attacks =
        sepipe::paper_attack_grid(sw_fgsm_eps, sepipe::threat_mode_from_string(sw_threat));
    const sepipe::SweepOutput out =
        sepipe::run_sweep(models, load_pipeline_grid(sw_grid), attacks, ds.test, opts, sw_out);
    std::cout << out.summary;
    for (const std::string& f : out.files) std::cout << f << "\n";
  });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // help and version exit cleanly
  } catch (const sepipe::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const sepipe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
