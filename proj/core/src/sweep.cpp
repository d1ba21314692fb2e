#include "sepipe/sweep.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "sepipe/errors.hpp"

namespace sepipe {

std::vector<EnhanceConfig> paper_enhance_grid() {
  std::vector<EnhanceConfig> grid;
  EnhanceConfig c;
  c.option = EnhanceOption::Clahe;
  grid.push_back(c);
  c = EnhanceConfig{};
  c.option = EnhanceOption::Um;
  c.um.blur = BlurKind::Gaussian;
  for (int radius : {5, 6, 7})
    for (int amount : {2, 3, 4}) {
      c.um.radius = radius;
      c.um.amount = amount;
      grid.push_back(c);
    }
  for (BlurKind kind : {BlurKind::Median, BlurKind::Maximum, BlurKind::Minimum}) {
    c.um = UmConfig{};
    c.um.blur = kind;
    for (int amount : {2, 3, 4}) {
      c.um.amount = amount;
      grid.push_back(c);
    }
  }
  c = EnhanceConfig{};
  c.option = EnhanceOption::Hfe;
  for (double cutoff : {10.0, 20.0, 30.0, 40.0, 50.0}) {
    c.hfe.cutoff = cutoff;
    grid.push_back(c);
  }
  return grid;
}

std::vector<PipelineConfig> paper_pipeline_grid() {
  std::vector<PipelineConfig> grid;
  for (const EnhanceConfig& e : paper_enhance_grid())
    for (int seg = 0; seg < 2; ++seg) {
      PipelineConfig p;
      p.segmented = seg == 1;
      p.enhance = e;
      grid.push_back(p);
    }
  return grid;
}

std::vector<AttackConfig> paper_attack_grid(double fgsm_eps, ThreatMode threat) {
  AttackConfig fgsm_cfg;
  fgsm_cfg.kind = AttackKind::Fgsm;
  fgsm_cfg.epsilon = fgsm_eps;
  fgsm_cfg.threat = threat;
  AttackConfig pgd_cfg;
  pgd_cfg.kind = AttackKind::Pgd;
  pgd_cfg.epsilon = 1.0 / 255.0;
  pgd_cfg.alpha = 2.0 / 255.0;
  pgd_cfg.iters = 7;
  pgd_cfg.threat = threat;
  return {fgsm_cfg, pgd_cfg};
}

namespace {

struct BaseRun {
  Aggregate aggregate;
  std::vector<ProbRecord> records;
  std::string error;
};

}  // namespace

SweepOutput run_sweep(const std::vector<SweepModelSet>& models,
                      const std::vector<PipelineConfig>& pipeline_grid,
                      const std::vector<AttackConfig>& attack_grid,
                      const std::vector<Example>& test_set, const SweepOptions& opts,
                      const std::string& out_dir) {
  if (models.empty()) throw ConfigError("models: sweep needs at least one model");
  if (pipeline_grid.empty()) throw ConfigError("grid: sweep needs at least one pipeline config");
  if (attack_grid.empty()) throw ConfigError("attack_grid: sweep needs at least one attack");
  for (const SweepModelSet& ms : models) {
    if (!ms.defended) throw ConfigError("models: entry '" + ms.tag + "' has no weights");
    if (!ms.defended->trained || (ms.base && !ms.base->trained))
      throw StateError("sweep: model '" + ms.tag + "' has not been trained");
  }
  auto base_of = [&](std::size_t mi) { return models[mi].base ? models[mi].base : models[mi].defended; };

  // the undefended reference once per attack x model, reused by every cell
  std::vector<std::vector<BaseRun>> base(attack_grid.size(),
                                         std::vector<BaseRun>(models.size()));
  for (std::size_t ai = 0; ai < attack_grid.size(); ++ai)
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      AttackConfig cfg = attack_grid[ai];
      cfg.threat = ThreatMode::Direct;  // nothing to approximate without a pipeline
      EvalOptions eo;
      eo.metric = opts.metric;
      try {
        EvalResult res = evaluate(*base_of(mi), test_set, cfg, PipelineConfig{}, eo);
        base[ai][mi].aggregate = res.aggregate;
        base[ai][mi].records = std::move(res.records);
      } catch (const std::exception& e) {
        base[ai][mi].error = e.what();
      }
    }

  struct Cell {
    std::size_t ai, mi, pi;
  };
  std::vector<Cell> cells;
  cells.reserve(attack_grid.size() * models.size() * pipeline_grid.size());
  for (std::size_t ai = 0; ai < attack_grid.size(); ++ai)
    for (std::size_t mi = 0; mi < models.size(); ++mi)
      for (std::size_t pi = 0; pi < pipeline_grid.size(); ++pi) cells.push_back({ai, mi, pi});

  SweepOutput out;
  out.rows.resize(cells.size());

  auto run_cell = [&](const Cell& cell) {
    const AttackConfig& atk = attack_grid[cell.ai];
    const PipelineConfig& pipe = pipeline_grid[cell.pi];
    const BaseRun& br = base[cell.ai][cell.mi];
    if (!br.error.empty()) {
      ReportRow row = make_report_row(models[cell.mi].tag, atk, pipe, Aggregate{}, Aggregate{},
                                      RateResult{});
      row.error = "base evaluation failed: " + br.error;
      return row;
    }
    try {
      EvalOptions eo;
      eo.metric = opts.metric;
      eo.transfer_source = base_of(cell.mi);
      EvalResult res = evaluate(*models[cell.mi].defended, test_set, atk, pipe, eo);
      Aggregate agg = res.aggregate;
      if (opts.scope == FilterScope::Shared)
        agg = aggregate_records(with_success_from(std::move(res.records), br.records),
                                opts.metric);
      return make_report_row(models[cell.mi].tag, atk, pipe, br.aggregate, agg,
                             rate_of_reduction(br.aggregate, agg));
    } catch (const std::exception& e) {
      ReportRow row = make_report_row(models[cell.mi].tag, atk, pipe, br.aggregate, Aggregate{},
                                      RateResult{});
      row.error = e.what();
      return row;
    }
  };

  const int n_threads = std::max(1, opts.threads);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      out.rows[i] = run_cell(cells[i]);
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  int errors = 0, seg_cells = 0, seg_positive = 0;
  for (const ReportRow& r : out.rows) {
    if (!r.error.empty()) ++errors;
    if (r.segmented && (r.option == "um" || r.option == "hfe")) {
      ++seg_cells;
      if (r.error.empty() && r.rate_defined && r.rate_of_reduction_pct > 0.0) ++seg_positive;
    }
  }
  std::ostringstream sum;
  sum << "rows: " << out.rows.size() << "\n";
  sum << "errors: " << errors << "\n";
  for (std::size_t ai = 0; ai < attack_grid.size(); ++ai)
    sum << "attack" << ai << ": " << attack_grid[ai].label() << "\n";
  sum << "with-segmentation um/hfe cells with positive rate of reduction: " << seg_positive << "/"
      << seg_cells << " (majority: " << (2 * seg_positive > seg_cells ? "yes" : "no") << ")\n";
  out.summary = sum.str();

  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError(out_dir + ": cannot create directory: " + ec.message());
    const std::filesystem::path dir(out_dir);

    auto emit = [&](const std::string& name, const std::string& body) {
      const std::string path = (dir / name).string();
      std::ofstream f(path, std::ios::binary);
      if (!f) throw IoError(path + ": cannot open for writing");
      f << body;
      if (!f) throw IoError(path + ": write failed");
      out.files.push_back(path);
    };
    emit("report.csv", to_csv(out.rows));
    emit("table.txt", to_text_table(out.rows));
    emit("summary.txt", out.summary);
    for (std::size_t mi = 0; mi < models.size(); ++mi)
      for (std::size_t ai = 0; ai < attack_grid.size(); ++ai) {
        const AttackConfig& atk = attack_grid[ai];
        const bool pgd_kind = atk.kind == AttackKind::Pgd;
        std::vector<ReportRow> slice;
        for (const ReportRow& r : out.rows)
          if (r.model == models[mi].tag && r.attack == to_string(atk.kind) &&
              r.eps == atk.epsilon && r.alpha == (pgd_kind ? atk.alpha : 0.0) &&
              r.iters == (pgd_kind ? atk.iters : 0) && r.segmented)
            slice.push_back(r);
        emit("heatmap_" + models[mi].tag + "_attack" + std::to_string(ai) + ".csv",
             to_heatmap_csv(slice));
      }
  }
  return out;
}

}  // namespace sepipe
