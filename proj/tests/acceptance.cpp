// Acceptance gate: prints one [PASS]/[FAIL] line per criterion and exits
// nonzero if any fail. Progress goes to stderr, verdicts to stdout.
//
// Heavy artifacts (dataset, trained checkpoints, sweep reports) land in
// ./acceptance_scratch. Set SEPIPE_ACCEPT_REUSE=1 to reuse checkpoints from a
// previous run while iterating; the timing gates then report 0s.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sepipe/attacks.hpp"
#include "sepipe/dataset.hpp"
#include "sepipe/enhance.hpp"
#include "sepipe/errors.hpp"
#include "sepipe/evaluate.hpp"
#include "sepipe/gradcheck.hpp"
#include "sepipe/graph.hpp"
#include "sepipe/image_io.hpp"
#include "sepipe/models.hpp"
#include "sepipe/report.hpp"
#include "sepipe/rng.hpp"
#include "sepipe/segment.hpp"
#include "sepipe/sweep.hpp"
#include "sepipe/synthetic.hpp"

namespace fs = std::filesystem;
using namespace sepipe;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Image random_image(int size, Rng& rng, int lo = 0, int hi = 255) {
  Image im(size, size, 0);
  for (auto& p : im.pixels)
    p = static_cast<std::uint8_t>(lo + static_cast<int>(rng.below(hi - lo + 1)));
  return im;
}

struct Tally {
  int failures = 0;
  std::string first;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures;
    if (first.empty()) first = what;
  }

  std::string verdict(const std::string& ok_detail) const {
    return failures == 0 ? ok_detail : format("%d check(s) failed, first: ", failures) + first;
  }
};

// ---------------------------------------------------------------------------
// 1. gradients vs central finite differences, 64-bit, input + every parameter

double loss_value(const ModelConfig& cfg, const std::vector<TensorD>& theta, const TensorD& in,
                  const std::vector<int>& labels) {
  GraphD g;
  std::vector<int> pids;
  for (const auto& t : theta) pids.push_back(g.leaf(t));
  const auto f = forward_nodes(g, cfg, g.leaf(in), pids);
  return g.value(loss_nodes(g, cfg, f, labels)).data[0];
}

double model_grad_error(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = build_model(cfg);
  std::vector<TensorD> theta;
  for (const auto& p : m.params) theta.push_back(p.value.cast<double>());

  Rng rng(seed);
  TensorD in = TensorD::zeros({2, 1, cfg.input_size, cfg.input_size});
  for (auto& v : in.data) v = 0.05 + 0.9 * rng.uniform();
  const std::vector<int> labels = {0, 1};

  GraphD g;
  std::vector<int> pids;
  for (const auto& t : theta) {
    TensorD leafed = t;
    leafed.requires_grad = true;
    pids.push_back(g.leaf(std::move(leafed)));
  }
  TensorD in_leaf = in;
  in_leaf.requires_grad = true;
  const int input_id = g.leaf(std::move(in_leaf));
  g.backward(loss_nodes(g, cfg, forward_nodes(g, cfg, input_id, pids), labels));

  double worst = 0;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (!g.has_grad(pids[k])) return 1.0;
    auto f_k = [&, k](const TensorD& t) {
      std::vector<TensorD> th = theta;
      th[k] = t;
      return loss_value(cfg, th, in, labels);
    };
    worst = std::max(worst, grad_check<double>(f_k, theta[k], g.grad(pids[k]), 1e-5));
  }
  auto f_in = [&](const TensorD& t) { return loss_value(cfg, theta, t, labels); };
  return std::max(worst, grad_check<double>(f_in, in, g.grad(input_id), 1e-5));
}

std::string check_gradients(Tally& t) {
  const auto t0 = Clock::now();

  ModelConfig cnn = ModelConfig::simple_cnn(16, 5);
  cnn.conv_layer_count = 2;
  cnn.channels = {4, 8};
  const double cnn_err = model_grad_error(cnn, 100);

  ModelConfig vit = ModelConfig::toy_vit(16, 7);
  vit.patch_size = 8;
  vit.layers = 2;
  vit.hidden_size = 16;
  vit.mlp_size = 32;
  vit.heads = 2;
  const double vit_err = model_grad_error(vit, 101);

  const double secs = seconds_since(t0);
  t.expect(cnn_err < 1e-4, format("cnn max rel grad err %.3e >= 1e-4", cnn_err));
  t.expect(vit_err < 1e-4, format("vit max rel grad err %.3e >= 1e-4", vit_err));
  t.expect(secs < 120.0, format("took %.0fs >= 120s", secs));
  return format("max rel err cnn=%.2e vit=%.2e in %.1fs", cnn_err, vit_err, secs);
}

// ---------------------------------------------------------------------------
// 2. attack budget, range, pgd/fgsm equivalence, linear hand oracles

Model toy_cnn(int size, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::simple_cnn(size, seed);
  cfg.conv_layer_count = 2;
  cfg.channels = {4, 8};
  Model m = build_model(cfg);
  m.trained = true;
  return m;
}

Model linear_scorer() {
  ModelConfig cfg = ModelConfig::simple_cnn(2, 0);
  cfg.conv_layer_count = 0;
  cfg.channels = {};
  Model m = build_model(cfg);
  m.param("head.weight").value = Tensor({4, 1}, {0.5f, -0.25f, 0.0f, 1.0f});
  m.param("head.bias").value = Tensor({1}, {0.3f});
  m.trained = true;
  return m;
}

std::string check_attack_contracts(Tally& t) {
  const Model m = toy_cnn(16, 5);
  Rng rng(77);
  std::vector<Image> imgs;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    imgs.push_back(random_image(16, rng));
    labels.push_back(i % 2);
  }

  AttackConfig fgsm;
  fgsm.epsilon = 0.031;
  fgsm.threat = ThreatMode::Direct;
  AttackConfig pgd;
  pgd.kind = AttackKind::Pgd;
  pgd.epsilon = 0.01;
  pgd.alpha = 0.004;
  pgd.iters = 5;
  pgd.threat = ThreatMode::Direct;

  for (const AttackConfig& cfg : {fgsm, pgd}) {
    const auto outs = craft_attacks(m, cfg, imgs, labels);
    for (const AttackOutcome& o : outs)
      for (std::size_t k = 0; k < o.delta.size(); ++k) {
        t.expect(std::abs(o.delta[k]) <= cfg.epsilon, "delta exceeds epsilon");
        t.expect(o.adv_real[k] >= 0.0 && o.adv_real[k] <= 1.0, "adv point outside [0,1]");
        t.expect(std::abs(o.adv_real[k] - o.clean_real[k]) <= cfg.epsilon,
                 "inf-norm distance exceeds epsilon");
      }
  }

  // one saturated step must be exactly fgsm
  AttackConfig f1 = fgsm;
  f1.epsilon = 0.013;
  for (double alpha : {0.013, 0.4}) {
    AttackConfig p1;
    p1.kind = AttackKind::Pgd;
    p1.epsilon = 0.013;
    p1.alpha = alpha;
    p1.iters = 1;
    p1.threat = ThreatMode::Direct;
    const auto fo = craft_attacks(m, f1, imgs, labels);
    const auto po = craft_attacks(m, p1, imgs, labels);
    for (std::size_t i = 0; i < fo.size(); ++i) {
      t.expect(fo[i].delta == po[i].delta, "pgd(T=1) delta differs from fgsm");
      t.expect(fo[i].adv_real == po[i].adv_real, "pgd(T=1) adv point differs from fgsm");
      t.expect(fo[i].adversarial.pixels == po[i].adversarial.pixels,
               "pgd(T=1) quantized image differs from fgsm");
    }
  }

  // hand-derived signs on the 2x2 logistic scorer: grad wrt input is
  // (sigmoid(z) - y) * w, so label 0 flips signs against w = (.5,-.25,0,1)
  const Model lin = linear_scorer();
  Image x(2, 2, 0);
  x.pixels = {100, 150, 200, 50};
  const double eps = 10.0 / 255.0;
  AttackConfig hc;
  hc.epsilon = eps;
  hc.threat = ThreatMode::Direct;

  const AttackOutcome o0 = craft_attack(lin, hc, x, 0);
  t.expect(o0.delta == std::vector<double>{-eps, eps, 0.0, -eps}, "label-0 fgsm delta");
  t.expect(o0.adversarial.pixels == std::vector<std::uint8_t>{90, 160, 200, 40},
           "label-0 fgsm pixels");

  const AttackOutcome o1 = craft_attack(lin, hc, x, 1);
  t.expect(o1.delta == std::vector<double>{eps, -eps, 0.0, eps}, "label-1 fgsm delta");
  t.expect(o1.adversarial.pixels == std::vector<std::uint8_t>{110, 140, 200, 60},
           "label-1 fgsm pixels");

  AttackConfig hp;
  hp.kind = AttackKind::Pgd;
  hp.epsilon = 1.0 / 255.0;
  hp.alpha = 2.0 / 255.0;
  hp.iters = 7;
  hp.threat = ThreatMode::Direct;
  const AttackOutcome op = craft_attack(lin, hp, x, 0);
  t.expect(op.delta == std::vector<double>{-1.0 / 255.0, 1.0 / 255.0, 0.0, -1.0 / 255.0},
           "pgd ball-boundary delta");

  const auto g = input_gradients(lin, {{100 / 255.0, 150 / 255.0, 200 / 255.0, 50 / 255.0}}, {0});
  const double z = 0.5 * (100 / 255.0) - 0.25 * (150 / 255.0) + 1.0 * (50 / 255.0) + 0.3;
  const double coeff = 1.0 / (1.0 + std::exp(-z)) - 1.0;
  const double w[4] = {0.5, -0.25, 0.0, 1.0};
  for (int k = 0; k < 4; ++k)
    t.expect(std::abs(g[0][static_cast<std::size_t>(k)] - coeff * w[k]) < 1e-6,
             "closed-form input gradient");

  return "50 images within budget and range; pgd(T=1,a>=eps) == fgsm bitwise; "
         "linear hand oracles exact";
}

// ---------------------------------------------------------------------------
// 3. enhancement vs independent references

// naive per-pixel reference: rebuild the four neighboring tile mappings from
// scratch for every pixel
std::uint8_t naive_clahe_pixel(const Image& img, int px, int py, int gx, int gy, int clip) {
  auto tile_x0 = [&](int i) { return i < gx ? i * (img.width / gx) : img.width; };
  auto tile_y0 = [&](int i) { return i < gy ? i * (img.height / gy) : img.height; };

  auto mapping_at = [&](int tx, int ty, int value) -> double {
    const int x0 = tile_x0(tx), x1 = tile_x0(tx + 1);
    const int y0 = tile_y0(ty), y1 = tile_y0(ty + 1);
    long hist[256] = {0};
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) ++hist[img.at(x, y)];
    int distinct = 0;
    for (long c : hist)
      if (c > 0) ++distinct;
    if (distinct <= 1) return value;
    const long tp = static_cast<long>(x1 - x0) * (y1 - y0);
    const long limit = std::max(
        1L,
        static_cast<long>(std::ceil(static_cast<double>(clip) * static_cast<double>(tp) / 256.0)));
    long excess = 0;
    for (int v = 0; v < 256; ++v)
      if (hist[v] > limit) {
        excess += hist[v] - limit;
        hist[v] = limit;
      }
    const long per_bin = excess / 256;
    for (int v = 0; v < 256; ++v) hist[v] += per_bin;
    hist[0] += excess - per_bin * 256;

    long cdf_min = 0;
    for (int v = 0; v < 256; ++v)
      if (hist[v] > 0) {
        cdf_min = hist[v];
        break;
      }
    long cdf = 0;
    for (int v = 0; v <= value; ++v) cdf += hist[v];
    const long out =
        std::lround(255.0 * static_cast<double>(cdf - cdf_min) / static_cast<double>(tp - cdf_min));
    return static_cast<double>(std::clamp(out, 0L, 255L));
  };

  auto center_x = [&](int i) { return (tile_x0(i) + tile_x0(i + 1) - 1) / 2.0; };
  auto center_y = [&](int i) { return (tile_y0(i) + tile_y0(i + 1) - 1) / 2.0; };

  int tx0, tx1, ty0, ty1;
  double fx, fy;
  if (px <= center_x(0)) {
    tx0 = tx1 = 0;
    fx = 0;
  } else if (px >= center_x(gx - 1)) {
    tx0 = tx1 = gx - 1;
    fx = 0;
  } else {
    tx0 = 0;
    while (center_x(tx0 + 1) <= px) ++tx0;
    tx1 = tx0 + 1;
    fx = (px - center_x(tx0)) / (center_x(tx1) - center_x(tx0));
  }
  if (py <= center_y(0)) {
    ty0 = ty1 = 0;
    fy = 0;
  } else if (py >= center_y(gy - 1)) {
    ty0 = ty1 = gy - 1;
    fy = 0;
  } else {
    ty0 = 0;
    while (center_y(ty0 + 1) <= py) ++ty0;
    ty1 = ty0 + 1;
    fy = (py - center_y(ty0)) / (center_y(ty1) - center_y(ty0));
  }
  const int v = img.at(px, py);
  const double acc = (1.0 - fy) * ((1.0 - fx) * mapping_at(tx0, ty0, v) +
                                   fx * mapping_at(tx1, ty0, v)) +
                     fy * ((1.0 - fx) * mapping_at(tx0, ty1, v) + fx * mapping_at(tx1, ty1, v));
  return static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
}

// O(N^4) direct DFT reference for the spectral stage
std::vector<double> naive_hfe(const std::vector<double>& x, int w, int h, double d0) {
  using cd = std::complex<double>;
  std::vector<cd> F(static_cast<std::size_t>(w) * h);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v) {
      cd acc{0, 0};
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>(u) * y / h + static_cast<double>(v) * xx / w);
          acc += x[static_cast<std::size_t>(y) * w + xx] * cd(std::cos(ang), std::sin(ang));
        }
      const int du = (2 * u < h) ? u : u - h;
      const int dv = (2 * v < w) ? v : v - w;
      const double d2 = static_cast<double>(du) * du + static_cast<double>(dv) * dv;
      F[static_cast<std::size_t>(u) * w + v] = acc * (2.0 - std::exp(-d2 / (2.0 * d0 * d0)));
    }
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      cd acc{0, 0};
      for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
          const double ang = 2.0 * std::numbers::pi *
                             (static_cast<double>(u) * y / h + static_cast<double>(v) * xx / w);
          acc += F[static_cast<std::size_t>(u) * w + v] * cd(std::cos(ang), std::sin(ang));
        }
      out[static_cast<std::size_t>(y) * w + xx] = acc.real() / (static_cast<double>(w) * h);
    }
  return out;
}

std::uint8_t brute_rank(const Image& img, int x, int y, int r, BlurKind kind) {
  std::vector<std::uint8_t> win;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      win.push_back(
          img.at(std::clamp(x + dx, 0, img.width - 1), std::clamp(y + dy, 0, img.height - 1)));
  std::sort(win.begin(), win.end());
  if (kind == BlurKind::Minimum) return win.front();
  if (kind == BlurKind::Maximum) return win.back();
  return win[win.size() / 2];
}

std::string check_enhancement_oracles(Tally& t) {
  Rng rng(3001);

  for (int trial = 0; trial < 20; ++trial) {
    const Image img = random_image(32, rng);
    const Image out = clahe(img, {4, 4, 8});
    bool exact = true;
    for (int y = 0; y < 32 && exact; ++y)
      for (int x = 0; x < 32; ++x)
        if (out.at(x, y) != naive_clahe_pixel(img, x, y, 4, 4, 8)) {
          exact = false;
          break;
        }
    t.expect(exact, format("clahe differs from naive reference on trial %d", trial));
  }

  for (int trial = 0; trial < 3; ++trial) {
    const Image img = random_image(16, rng);
    const auto got = hfe_filter_real(img.to_real(), 16, 16, 10.0 + 10.0 * trial);
    const auto want = naive_hfe(img.to_real(), 16, 16, 10.0 + 10.0 * trial);
    double worst = 0;
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
    t.expect(worst < 1e-4, format("hfe deviates %.2e from direct DFT", worst));
  }

  for (BlurKind kind : {BlurKind::Median, BlurKind::Maximum, BlurKind::Minimum})
    for (int r : {1, 2}) {
      const Image img = random_image(11, rng);
      const Image out = blur(img, kind, r);
      bool exact = true;
      for (int y = 0; y < 11 && exact; ++y)
        for (int x = 0; x < 11; ++x)
          if (out.at(x, y) != brute_rank(img, x, y, r, kind)) {
            exact = false;
            break;
          }
      t.expect(exact, format("%s filter r=%d differs from window sort",
                             to_string(kind).c_str(), r));
    }

  // constant images must be fixed points of every technique at every grid point
  std::vector<EnhanceConfig> grid = paper_enhance_grid();
  grid.push_back({});  // none
  for (int margin : {1, 2, 3}) {
    EnhanceConfig crop;
    crop.option = EnhanceOption::CropResize;
    crop.crop.margin = margin;
    grid.push_back(crop);
  }
  for (std::uint8_t value : {std::uint8_t{0}, std::uint8_t{128}, std::uint8_t{255}}) {
    const Image constant(32, 32, value);
    for (const EnhanceConfig& cfg : grid)
      t.expect(enhance(constant, cfg) == constant,
               format("constant %d not fixed under %s", value, to_string(cfg.option).c_str()));
  }

  return "clahe exact on 20 images; hfe within 1e-4 of direct DFT; rank filters exact; "
         "constant fixed points hold across the grid";
}

// ---------------------------------------------------------------------------
// 4. aggregation and rate-of-reduction vs brute force

std::vector<ProbRecord> random_records(Rng& rng, int n) {
  std::vector<ProbRecord> rs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ProbRecord& r = rs[static_cast<std::size_t>(i)];
    r.example_id = i;
    r.true_label = static_cast<int>(rng.below(2));
    r.p_a = rng.uniform();
    r.p_b = rng.below(2) ? 1.0 - r.p_a : rng.uniform();
    r.p_a_adv = rng.uniform();
    r.p_b_adv = rng.below(2) ? 1.0 - r.p_a_adv : rng.uniform();
    r.attack_successful = rng.below(2) != 0;
  }
  return rs;
}

// straight-loop recomputation, summed in reverse to decouple rounding order
Aggregate reference_aggregate(const std::vector<ProbRecord>& rs, MetricMode mode) {
  Aggregate a;
  a.n_total = static_cast<int>(rs.size());
  std::vector<const ProbRecord*> keep;
  for (const auto& r : rs)
    if (r.attack_successful) keep.push_back(&r);
  a.n_filtered = static_cast<int>(keep.size());
  if (keep.empty()) return a;
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (auto it = v.rbegin(); it != v.rend(); ++it) s += *it;
    return s / static_cast<double>(v.size());
  };
  if (mode == MetricMode::Literal) {
    std::vector<double> c, d;
    for (const ProbRecord* r : keep) {
      c.push_back((r->p_a + r->p_b) / 2.0);
      d.push_back((r->p_a_adv + r->p_b_adv) / 2.0);
    }
    a.mean_clean_conf = mean(c);
    a.mean_adv_conf = mean(d);
  } else {
    std::vector<double> clean_means, adv_means;
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<double> c, d;
      for (const ProbRecord* r : keep) {
        if (r->true_label != cls) continue;
        c.push_back(cls == 0 ? r->p_a : r->p_b);
        d.push_back(cls == 0 ? r->p_a_adv : r->p_b_adv);
      }
      if (c.empty()) continue;
      clean_means.push_back(mean(c));
      adv_means.push_back(mean(d));
    }
    a.mean_clean_conf = mean(clean_means);
    a.mean_adv_conf = mean(adv_means);
  }
  a.diff = std::abs(a.mean_clean_conf - a.mean_adv_conf);
  a.defined = true;
  return a;
}

Aggregate diff_only(double diff) {
  Aggregate a;
  a.n_total = a.n_filtered = 10;
  a.diff = diff;
  a.defined = true;
  return a;
}

std::string check_metric_oracle(Tally& t) {
  Rng rng(4242);
  for (int round = 0; round < 1000; ++round) {
    const auto rs = random_records(rng, static_cast<int>(rng.below(40)));
    for (MetricMode mode : {MetricMode::Interpreted, MetricMode::Literal}) {
      const Aggregate got = aggregate_records(rs, mode);
      const Aggregate want = reference_aggregate(rs, mode);
      t.expect(got.n_total == want.n_total && got.n_filtered == want.n_filtered &&
                   got.defined == want.defined,
               "aggregate counts disagree with brute force");
      if (want.defined) {
        t.expect(std::abs(got.mean_clean_conf - want.mean_clean_conf) < 1e-12 &&
                     std::abs(got.mean_adv_conf - want.mean_adv_conf) < 1e-12 &&
                     std::abs(got.diff - want.diff) < 1e-12,
                 "aggregate values deviate past 1e-12");
      }
    }
  }

  const RateResult r0 = rate_of_reduction(diff_only(0.4), diff_only(0.4));
  t.expect(r0.defined && std::abs(r0.value) < 1e-9, "unchanged diff should give 0%");
  const RateResult r100 = rate_of_reduction(diff_only(0.4), diff_only(0.0));
  t.expect(r100.defined && std::abs(r100.value - 1.0) < 1e-9, "eliminated diff should give 100%");
  const RateResult rt3 = rate_of_reduction(diff_only(0.40), diff_only(0.069));
  t.expect(rt3.defined && std::abs(rt3.value - 0.8275) < 1e-9,
           "0.40 -> 0.069 should give 82.75%");

  // complementary two-class probabilities make the literal mean identically 1/2
  std::vector<ProbRecord> comp = random_records(rng, 64);
  for (auto& r : comp) {
    r.p_a = static_cast<double>(rng.below(65)) / 64.0;
    r.p_b = 1.0 - r.p_a;
    r.p_a_adv = static_cast<double>(rng.below(65)) / 64.0;
    r.p_b_adv = 1.0 - r.p_a_adv;
    r.attack_successful = true;
  }
  const Aggregate lit = aggregate_records(comp, MetricMode::Literal);
  t.expect(lit.defined && lit.diff == 0.0 && lit.mean_clean_conf == 0.5,
           "literal mode should degenerate to diff == 0");

  return "1000 record sets match brute force to 1e-12; rate hand cases "
         "(0%, 100%, 82.75%) to 1e-9; literal degeneracy holds";
}

// ---------------------------------------------------------------------------
// 5. desk-scale end to end; 6. determinism and round-trips

struct EndToEnd {
  fs::path scratch;
  Dataset ds;
  Model cnn;
  Model vit;
  std::vector<ReportRow> sweep_rows;
  std::string sweep_dir;
};

Model train_or_load(const fs::path& ckpt, const ModelConfig& mc, const std::vector<Sample>& data,
                    const TrainConfig& tc, double* secs) {
  if (std::getenv("SEPIPE_ACCEPT_REUSE") && fs::exists(ckpt)) {
    *secs = 0.0;
    std::cerr << "[accept] reusing " << ckpt << "\n";
    return load_checkpoint(ckpt.string());
  }
  Model m = build_model(mc);
  const auto t0 = Clock::now();
  const TrainHistory h = train(m, data, tc);
  *secs = seconds_since(t0);
  std::cerr << format("[accept] trained %s: %zu epochs, best val acc %.3f, %.0fs\n",
                      to_string(mc.kind).c_str(), h.epochs.size(), h.best_val_accuracy, *secs);
  save_checkpoint(m, ckpt.string());
  return m;
}

double accuracy(const Model& m, const std::vector<Example>& set) {
  int hits = 0;
  for (const Example& e : set) {
    const auto [p0, p1] = predict_proba(m, e.image);
    hits += predicted_class(p0, p1) == e.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

// mean drop in the true class probability under a direct fgsm attack
double confidence_drop(const Model& m, const std::vector<Example>& set) {
  AttackConfig atk;
  atk.epsilon = 0.05;
  atk.threat = ThreatMode::Direct;
  const EvalResult res = evaluate(m, set, atk, PipelineConfig{});
  double drop = 0;
  for (const ProbRecord& r : res.records)
    drop += r.true_label == 0 ? r.p_a - r.p_a_adv : r.p_b - r.p_b_adv;
  return drop / static_cast<double>(res.records.size());
}

std::string check_end_to_end(Tally& t, EndToEnd& e2e) {
  e2e.scratch = fs::current_path() / "acceptance_scratch";
  if (!std::getenv("SEPIPE_ACCEPT_REUSE")) fs::remove_all(e2e.scratch);
  fs::create_directories(e2e.scratch);

  GenConfig gen;
  gen.n = 600;
  gen.size = 64;
  gen.seed = 2026;
  const std::string manifest = gen_synthetic_dataset(gen, (e2e.scratch / "data").string());
  e2e.ds = load_dataset(manifest, 2026);
  t.expect(e2e.ds.train.size() == 480 && e2e.ds.test.size() == 120, "unexpected split sizes");
  std::cerr << "[accept] dataset ready: " << e2e.ds.train.size() << " train / "
            << e2e.ds.test.size() << " test\n";

  const std::vector<Sample> train_set = to_samples(e2e.ds.train);
  double cnn_secs = 0, vit_secs = 0;

  // generalization arrives well after the training loss collapses here, so the
  // budgets are long and patience generous; best-val restore picks the peak
  TrainConfig cnn_tc;
  cnn_tc.seed = 1;
  cnn_tc.max_epochs = 80;
  cnn_tc.patience = 25;
  cnn_tc.learning_rate = 3e-3;
  e2e.cnn = train_or_load(e2e.scratch / "simple_cnn.ckpt", ModelConfig::simple_cnn(64, 1),
                          train_set, cnn_tc, &cnn_secs);

  TrainConfig vit_tc;
  vit_tc.seed = 2;
  vit_tc.max_epochs = 40;
  vit_tc.patience = 12;
  vit_tc.learning_rate = 1e-3;
  e2e.vit = train_or_load(e2e.scratch / "toy_vit.ckpt", ModelConfig::toy_vit(64, 2), train_set,
                          vit_tc, &vit_secs);

  const double cnn_acc = accuracy(e2e.cnn, e2e.ds.test);
  const double vit_acc = accuracy(e2e.vit, e2e.ds.test);
  t.expect(cnn_acc >= 0.90, format("cnn test accuracy %.3f < 0.90", cnn_acc));
  t.expect(vit_acc >= 0.90, format("vit test accuracy %.3f < 0.90", vit_acc));
  t.expect(cnn_secs < 600.0, format("cnn training took %.0fs >= 600s", cnn_secs));
  t.expect(vit_secs < 600.0, format("vit training took %.0fs >= 600s", vit_secs));

  const double cnn_drop = confidence_drop(e2e.cnn, e2e.ds.test);
  const double vit_drop = confidence_drop(e2e.vit, e2e.ds.test);
  t.expect(cnn_drop >= 0.05, format("fgsm 0.05 drop on cnn only %.3f", cnn_drop));
  t.expect(vit_drop >= 0.05, format("fgsm 0.05 drop on vit only %.3f", vit_drop));
  std::cerr << format("[accept] acc cnn=%.3f vit=%.3f, fgsm drop cnn=%.3f vit=%.3f\n", cnn_acc,
                      vit_acc, cnn_drop, vit_drop);

  const std::vector<SweepModelSet> models = {{"simple_cnn", &e2e.cnn, nullptr},
                                             {"toy_vit", &e2e.vit, nullptr}};
  const std::vector<Example> eval_set(e2e.ds.test.begin(), e2e.ds.test.begin() + 40);
  const auto attacks = paper_attack_grid(0.05, ThreatMode::BpdaIdentity);
  SweepOptions opts;

  const auto s0 = Clock::now();
  const SweepOutput run1 = run_sweep(models, paper_pipeline_grid(), attacks, eval_set, opts,
                                     (e2e.scratch / "sweep1").string());
  std::cerr << format("[accept] sweep pass 1: %.0fs\n", seconds_since(s0));
  const SweepOutput run2 = run_sweep(models, paper_pipeline_grid(), attacks, eval_set, opts,
                                     (e2e.scratch / "sweep2").string());
  std::cerr << format("[accept] sweep pass 2: %.0fs\n", seconds_since(s0));

  t.expect(run1.rows.size() == 192, format("expected 192 rows, got %zu", run1.rows.size()));
  int errors = 0;
  for (const ReportRow& r : run1.rows)
    if (!r.error.empty()) ++errors;
  t.expect(errors == 0, format("%d sweep rows carry errors", errors));
  t.expect(slurp((e2e.scratch / "sweep1" / "report.csv").string()) ==
               slurp((e2e.scratch / "sweep2" / "report.csv").string()),
           "sweep rerun is not byte-identical");

  e2e.sweep_rows = run1.rows;
  e2e.sweep_dir = (e2e.scratch / "sweep1").string();

  // directional replication is data-dependent, so it is reported, not gated
  std::string directional = "(missing)";
  std::istringstream lines(run1.summary);
  for (std::string line; std::getline(lines, line);)
    if (line.find("with-segmentation") != std::string::npos) directional = line;

  return format("acc cnn=%.2f vit=%.2f (%.0fs/%.0fs), fgsm drop %.2f/%.2f, "
                "sweep 192 rows clean, rerun byte-identical; informational: %s",
                cnn_acc, vit_acc, cnn_secs, vit_secs, cnn_drop, vit_drop, directional.c_str());
}

std::string check_round_trips(Tally& t, EndToEnd& e2e) {
  // checkpoint: parameters bitwise, then bytes on disk
  const fs::path ck1 = e2e.scratch / "rt1.ckpt";
  const fs::path ck2 = e2e.scratch / "rt2.ckpt";
  save_checkpoint(e2e.cnn, ck1.string());
  const Model back = load_checkpoint(ck1.string());
  t.expect(back.trained && back.config.kind == e2e.cnn.config.kind &&
               back.params.size() == e2e.cnn.params.size(),
           "checkpoint shape mismatch");
  for (std::size_t i = 0; i < back.params.size(); ++i) {
    const auto& a = e2e.cnn.params[i].value.data;
    const auto& b = back.params[i].value.data;
    t.expect(a.size() == b.size() &&
                 std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0,
             "checkpoint parameters not bitwise equal");
  }
  save_checkpoint(back, ck2.string());
  t.expect(slurp(ck1.string()) == slurp(ck2.string()), "checkpoint bytes differ after round-trip");

  // mask pgm
  const fs::path mask_src = e2e.scratch / "data" / "mask_00000.pgm";
  const Mask mask = read_mask_pgm(mask_src.string());
  const fs::path mask_copy = e2e.scratch / "rt_mask.pgm";
  write_mask_pgm(mask, mask_copy.string());
  t.expect(slurp(mask_src.string()) == slurp(mask_copy.string()), "mask pgm bytes differ");

  // report csv
  const std::string report = e2e.sweep_dir + "/report.csv";
  const std::vector<ReportRow> parsed = read_report_csv(report);
  t.expect(parsed == e2e.sweep_rows, "parsed report rows differ from in-memory rows");
  const fs::path report_copy = e2e.scratch / "rt_report.csv";
  write_report_csv(parsed, report_copy.string());
  t.expect(slurp(report) == slurp(report_copy.string()), "report csv bytes differ");

  // thread count must not leak into the outputs
  const std::vector<SweepModelSet> models = {{"simple_cnn", &e2e.cnn, nullptr},
                                             {"toy_vit", &e2e.vit, nullptr}};
  const auto grid = paper_pipeline_grid();
  const std::vector<PipelineConfig> small(grid.begin(), grid.begin() + 6);
  const std::vector<Example> eval_set(e2e.ds.test.begin(), e2e.ds.test.begin() + 16);
  const auto attacks = paper_attack_grid(0.05, ThreatMode::BpdaIdentity);
  std::string csvs[2];
  for (int i = 0; i < 2; ++i) {
    SweepOptions opts;
    opts.threads = i == 0 ? 1 : 5;
    const SweepOutput out = run_sweep(models, small, attacks, eval_set, opts);
    csvs[i] = to_csv(out.rows);
  }
  t.expect(csvs[0] == csvs[1], "sweep csv depends on thread count");

  return "checkpoint, mask pgm and report csv round-trip bitwise; "
         "1 and 5 worker threads emit identical csv";
}

}  // namespace

int main() {
  struct Criterion {
    const char* title;
    std::function<std::string(Tally&)> run;
  };

  EndToEnd e2e;
  const std::vector<Criterion> criteria = {
      {"gradient correctness", check_gradients},
      {"attack contracts", check_attack_contracts},
      {"enhancement oracles", check_enhancement_oracles},
      {"metric oracle", check_metric_oracle},
      {"desk-scale end-to-end", [&](Tally& t) { return check_end_to_end(t, e2e); }},
      {"determinism and round-trips", [&](Tally& t) { return check_round_trips(t, e2e); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Tally tally;
    std::string detail;
    try {
      detail = criteria[i].run(tally);
    } catch (const std::exception& ex) {
      tally.expect(false, std::string("unhandled exception: ") + ex.what());
    }
    const bool ok = tally.failures == 0;
    failed += ok ? 0 : 1;
    std::printf("[%s] %zu. %s: %s\n", ok ? "PASS" : "FAIL", i + 1, criteria[i].title,
                tally.verdict(detail).c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
