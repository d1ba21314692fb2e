#include "sepipe/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sepipe/errors.hpp"

namespace sepipe {

std::string to_string(AttackKind k) { return k == AttackKind::Fgsm ? "fgsm" : "pgd"; }

std::string to_string(ThreatMode m) {
  switch (m) {
    case ThreatMode::Direct: return "direct";
    case ThreatMode::BpdaIdentity: return "bpda_identity";
    default: return "transfer";
  }
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "pgd") return AttackKind::Pgd;
  throw ConfigError("kind: unknown attack kind '" + s + "'");
}

ThreatMode threat_mode_from_string(const std::string& s) {
  if (s == "direct") return ThreatMode::Direct;
  if (s == "bpda_identity") return ThreatMode::BpdaIdentity;
  if (s == "transfer") return ThreatMode::Transfer;
  throw ConfigError("threat_mode: unknown mode '" + s + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 1.0))
    throw ConfigError("epsilon: must lie in (0,1], got " + std::to_string(epsilon));
  if (kind == AttackKind::Pgd) {
    if (!(alpha > 0.0)) throw ConfigError("alpha: must be positive, got " + std::to_string(alpha));
    if (iters < 1) throw ConfigError("iterations: must be >= 1, got " + std::to_string(iters));
  }
}

std::string AttackConfig::label() const {
  std::ostringstream ss;
  ss << to_string(kind) << "(eps=" << epsilon;
  if (kind == AttackKind::Pgd) ss << ",alpha=" << alpha << ",iters=" << iters;
  ss << ")";
  return ss.str();
}

std::vector<std::vector<float>> input_gradients(const Model& m,
                                                const std::vector<std::vector<double>>& points,
                                                const std::vector<int>& labels) {
  const int S = m.config.input_size;
  const std::size_t px = static_cast<std::size_t>(S) * S;
  const int n = static_cast<int>(points.size());
  if (points.size() != labels.size())
    throw DimensionError("input_gradients: " + std::to_string(points.size()) + " points vs " +
                         std::to_string(labels.size()) + " labels");

  Tensor in = Tensor::zeros({n, 1, S, S});
  in.requires_grad = true;
  for (int i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    if (p.size() != px)
      throw DimensionError("input_gradients: point of " + std::to_string(p.size()) +
                           " values for a " + std::to_string(S) + "x" + std::to_string(S) +
                           " model");
    for (std::size_t k = 0; k < px; ++k) in.data[i * px + k] = static_cast<float>(p[k]);
  }

  Graph g;
  std::vector<int> pids;
  pids.reserve(m.params.size());
  for (const auto& p : m.params) pids.push_back(g.leaf(p.value));
  const int input = g.leaf(std::move(in));
  const auto f = forward_nodes(g, m.config, input, pids);
  g.backward(loss_nodes(g, m.config, f, labels));

  const Tensor& gi = g.grad(input);
  std::vector<std::vector<float>> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    rows[static_cast<std::size_t>(i)].assign(gi.data.begin() + i * px,
                                             gi.data.begin() + (i + 1) * px);
  return rows;
}

namespace {

double sgn(float v) { return (v > 0.0f) ? 1.0 : (v < 0.0f ? -1.0 : 0.0); }

// clamp01(c + d), then walk back so the measurable offset never exceeds eps;
// the additions round, and half an ulp past the budget still fails an exact check
double project(double c, double d, double eps) {
  double v = std::min(1.0, std::max(0.0, c + d));
  while (v > c && v - c > eps) v = std::nextafter(v, c);
  while (v < c && c - v > eps) v = std::nextafter(v, c);
  return v;
}

}  // namespace

namespace {

std::vector<AttackOutcome> craft_impl(const Model& m, const AttackConfig& cfg,
                                      const std::vector<Image>& images,
                                      const std::vector<int>& labels,
                                      const IndexedPreprocess* preprocess,
                                      const IterateHook* hook) {
  if (!m.trained) throw StateError("attack: model has not been trained");
  if (images.size() != labels.size())
    throw DimensionError("attack: " + std::to_string(images.size()) + " images vs " +
                         std::to_string(labels.size()) + " labels");
  if (cfg.epsilon < 0.0 || cfg.epsilon > 1.0)
    throw ConfigError("epsilon: must lie in [0,1], got " + std::to_string(cfg.epsilon));
  const int steps = cfg.kind == AttackKind::Fgsm ? 1 : cfg.iters;
  if (steps < 1) throw ConfigError("iterations: must be >= 1, got " + std::to_string(steps));
  const double step = cfg.kind == AttackKind::Fgsm ? cfg.epsilon : cfg.alpha;
  const double eps = cfg.epsilon;

  const int S = m.config.input_size;
  const std::size_t px = static_cast<std::size_t>(S) * S;
  const std::size_t n = images.size();

  std::vector<AttackOutcome> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Image& im = images[i];
    if (im.width != S || im.height != S)
      throw DimensionError("attack: image " + std::to_string(im.width) + "x" +
                           std::to_string(im.height) + " does not match model input " +
                           std::to_string(S));
    out[i].clean_real.resize(px);
    for (std::size_t k = 0; k < px; ++k) out[i].clean_real[k] = im.pixels[k] / 255.0;
    out[i].delta.assign(px, 0.0);
  }

  std::vector<std::vector<double>> iterates(n, std::vector<double>(px));
  auto settle_iterates = [&]() {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < px; ++k)
        iterates[i][k] = project(out[i].clean_real[k], out[i].delta[k], eps);
  };

  const bool use_preprocess = cfg.threat == ThreatMode::BpdaIdentity && preprocess != nullptr;
  for (int t = 0; t < steps; ++t) {
    settle_iterates();
    if (hook) (*hook)(t, iterates);

    std::vector<std::vector<double>> points = iterates;
    if (use_preprocess) {
      for (std::size_t i = 0; i < n; ++i) {
        const Image pre = (*preprocess)(i, Image::from_real(iterates[i], S, S));
        for (std::size_t k = 0; k < px; ++k) points[i][k] = pre.pixels[k] / 255.0;
      }
    }
    const auto grads = input_gradients(m, points, labels);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < px; ++k) {
        const double d = out[i].delta[k] + step * sgn(grads[i][k]);
        out[i].delta[k] = std::min(eps, std::max(-eps, d));
      }
  }

  settle_iterates();
  if (hook) (*hook)(steps, iterates);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].adv_real = iterates[i];
    out[i].adversarial = Image::from_real(out[i].adv_real, S, S);
  }
  return out;
}

}  // namespace

std::vector<AttackOutcome> craft_attacks(const Model& m, const AttackConfig& cfg,
                                         const std::vector<Image>& images,
                                         const std::vector<int>& labels,
                                         const Preprocess* preprocess, const IterateHook* hook) {
  if (!preprocess) return craft_impl(m, cfg, images, labels, nullptr, hook);
  const IndexedPreprocess indexed = [preprocess](std::size_t, const Image& im) {
    return (*preprocess)(im);
  };
  return craft_impl(m, cfg, images, labels, &indexed, hook);
}

std::vector<AttackOutcome> craft_attacks_indexed(const Model& m, const AttackConfig& cfg,
                                                 const std::vector<Image>& images,
                                                 const std::vector<int>& labels,
                                                 const IndexedPreprocess& preprocess,
                                                 const IterateHook* hook) {
  return craft_impl(m, cfg, images, labels, preprocess ? &preprocess : nullptr, hook);
}

AttackOutcome craft_attack(const Model& m, const AttackConfig& cfg, const Image& image,
                           int label, const Preprocess* preprocess) {
  return std::move(craft_attacks(m, cfg, {image}, {label}, preprocess).front());
}

Image fgsm(const Model& m, const Image& img, int label, double epsilon) {
  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = epsilon;
  cfg.threat = ThreatMode::Direct;
  return craft_attack(m, cfg, img, label).adversarial;
}

Image pgd(const Model& m, const Image& img, int label, double epsilon, double alpha, int iters) {
  AttackConfig cfg;
  cfg.kind = AttackKind::Pgd;
  cfg.epsilon = epsilon;
  cfg.alpha = alpha;
  cfg.iters = iters;
  cfg.threat = ThreatMode::Direct;
  return craft_attack(m, cfg, img, label).adversarial;
}

bool attack_success(const Model& m, const Image& img, const Image& adv_img, int label) {
  if (!m.trained) throw StateError("attack_success: model has not been trained");
  const Tensor probs =
      forward(m, image_batch({&img, &adv_img}, m.config.input_size));
  const auto [c0, c1] = prob_pair(m.config, probs, 0);
  const auto [a0, a1] = prob_pair(m.config, probs, 1);
  return attack_success(label, c0, c1, a0, a1);
}

}  // namespace sepipe
