#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sepipe/image.hpp"
#include "sepipe/models.hpp"

namespace sepipe {

enum class AttackKind { Fgsm, Pgd };
enum class ThreatMode { Direct, BpdaIdentity, Transfer };

std::string to_string(AttackKind k);
std::string to_string(ThreatMode m);
AttackKind attack_kind_from_string(const std::string& s);
ThreatMode threat_mode_from_string(const std::string& s);

struct AttackConfig {
  AttackKind kind = AttackKind::Fgsm;
  double epsilon = 0.003;      // L-inf budget in [0,1] pixel units
  double alpha = 1.0 / 255.0;  // step size, iterative attack only
  int iters = 7;               // iterations, iterative attack only
  ThreatMode threat = ThreatMode::BpdaIdentity;

  void validate() const;
  std::string label() const;  // short human-readable tag, e.g. "fgsm(eps=0.003)"
};

// defended pipeline acting on the 8-bit image domain
using Preprocess = std::function<Image(const Image&)>;

struct AttackOutcome {
  std::vector<double> clean_real;  // clean pixels in [0,1]
  std::vector<double> delta;       // applied perturbation, |delta| <= epsilon exactly
  std::vector<double> adv_real;    // projected adversarial point, pre-quantization
  Image adversarial{1, 1, 0};      // quantized adv_real
};

// called with the projected iterate positions; t = 0 is the starting point and
// the last call carries the final adversarial points
using IterateHook = std::function<void(int t, const std::vector<std::vector<double>>& iterates)>;

// gradient of each model's training loss wrt the input, one flat row per image
std::vector<std::vector<float>> input_gradients(const Model& m,
                                                const std::vector<std::vector<double>>& points,
                                                const std::vector<int>& labels);

// Batched crafting. `preprocess` is consulted only in bpda_identity mode,
// where gradients are taken at preprocess(quantize(x_t)) and the perturbation
// is applied to x itself. epsilon = 0 is allowed here (identity attack);
// AttackConfig::validate is the strict gate used by front ends.
std::vector<AttackOutcome> craft_attacks(const Model& m, const AttackConfig& cfg,
                                         const std::vector<Image>& images,
                                         const std::vector<int>& labels,
                                         const Preprocess* preprocess = nullptr,
                                         const IterateHook* hook = nullptr);

// pipeline variant carrying per-image state, e.g. a ground-truth mask
using IndexedPreprocess = std::function<Image(std::size_t i, const Image&)>;

std::vector<AttackOutcome> craft_attacks_indexed(const Model& m, const AttackConfig& cfg,
                                                 const std::vector<Image>& images,
                                                 const std::vector<int>& labels,
                                                 const IndexedPreprocess& preprocess,
                                                 const IterateHook* hook = nullptr);

AttackOutcome craft_attack(const Model& m, const AttackConfig& cfg, const Image& image,
                           int label, const Preprocess* preprocess = nullptr);

Image fgsm(const Model& m, const Image& img, int label, double epsilon);
Image pgd(const Model& m, const Image& img, int label, double epsilon, double alpha, int iters);

// ties go to the lower class index
inline int predicted_class(double p0, double p1) { return p0 >= p1 ? 0 : 1; }

inline bool attack_success(int label, double clean_p0, double clean_p1, double adv_p0,
                           double adv_p1) {
  return predicted_class(clean_p0, clean_p1) == label &&
         predicted_class(adv_p0, adv_p1) != label;
}

bool attack_success(const Model& m, const Image& img, const Image& adv_img, int label);

}  // namespace sepipe
