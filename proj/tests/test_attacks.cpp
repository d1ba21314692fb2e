#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sepipe/attacks.hpp"
#include "sepipe/errors.hpp"
#include "sepipe/models.hpp"
#include "sepipe/rng.hpp"
#include "support/test_util.hpp"

using namespace sepipe;

namespace {

// 2x2 logistic scorer with hand-set weights; the loss gradient wrt the input
// is (sigmoid(z) - y) * w, so its sign pattern is readable off w
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

Image random_image(int size, Rng& rng, int lo = 20, int hi = 235) {
  Image im(size, size, 0);
  for (auto& p : im.pixels)
    p = static_cast<std::uint8_t>(lo + static_cast<int>(rng.below(hi - lo + 1)));
  return im;
}

Model toy_cnn(int size, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::simple_cnn(size, seed);
  cfg.conv_layer_count = 2;
  cfg.channels = {4, 8};
  Model m = build_model(cfg);
  m.trained = true;
  return m;
}

double bce_loss(const Model& m, const Image& img, int label) {
  const auto [p0, p1] = prob_pair(m.config, forward(m, image_batch(img, m.config.input_size)), 0);
  return label == 0 ? -std::log(p0) : -std::log(p1);
}

}  // namespace

TEST_CASE("attack config validation") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = 0.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("epsilon"), ConfigError);
  c.epsilon = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = AttackConfig{};
  c.kind = AttackKind::Pgd;
  c.alpha = 0.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("alpha"), ConfigError);
  c.alpha = 0.01;
  c.iters = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("iterations"), ConfigError);

  for (AttackKind k : {AttackKind::Fgsm, AttackKind::Pgd})
    CHECK(attack_kind_from_string(to_string(k)) == k);
  for (ThreatMode t : {ThreatMode::Direct, ThreatMode::BpdaIdentity, ThreatMode::Transfer})
    CHECK(threat_mode_from_string(to_string(t)) == t);
  CHECK_THROWS_AS(attack_kind_from_string("cw"), ConfigError);
  CHECK_THROWS_AS(threat_mode_from_string("oracle"), ConfigError);
}

TEST_CASE("hand-derived gradient signs on the linear scorer") {
  const Model m = linear_scorer();
  const Image img(2, 2, 0);
  Image x = img;
  x.pixels = {100, 150, 200, 50};

  // label 0 targets y=1, so dL/dz = sigmoid(z) - 1 < 0 and signs flip against w
  SUBCASE("fgsm, label 0") {
    const double eps = 10.0 / 255.0;
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.threat = ThreatMode::Direct;
    const AttackOutcome out = craft_attack(m, cfg, x, 0);
    CHECK(out.delta[0] == -eps);
    CHECK(out.delta[1] == eps);
    CHECK(out.delta[2] == 0.0);
    CHECK(out.delta[3] == -eps);
    // a perturbation of exactly 10/255 moves the 8-bit pixel by exactly 10
    CHECK(out.adversarial.pixels == std::vector<std::uint8_t>{90, 160, 200, 40});
  }

  SUBCASE("fgsm, label 1 reverses every sign") {
    const double eps = 10.0 / 255.0;
    AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.threat = ThreatMode::Direct;
    const AttackOutcome out = craft_attack(m, cfg, x, 1);
    CHECK(out.delta[0] == eps);
    CHECK(out.delta[1] == -eps);
    CHECK(out.delta[2] == 0.0);
    CHECK(out.delta[3] == eps);
    CHECK(out.adversarial.pixels == std::vector<std::uint8_t>{110, 140, 200, 60});
  }

  SUBCASE("gradient values match the closed form") {
    const std::vector<std::vector<double>> pts = {
        {100 / 255.0, 150 / 255.0, 200 / 255.0, 50 / 255.0}};
    const auto g = input_gradients(m, pts, {0});
    const double z = 0.5 * pts[0][0] - 0.25 * pts[0][1] + 0.0 * pts[0][2] + 1.0 * pts[0][3] + 0.3;
    const double coeff = 1.0 / (1.0 + std::exp(-z)) - 1.0;
    const double w[4] = {0.5, -0.25, 0.0, 1.0};
    for (int k = 0; k < 4; ++k)
      CHECK(std::abs(g[0][static_cast<std::size_t>(k)] - coeff * w[k]) < 1e-6);
  }

  SUBCASE("pgd 1/255, 2/255, 7 steps lands on the ball boundary") {
    AttackConfig cfg;
    cfg.kind = AttackKind::Pgd;
    cfg.epsilon = 1.0 / 255.0;
    cfg.alpha = 2.0 / 255.0;
    cfg.iters = 7;
    cfg.threat = ThreatMode::Direct;
    const AttackOutcome out = craft_attack(m, cfg, x, 0);
    CHECK(out.delta[0] == -1.0 / 255.0);
    CHECK(out.delta[1] == 1.0 / 255.0);
    CHECK(out.delta[2] == 0.0);
    CHECK(out.delta[3] == -1.0 / 255.0);
  }
}

TEST_CASE("zero budget is the identity") {
  const Model m = linear_scorer();
  Image x(2, 2, 0);
  x.pixels = {10, 250, 128, 0};
  AttackConfig cfg;
  cfg.epsilon = 0.0;  // below the config gate on purpose
  cfg.threat = ThreatMode::Direct;
  const AttackOutcome out = craft_attack(m, cfg, x, 0);
  CHECK(out.adversarial.pixels == x.pixels);
  CHECK(out.adv_real == out.clean_real);
}

TEST_CASE("budget and range contracts on random images") {
  const Model m = toy_cnn(16, 5);
  Rng rng(77);
  std::vector<Image> imgs;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    imgs.push_back(random_image(16, rng, 0, 255));
    labels.push_back(i % 2);
  }

  for (const AttackConfig cfg : {[] {
                                   AttackConfig c;
                                   c.kind = AttackKind::Fgsm;
                                   c.epsilon = 0.02;
                                   c.threat = ThreatMode::Direct;
                                   return c;
                                 }(),
                                 [] {
                                   AttackConfig c;
                                   c.kind = AttackKind::Pgd;
                                   c.epsilon = 0.01;
                                   c.alpha = 0.004;
                                   c.iters = 5;
                                   c.threat = ThreatMode::Direct;
                                   return c;
                                 }()}) {
    const auto outs = craft_attacks(m, cfg, imgs, labels);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const AttackOutcome& o = outs[i];
      for (std::size_t k = 0; k < o.delta.size(); ++k) {
        CHECK(std::abs(o.delta[k]) <= cfg.epsilon);
        CHECK(o.adv_real[k] >= 0.0);
        CHECK(o.adv_real[k] <= 1.0);
        CHECK(std::abs(o.adv_real[k] - o.clean_real[k]) <= cfg.epsilon);
        const double px_diff =
            std::abs(static_cast<double>(o.adversarial.pixels[k]) - imgs[i].pixels[k]) / 255.0;
        CHECK(px_diff <= cfg.epsilon + 1.0 / 255.0);
      }
    }
  }
}

TEST_CASE("single-step saturated pgd equals fgsm bit for bit") {
  const Model m = toy_cnn(16, 9);
  Rng rng(12);
  std::vector<Image> imgs;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) {
    imgs.push_back(random_image(16, rng));
    labels.push_back(i % 2);
  }

  AttackConfig f;
  f.kind = AttackKind::Fgsm;
  f.epsilon = 0.013;
  f.threat = ThreatMode::Direct;

  for (double alpha : {0.013, 0.02, 0.4}) {
    AttackConfig p;
    p.kind = AttackKind::Pgd;
    p.epsilon = 0.013;
    p.alpha = alpha;
    p.iters = 1;
    p.threat = ThreatMode::Direct;

    const auto fo = craft_attacks(m, f, imgs, labels);
    const auto po = craft_attacks(m, p, imgs, labels);
    for (std::size_t i = 0; i < fo.size(); ++i) {
      CHECK(fo[i].adv_real == po[i].adv_real);
      CHECK(fo[i].delta == po[i].delta);
      CHECK(fo[i].adversarial.pixels == po[i].adversarial.pixels);
    }
  }
}

TEST_CASE("every pgd iterate respects both constraints") {
  const Model m = toy_cnn(16, 31);
  Rng rng(3);
  const std::vector<Image> imgs = {random_image(16, rng, 0, 40),
                                   random_image(16, rng, 210, 255)};
  const std::vector<int> labels = {0, 1};

  AttackConfig cfg;
  cfg.kind = AttackKind::Pgd;
  cfg.epsilon = 0.08;  // wide enough to hit the [0,1] wall from both ends
  cfg.alpha = 0.05;
  cfg.iters = 6;
  cfg.threat = ThreatMode::Direct;

  int calls = 0;
  IterateHook hook = [&](int t, const std::vector<std::vector<double>>& iters) {
    CHECK(t == calls);
    ++calls;
    for (std::size_t i = 0; i < iters.size(); ++i) {
      const auto& clean = imgs[i].pixels;
      for (std::size_t k = 0; k < iters[i].size(); ++k) {
        CHECK(iters[i][k] >= 0.0);
        CHECK(iters[i][k] <= 1.0);
        CHECK(std::abs(iters[i][k] - clean[k] / 255.0) <= cfg.epsilon);
      }
    }
  };
  craft_attacks(m, cfg, imgs, labels, nullptr, &hook);
  CHECK(calls == cfg.iters + 1);
}

TEST_CASE("crafting is deterministic") {
  const Model m = toy_cnn(16, 41);
  Rng rng(8);
  const std::vector<Image> imgs = {random_image(16, rng), random_image(16, rng)};
  const std::vector<int> labels = {1, 0};
  AttackConfig cfg;
  cfg.kind = AttackKind::Pgd;
  cfg.epsilon = 0.02;
  cfg.alpha = 0.01;
  cfg.iters = 4;
  cfg.threat = ThreatMode::Direct;
  const auto a = craft_attacks(m, cfg, imgs, labels);
  const auto b = craft_attacks(m, cfg, imgs, labels);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].adv_real == b[i].adv_real);
    CHECK(a[i].adversarial.pixels == b[i].adversarial.pixels);
  }
}

TEST_CASE("threat modes") {
  const Model m = toy_cnn(16, 55);
  Rng rng(21);
  const Image img = random_image(16, rng);

  int preprocess_calls = 0;
  Preprocess invert = [&](const Image& in) {
    ++preprocess_calls;
    Image out = in;
    for (auto& p : out.pixels) p = static_cast<std::uint8_t>(255 - p);
    return out;
  };

  SUBCASE("transfer ignores the defended pipeline entirely") {
    AttackConfig cfg;
    cfg.epsilon = 0.02;
    cfg.threat = ThreatMode::Transfer;
    const auto with = craft_attack(m, cfg, img, 0, &invert);
    const auto without = craft_attack(m, cfg, img, 0, nullptr);
    CHECK(preprocess_calls == 0);
    CHECK(with.adv_real == without.adv_real);
  }

  SUBCASE("bpda identity preprocessing reduces to the direct attack for one step") {
    Preprocess identity = [](const Image& in) { return in; };
    AttackConfig bpda;
    bpda.epsilon = 0.02;
    bpda.threat = ThreatMode::BpdaIdentity;
    AttackConfig direct = bpda;
    direct.threat = ThreatMode::Direct;
    const auto a = craft_attack(m, bpda, img, 0, &identity);
    const auto b = craft_attack(m, direct, img, 0, nullptr);
    CHECK(a.adv_real == b.adv_real);
  }

  SUBCASE("bpda consults the pipeline and it changes the result") {
    AttackConfig cfg;
    cfg.epsilon = 0.02;
    cfg.threat = ThreatMode::BpdaIdentity;
    const auto with = craft_attack(m, cfg, img, 0, &invert);
    CHECK(preprocess_calls == 1);
    const auto without = craft_attack(m, cfg, img, 0, nullptr);
    CHECK(with.adv_real != without.adv_real);
  }
}

TEST_CASE("attack success predicate") {
  // constructed probabilities
  CHECK(attack_success(0, 0.9, 0.1, 0.4, 0.6));
  CHECK_FALSE(attack_success(0, 0.9, 0.1, 0.7, 0.3));   // still classified correctly
  CHECK_FALSE(attack_success(0, 0.3, 0.7, 0.2, 0.8));   // clean already wrong
  CHECK_FALSE(attack_success(1, 0.5, 0.5, 0.5, 0.5));   // ties go to class 0
  CHECK(attack_success(1, 0.2, 0.8, 0.5, 0.5));

  const Model m = toy_cnn(8, 3);
  Rng rng(9);
  const Image img = random_image(8, rng);
  CHECK_FALSE(attack_success(m, img, img, 0));  // adv == clean can never flip
}

TEST_CASE("contract violations") {
  Model m = toy_cnn(8, 3);
  Rng rng(2);
  const Image img = random_image(8, rng);
  AttackConfig cfg;
  cfg.epsilon = 0.01;

  Model untrained = m;
  untrained.trained = false;
  CHECK_THROWS_AS(craft_attack(untrained, cfg, img, 0), StateError);
  CHECK_THROWS_AS(attack_success(untrained, img, img, 0), StateError);

  CHECK_THROWS_AS(craft_attacks(m, cfg, {img, img}, {0}), DimensionError);
  const Image wrong(4, 4, 0);
  CHECK_THROWS_AS(craft_attack(m, cfg, wrong, 0), DimensionError);
}

TEST_CASE("a strong iterative attack raises the loss almost everywhere") {
  ModelConfig cfg = ModelConfig::simple_cnn(8, 71);
  cfg.conv_layer_count = 0;
  cfg.channels = {};
  Model m = build_model(cfg);

  Rng rng(100);
  std::vector<Sample> data;
  for (int i = 0; i < 60; ++i) {
    const int label = i % 2;
    data.push_back({label == 0 ? random_image(8, rng, 0, 90) : random_image(8, rng, 165, 255),
                    label});
  }
  TrainConfig tc;
  tc.max_epochs = 12;
  tc.patience = 12;
  tc.learning_rate = 0.05;
  tc.batch_size = 8;
  train(m, data, tc);

  AttackConfig atk;
  atk.kind = AttackKind::Pgd;
  atk.epsilon = 0.3;
  atk.alpha = 0.1;
  atk.iters = 10;
  atk.threat = ThreatMode::Direct;

  int raised = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    const int label = i % 2;
    const Image img =
        label == 0 ? random_image(8, rng, 0, 90) : random_image(8, rng, 165, 255);
    const AttackOutcome out = craft_attack(m, atk, img, label);
    if (bce_loss(m, out.adversarial, label) > bce_loss(m, img, label)) ++raised;
    ++total;
  }
  CHECK(raised >= (total * 9) / 10);
}
