#include "sepipe/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "sepipe/errors.hpp"
#include "sepipe/rng.hpp"

namespace sepipe {

std::string to_string(ModelKind k) {
  return k == ModelKind::SimpleCnn ? "simple_cnn" : "toy_vit";
}

std::string to_string(HeadKind k) {
  return k == HeadKind::Softmax2Class ? "softmax_2class" : "sigmoid_1logit";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "simple_cnn" || s == "cnn") return ModelKind::SimpleCnn;
  if (s == "toy_vit" || s == "vit") return ModelKind::ToyVit;
  throw ConfigError("kind: unknown model kind '" + s + "'");
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "softmax_2class") return HeadKind::Softmax2Class;
  if (s == "sigmoid_1logit") return HeadKind::Sigmoid1Logit;
  throw ConfigError("head: unknown head kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_size < 1)
    throw ConfigError("input_size: must be positive, got " + std::to_string(input_size));
  if (num_classes != 2)
    throw ConfigError("num_classes: only 2-class models are supported, got " +
                      std::to_string(num_classes));
  if (kind == ModelKind::ToyVit) {
    if (patch_size < 1)
      throw ConfigError("patch_size: must be positive, got " + std::to_string(patch_size));
    if (input_size % patch_size != 0)
      throw ConfigError("patch_size: " + std::to_string(patch_size) +
                        " does not divide input_size " + std::to_string(input_size));
    if (layers < 1) throw ConfigError("layers: must be positive, got " + std::to_string(layers));
    if (hidden_size < 1)
      throw ConfigError("hidden_size: must be positive, got " + std::to_string(hidden_size));
    if (mlp_size < 1)
      throw ConfigError("mlp_size: must be positive, got " + std::to_string(mlp_size));
    if (heads < 1 || hidden_size % heads != 0)
      throw ConfigError("heads: hidden_size " + std::to_string(hidden_size) +
                        " not divisible by heads " + std::to_string(heads));
  } else {
    if (conv_layer_count < 0)
      throw ConfigError("conv_layer_count: must be non-negative, got " +
                        std::to_string(conv_layer_count));
    if (static_cast<int>(channels.size()) != conv_layer_count)
      throw ConfigError("channels: expected " + std::to_string(conv_layer_count) +
                        " entries, got " + std::to_string(channels.size()));
    for (int c : channels)
      if (c < 1) throw ConfigError("channels: must be positive, got " + std::to_string(c));
    int s = input_size;
    for (int i = 0; i < conv_layer_count; ++i) s = (s - 1) / 2 + 1;
    if (s < 1)
      throw ConfigError("conv_layer_count: input_size " + std::to_string(input_size) +
                        " collapses after " + std::to_string(conv_layer_count) +
                        " strided stages");
  }
}

ModelConfig ModelConfig::simple_cnn(int input_size, std::uint64_t seed) {
  ModelConfig c;
  c.kind = ModelKind::SimpleCnn;
  c.input_size = input_size;
  c.head = HeadKind::Sigmoid1Logit;
  c.seed = seed;
  return c;
}

ModelConfig ModelConfig::toy_vit(int input_size, std::uint64_t seed) {
  ModelConfig c;
  c.kind = ModelKind::ToyVit;
  c.input_size = input_size;
  c.head = HeadKind::Softmax2Class;
  c.seed = seed;
  return c;
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

const Param& Model::param(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p;
  throw IndexError("param: no parameter named '" + name + "'");
}

Param& Model::param(const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return p;
  throw IndexError("param: no parameter named '" + name + "'");
}

namespace {

int head_width(const ModelConfig& cfg) {
  return cfg.head == HeadKind::Softmax2Class ? 2 : 1;
}

int cnn_final_spatial(const ModelConfig& cfg) {
  int s = cfg.input_size;
  for (int i = 0; i < cfg.conv_layer_count; ++i) s = (s - 1) / 2 + 1;
  return s;
}

struct ParamBuilder {
  Rng rng;
  std::vector<Param> out;

  explicit ParamBuilder(std::uint64_t seed) : rng(seed) {}

  void he(const std::string& name, std::vector<int> shape, std::int64_t fan_in) {
    Tensor t = Tensor::zeros(shape);
    const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, sigma));
    out.push_back({name, std::move(t)});
  }

  void embedding(const std::string& name, std::vector<int> shape) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, 0.02));
    out.push_back({name, std::move(t)});
  }

  void constant(const std::string& name, std::vector<int> shape, float value) {
    out.push_back({name, Tensor::full(shape, value)});
  }
};

}  // namespace

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  ParamBuilder b(cfg.seed);
  const int out_w = head_width(cfg);
  if (cfg.kind == ModelKind::SimpleCnn) {
    int ch = 1;
    for (int i = 0; i < cfg.conv_layer_count; ++i) {
      const int oc = cfg.channels[static_cast<std::size_t>(i)];
      b.he("conv" + std::to_string(i) + ".weight", {oc, ch, 3, 3},
           static_cast<std::int64_t>(ch) * 9);
      b.constant("conv" + std::to_string(i) + ".bias", {oc}, 0.0f);
      ch = oc;
    }
    const int s = cnn_final_spatial(cfg);
    const int flat = ch * s * s;
    b.he("head.weight", {flat, out_w}, flat);
    b.constant("head.bias", {out_w}, 0.0f);
  } else {
    const int H = cfg.hidden_size, P = cfg.input_size / cfg.patch_size;
    const int seq = P * P + 1;
    b.he("patch.weight", {H, 1, cfg.patch_size, cfg.patch_size},
         static_cast<std::int64_t>(cfg.patch_size) * cfg.patch_size);
    b.constant("patch.bias", {H}, 0.0f);
    b.embedding("cls_token", {H});
    b.embedding("pos_embed", {seq, H});
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string pre = "block" + std::to_string(l) + ".";
      b.constant(pre + "ln1.gamma", {H}, 1.0f);
      b.constant(pre + "ln1.beta", {H}, 0.0f);
      for (const char* nm : {"wq", "wk", "wv", "wo"}) {
        b.he(pre + "attn." + nm, {H, H}, H);
        b.constant(pre + "attn.b" + std::string(1, nm[1]), {H}, 0.0f);
      }
      b.constant(pre + "ln2.gamma", {H}, 1.0f);
      b.constant(pre + "ln2.beta", {H}, 0.0f);
      b.he(pre + "mlp.fc1.weight", {H, cfg.mlp_size}, H);
      b.constant(pre + "mlp.fc1.bias", {cfg.mlp_size}, 0.0f);
      b.he(pre + "mlp.fc2.weight", {cfg.mlp_size, H}, cfg.mlp_size);
      b.constant(pre + "mlp.fc2.bias", {H}, 0.0f);
    }
    b.constant("final_norm.gamma", {H}, 1.0f);
    b.constant("final_norm.beta", {H}, 0.0f);
    b.he("head.weight", {H, out_w}, H);
    b.constant("head.bias", {out_w}, 0.0f);
  }
  Model m;
  m.config = cfg;
  m.params = std::move(b.out);
  return m;
}

template <typename T>
ForwardNodes<T> forward_nodes(GraphT<T>& g, const ModelConfig& cfg, int input,
                              const std::vector<int>& params) {
  const TensorT<T>& X = g.value(input);
  if (X.ndim() != 4 || X.dim(1) != 1 || X.dim(2) != cfg.input_size ||
      X.dim(3) != cfg.input_size)
    throw DimensionError("forward: batch " + X.shape_str() + " does not match input size " +
                         std::to_string(cfg.input_size));
  const int N = X.dim(0);
  std::size_t cursor = 0;
  auto take = [&]() {
    if (cursor >= params.size())
      throw ContractError("forward: parameter list exhausted after " +
                          std::to_string(params.size()) + " entries");
    return params[cursor++];
  };

  // function arguments are unsequenced, so every pair is pulled by name first
  auto take2 = [&]() {
    const int first = take();
    const int second = take();
    return std::pair<int, int>{first, second};
  };

  int logits = -1;
  if (cfg.kind == ModelKind::SimpleCnn) {
    int cur = input;
    int ch = 1;
    for (int i = 0; i < cfg.conv_layer_count; ++i) {
      const auto [w, bias] = take2();
      cur = g.relu(g.add_chan(g.conv2d(cur, w, 2, 1), bias));
      ch = cfg.channels[static_cast<std::size_t>(i)];
    }
    const int s = cnn_final_spatial(cfg);
    cur = g.reshape(cur, {N, ch * s * s});
    const auto [hw, hb] = take2();
    logits = dense(g, cur, hw, hb);
  } else {
    const int H = cfg.hidden_size, P = cfg.input_size / cfg.patch_size;
    const auto [pw, pb] = take2();
    int x = g.add_chan(g.conv2d(input, pw, cfg.patch_size, 0), pb);
    x = g.reshape(x, {N, H, P * P});
    x = g.transpose_last2(x);             // [N, P*P, H]
    x = g.prepend_token(x, take());       // class token
    x = g.add_seqmat(x, take());          // positional table
    const int seq = P * P + 1;
    const T eps = static_cast<T>(1e-5);
    for (int l = 0; l < cfg.layers; ++l) {
      const auto [g1, b1] = take2();
      int xn = g.layernorm(x, g1, b1, eps);
      AttentionParams<T> ap{take(), take(), take(), take(), take(), take(), take(), take()};
      x = g.add(x, multi_head_attention(g, xn, ap, cfg.heads).out);
      const auto [g2, b2] = take2();
      xn = g.layernorm(x, g2, b2, eps);
      int flat = g.reshape(xn, {N * seq, H});
      const auto [w1, c1] = take2();
      int h = g.gelu(dense(g, flat, w1, c1));
      const auto [w2, c2] = take2();
      int mlp = g.reshape(dense(g, h, w2, c2), {N, seq, H});
      x = g.add(x, mlp);
    }
    const auto [fg, fb] = take2();
    x = g.layernorm(x, fg, fb, eps);
    x = g.take_token(x, 0);
    const auto [hw, hb] = take2();
    logits = dense(g, x, hw, hb);
  }
  if (cursor != params.size())
    throw ContractError("forward: " + std::to_string(params.size()) + " parameters supplied, " +
                        std::to_string(cursor) + " consumed");

  ForwardNodes<T> f;
  f.logits = logits;
  f.probs = cfg.head == HeadKind::Softmax2Class ? g.softmax_lastdim(logits) : g.sigmoid(logits);
  return f;
}

template <typename T>
int loss_nodes(GraphT<T>& g, const ModelConfig& cfg, const ForwardNodes<T>& f,
               std::vector<int> labels) {
  if (cfg.head == HeadKind::Softmax2Class)
    return g.softmax_cross_entropy(f.logits, std::move(labels));
  // the single sigmoid output is P(class 0), so class 0 is the positive target
  for (int& y : labels) y = y == 0 ? 1 : 0;
  return g.sigmoid_bce(f.logits, std::move(labels));
}

Tensor image_batch(const std::vector<const Image*>& imgs, int input_size) {
  const int n = static_cast<int>(imgs.size());
  Tensor t = Tensor::zeros({n, 1, input_size, input_size});
  const std::int64_t px = static_cast<std::int64_t>(input_size) * input_size;
  for (int i = 0; i < n; ++i) {
    const Image& im = *imgs[static_cast<std::size_t>(i)];
    if (im.width != input_size || im.height != input_size)
      throw DimensionError("image " + std::to_string(im.width) + "x" +
                           std::to_string(im.height) + " does not match model input " +
                           std::to_string(input_size));
    float* dst = t.data.data() + i * px;
    for (std::int64_t k = 0; k < px; ++k)
      dst[k] = static_cast<float>(im.pixels[static_cast<std::size_t>(k)]) / 255.0f;
  }
  return t;
}

Tensor image_batch(const Image& img, int input_size) {
  return image_batch(std::vector<const Image*>{&img}, input_size);
}

namespace {

Tensor forward_values(const ModelConfig& cfg, const std::vector<Tensor>& theta,
                      const Tensor& batch) {
  Graph g;
  std::vector<int> pids;
  pids.reserve(theta.size());
  for (const Tensor& t : theta) pids.push_back(g.leaf(t));
  const int in = g.leaf(batch);
  return g.value(forward_nodes(g, cfg, in, pids).probs);
}

std::vector<Tensor> values_of(const std::vector<Param>& params) {
  std::vector<Tensor> v;
  v.reserve(params.size());
  for (const auto& p : params) v.push_back(p.value);
  return v;
}

// P(class 0) per row for either head
std::vector<double> p_class0(const Tensor& probs) {
  const int n = probs.dim(0);
  std::vector<double> p(static_cast<std::size_t>(n));
  const int w = probs.ndim() == 2 ? probs.dim(1) : 1;
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = probs.data[i * w];
  return p;
}

}  // namespace

Tensor forward(const Model& m, const Tensor& batch) {
  return forward_values(m.config, values_of(m.params), batch);
}

std::pair<double, double> prob_pair(const ModelConfig& cfg, const Tensor& probs, int row) {
  if (cfg.head == HeadKind::Softmax2Class)
    return {probs.data[static_cast<std::size_t>(row) * 2],
            probs.data[static_cast<std::size_t>(row) * 2 + 1]};
  const double p0 = probs.data[static_cast<std::size_t>(row)];
  return {p0, 1.0 - p0};
}

std::pair<double, double> predict_proba(const Model& m, const Image& img) {
  if (!m.trained) throw StateError("predict_proba: model has not been trained");
  return prob_pair(m.config, forward(m, image_batch(img, m.config.input_size)), 0);
}

template <typename T>
void radam_step(std::vector<TensorT<T>>& params, const std::vector<TensorT<T>>& grads,
                RAdamStateT<T>& state, double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size())
    throw DimensionError("radam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
  if (state.m.empty() && !params.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.push_back(TensorT<T>::zeros(p.shape));
      state.v.push_back(TensorT<T>::zeros(p.shape));
    }
  }
  if (state.m.size() != params.size())
    throw StateError("radam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors, got " + std::to_string(params.size()));

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double b1t = std::pow(beta1, t);
  const double b2t = std::pow(beta2, t);
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  const bool rectify = rho_t > 4.0;
  double rect = 0.0;
  if (rectify)
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]))
      throw DimensionError("radam_step: param " + params[i].shape_str() + " vs grad " +
                           grads[i].shape_str());
    TensorT<T>& p = params[i];
    TensorT<T>& m = state.m[i];
    TensorT<T>& v = state.v[i];
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double gj = grads[i].data[j];
      const double mj = beta1 * static_cast<double>(m.data[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v.data[j]) + (1.0 - beta2) * gj * gj;
      m.data[j] = static_cast<T>(mj);
      v.data[j] = static_cast<T>(vj);
      const double mhat = mj / (1.0 - b1t);
      double step;
      if (rectify)
        step = lr * rect * mhat / (std::sqrt(vj / (1.0 - b2t)) + eps);
      else
        step = lr * mhat;
      p.data[j] = static_cast<T>(static_cast<double>(p.data[j]) - step);
    }
  }
}

void TrainConfig::validate() const {
  if (max_epochs < 1)
    throw ConfigError("max_epochs: must be positive, got " + std::to_string(max_epochs));
  if (batch_size < 1)
    throw ConfigError("batch_size: must be positive, got " + std::to_string(batch_size));
  if (learning_rate < 0) throw ConfigError("learning_rate: must be non-negative");
  if (patience < 1)
    throw ConfigError("patience: must be positive, got " + std::to_string(patience));
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("val_fraction: must lie in (0,1)");
}

TrainHistory train(Model& m, const std::vector<Sample>& data, const TrainConfig& tc) {
  tc.validate();
  m.config.validate();
  if (data.empty()) throw DataError("train: dataset is empty");
  bool seen[2] = {false, false};
  for (const Sample& s : data) {
    if (s.label != 0 && s.label != 1)
      throw DataError("train: label " + std::to_string(s.label) + " outside [0, 2)");
    seen[s.label] = true;
  }
  if (!seen[0] || !seen[1]) throw DataError("train: dataset needs examples of both classes");

  const int n = static_cast<int>(data.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(tc.seed, "val-split"));
  split_rng.shuffle(order);
  int n_val = static_cast<int>(std::lround(n * tc.val_fraction));
  n_val = std::clamp(n_val, 1, n - 1);
  std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> tr_idx(order.begin() + n_val, order.end());

  std::vector<Tensor> theta = values_of(m.params);
  RAdamState opt;
  Rng shuffle_rng(derive_seed(tc.seed, "epoch-shuffle"));

  auto val_accuracy = [&]() {
    int correct = 0;
    const int chunk = 64;
    for (std::size_t at = 0; at < val_idx.size(); at += chunk) {
      std::vector<const Image*> imgs;
      for (std::size_t k = at; k < std::min(val_idx.size(), at + chunk); ++k)
        imgs.push_back(&data[static_cast<std::size_t>(val_idx[k])].image);
      const Tensor probs =
          forward_values(m.config, theta, image_batch(imgs, m.config.input_size));
      const std::vector<double> p0 = p_class0(probs);
      for (std::size_t k = 0; k < imgs.size(); ++k) {
        const int pred = p0[k] >= 0.5 ? 0 : 1;
        if (pred == data[static_cast<std::size_t>(val_idx[at + k])].label) ++correct;
      }
    }
    return static_cast<double>(correct) / static_cast<double>(val_idx.size());
  };

  TrainHistory hist;
  std::vector<Tensor> best = theta;
  int stale = 0;
  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    shuffle_rng.shuffle(tr_idx);
    double loss_sum = 0;
    for (std::size_t at = 0; at < tr_idx.size(); at += tc.batch_size) {
      std::vector<const Image*> imgs;
      std::vector<int> labels;
      for (std::size_t k = at; k < std::min(tr_idx.size(), at + tc.batch_size); ++k) {
        const Sample& s = data[static_cast<std::size_t>(tr_idx[k])];
        imgs.push_back(&s.image);
        labels.push_back(s.label);
      }
      Graph g;
      std::vector<int> pids;
      pids.reserve(theta.size());
      for (const Tensor& t : theta) {
        Tensor leafed = t;
        leafed.requires_grad = true;
        pids.push_back(g.leaf(std::move(leafed)));
      }
      const int in = g.leaf(image_batch(imgs, m.config.input_size));
      const auto f = forward_nodes(g, m.config, in, pids);
      const int loss = loss_nodes(g, m.config, f, labels);
      g.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(pids.size());
      for (std::size_t i = 0; i < pids.size(); ++i)
        grads.push_back(g.has_grad(pids[i]) ? g.grad(pids[i]) : Tensor::zeros(theta[i].shape));
      radam_step(theta, grads, opt, tc.learning_rate);
      loss_sum += static_cast<double>(g.value(loss).data[0]) * static_cast<double>(imgs.size());
    }

    EpochStats es;
    es.train_loss = loss_sum / static_cast<double>(tr_idx.size());
    es.val_accuracy = val_accuracy();
    hist.epochs.push_back(es);

    if (epoch == 0 || es.val_accuracy > hist.best_val_accuracy) {
      hist.best_val_accuracy = es.val_accuracy;
      hist.best_epoch = epoch;
      best = theta;
      stale = 0;
    } else if (++stale >= tc.patience) {
      break;
    }
  }

  for (std::size_t i = 0; i < m.params.size(); ++i) m.params[i].value = std::move(best[i]);
  m.trained = true;
  return hist;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["kind"] = to_string(c.kind);
  j["input_size"] = c.input_size;
  j["num_classes"] = c.num_classes;
  j["patch_size"] = c.patch_size;
  j["layers"] = c.layers;
  j["hidden_size"] = c.hidden_size;
  j["mlp_size"] = c.mlp_size;
  j["heads"] = c.heads;
  j["conv_layer_count"] = c.conv_layer_count;
  j["channels"] = c.channels;
  j["head"] = to_string(c.head);
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.input_size = j.at("input_size").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.layers = j.at("layers").get<int>();
  c.hidden_size = j.at("hidden_size").get<int>();
  c.mlp_size = j.at("mlp_size").get<int>();
  c.heads = j.at("heads").get<int>();
  c.conv_layer_count = j.at("conv_layer_count").get<int>();
  c.channels = j.at("channels").get<std::vector<int>>();
  c.head = head_kind_from_string(j.at("head").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::json j;
  j["format"] = "sepipe-checkpoint";
  j["version"] = 1;
  j["config"] = config_to_json(m.config);
  j["trained"] = m.trained;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : m.params) table.push_back({{"name", p.name}, {"shape", p.value.shape}});
  j["params"] = std::move(table);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << j.dump() << '\n';
  std::vector<unsigned char> buf;
  for (const auto& p : m.params) {
    buf.resize(p.value.data.size() * 4);
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &p.value.data[i], 4);
      buf[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
      buf[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
      buf[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
      buf[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw IoError(path + ": write failed");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path + ": missing checkpoint header");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw ParseError(path + ": invalid checkpoint header: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "sepipe-checkpoint")
      throw ParseError(path + ": not a checkpoint file");
    if (j.at("version").get<int>() != 1)
      throw ParseError(path + ": unsupported checkpoint version");

    Model m = build_model(config_from_json(j.at("config")));
    m.trained = j.at("trained").get<bool>();

    const nlohmann::json& table = j.at("params");
    if (table.size() != m.params.size())
      throw DataError(path + ": checkpoint lists " + std::to_string(table.size()) +
                      " parameters, architecture has " + std::to_string(m.params.size()));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      const auto& entry = table[i];
      if (entry.at("name").get<std::string>() != m.params[i].name ||
          entry.at("shape").get<std::vector<int>>() != m.params[i].value.shape)
        throw DataError(path + ": parameter " + std::to_string(i) +
                        " does not match the declared architecture");
    }

    std::vector<unsigned char> buf;
    for (auto& p : m.params) {
      buf.resize(p.value.data.size() * 4);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
      if (static_cast<std::size_t>(in.gcount()) != buf.size())
        throw ParseError(path + ": truncated parameter data at '" + p.name + "'");
      for (std::size_t i = 0; i < p.value.data.size(); ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(buf[i * 4]) |
                                   (static_cast<std::uint32_t>(buf[i * 4 + 1]) << 8) |
                                   (static_cast<std::uint32_t>(buf[i * 4 + 2]) << 16) |
                                   (static_cast<std::uint32_t>(buf[i * 4 + 3]) << 24);
        std::memcpy(&p.value.data[i], &bits, 4);
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": malformed checkpoint header: " + e.what());
  }
}

template ForwardNodes<float> forward_nodes<float>(GraphT<float>&, const ModelConfig&, int,
                                                  const std::vector<int>&);
template ForwardNodes<double> forward_nodes<double>(GraphT<double>&, const ModelConfig&, int,
                                                    const std::vector<int>&);
template int loss_nodes<float>(GraphT<float>&, const ModelConfig&, const ForwardNodes<float>&,
                               std::vector<int>);
template int loss_nodes<double>(GraphT<double>&, const ModelConfig&, const ForwardNodes<double>&,
                                std::vector<int>);
template void radam_step<float>(std::vector<TensorT<float>>&, const std::vector<TensorT<float>>&,
                                RAdamStateT<float>&, double, double, double, double);
template void radam_step<double>(std::vector<TensorT<double>>&,
                                 const std::vector<TensorT<double>>&, RAdamStateT<double>&,
                                 double, double, double, double);

}  // namespace sepipe
