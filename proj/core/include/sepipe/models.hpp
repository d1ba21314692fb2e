#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sepipe/graph.hpp"
#include "sepipe/image.hpp"
#include "sepipe/tensor.hpp"

namespace sepipe {

enum class ModelKind { SimpleCnn, ToyVit };
enum class HeadKind { Softmax2Class, Sigmoid1Logit };

std::string to_string(ModelKind k);
std::string to_string(HeadKind k);
ModelKind model_kind_from_string(const std::string& s);
HeadKind head_kind_from_string(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::SimpleCnn;
  int input_size = 64;
  int num_classes = 2;

  // transformer fields
  int patch_size = 8;
  int layers = 4;
  int hidden_size = 64;
  int mlp_size = 128;
  int heads = 4;

  // cnn fields; channels.size() must equal conv_layer_count.
  // conv_layer_count = 0 degenerates to a plain logistic regression on pixels,
  // which is handy when a closed-form score is needed.
  int conv_layer_count = 4;
  std::vector<int> channels = {8, 16, 32, 64};

  HeadKind head = HeadKind::Sigmoid1Logit;
  std::uint64_t seed = 0;

  void validate() const;

  static ModelConfig simple_cnn(int input_size = 64, std::uint64_t seed = 0);
  static ModelConfig toy_vit(int input_size = 64, std::uint64_t seed = 0);
};

struct Param {
  std::string name;
  Tensor value;
};

struct Model {
  ModelConfig config;
  std::vector<Param> params;
  bool trained = false;

  std::int64_t param_count() const;
  const Param& param(const std::string& name) const;
  Param& param(const std::string& name);
};

// Deterministic He/embedding initialization from config.seed.
Model build_model(const ModelConfig& cfg);

// Records the forward pass on an existing graph. `input` must hold
// [N,1,S,S] and `params` one leaf per model parameter, in model order.
// Returns ids for the pre-head logits and the probability output
// ([N,2] rows for the softmax head, [N,1] P(class 0) for the sigmoid head).
template <typename T>
struct ForwardNodes {
  int logits = -1;
  int probs = -1;
};

template <typename T>
ForwardNodes<T> forward_nodes(GraphT<T>& g, const ModelConfig& cfg, int input,
                              const std::vector<int>& params);

// Appends the training loss for the model's head: cross-entropy on logits for
// softmax, fused sigmoid+BCE on the logit otherwise. Labels are class indices.
template <typename T>
int loss_nodes(GraphT<T>& g, const ModelConfig& cfg, const ForwardNodes<T>& f,
               std::vector<int> labels);

// Probabilities for a batch [N,1,S,S] scaled to [0,1].
Tensor forward(const Model& m, const Tensor& batch);

// (P(class 0), P(class 1)) for one image. Requires a trained model.
std::pair<double, double> predict_proba(const Model& m, const Image& img);

// row of a probability tensor as a complementary pair
std::pair<double, double> prob_pair(const ModelConfig& cfg, const Tensor& probs, int row);

Tensor image_batch(const std::vector<const Image*>& imgs, int input_size);
Tensor image_batch(const Image& img, int input_size);

template <typename T>
struct RAdamStateT {
  std::vector<TensorT<T>> m, v;
  int t = 0;
};
using RAdamState = RAdamStateT<float>;

// Rectified Adam. Moment bias correction follows Adam; the variance term is
// rectified once its estimated SMA length exceeds 4, before that the update
// falls back to the plain first moment.
template <typename T>
void radam_step(std::vector<TensorT<T>>& params, const std::vector<TensorT<T>>& grads,
                RAdamStateT<T>& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

struct Sample {
  Image image;
  int label = 0;
};

struct TrainConfig {
  int max_epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  int patience = 3;          // epochs without val improvement before stopping
  double val_fraction = 0.1; // carved off the front of a seeded shuffle
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  double train_loss = 0;
  double val_accuracy = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // index into epochs
  double best_val_accuracy = 0;
};

// Trains in place and leaves the parameters of the best validation epoch.
TrainHistory train(Model& m, const std::vector<Sample>& data, const TrainConfig& tc);

// Header line of JSON (config + parameter table) followed by raw
// little-endian float32 data, so round-trips are bit-exact.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

extern template ForwardNodes<float> forward_nodes<float>(GraphT<float>&, const ModelConfig&, int,
                                                         const std::vector<int>&);
extern template ForwardNodes<double> forward_nodes<double>(GraphT<double>&, const ModelConfig&,
                                                           int, const std::vector<int>&);
extern template int loss_nodes<float>(GraphT<float>&, const ModelConfig&,
                                      const ForwardNodes<float>&, std::vector<int>);
extern template int loss_nodes<double>(GraphT<double>&, const ModelConfig&,
                                       const ForwardNodes<double>&, std::vector<int>);
extern template void radam_step<float>(std::vector<TensorT<float>>&,
                                       const std::vector<TensorT<float>>&, RAdamStateT<float>&,
                                       double, double, double, double);
extern template void radam_step<double>(std::vector<TensorT<double>>&,
                                        const std::vector<TensorT<double>>&, RAdamStateT<double>&,
                                        double, double, double, double);

}  // namespace sepipe
