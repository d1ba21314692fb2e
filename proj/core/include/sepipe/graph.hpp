#pragma once

#include <vector>

#include "sepipe/tensor.hpp"

namespace sepipe {

enum class Op {
  Leaf,
  Add,
  Mul,
  Scale,
  AddRowVec,
  AddChan,
  AddSeqMat,
  MatMul,
  Bmm,
  Transpose,
  Reshape,
  Conv2d,
  Relu,
  Gelu,
  Sigmoid,
  LayerNorm,
  SoftmaxLastDim,
  SoftmaxCrossEntropy,
  BinaryCrossEntropy,
  SigmoidBce,
  PrependToken,
  TakeToken,
  Sum,
  Mean,
};

template <typename T>
struct NodeT {
  Op op = Op::Leaf;
  std::vector<int> inputs;
  TensorT<T> value;
  TensorT<T> grad;  // empty until backward touches this node
  bool need_grad = false;
  int i0 = 0, i1 = 0;     // stride/pad, transpose axes, token index
  T scalar = T(0);        // scale factor, layernorm eps
  std::vector<int> ints;  // class labels
  std::vector<T> cache;   // saved forward intermediates for backward
};

// Recorded tape. Node ids are indices into the tape; inputs always precede
// their consumers, so one reverse sweep is a valid backward pass.
template <typename T>
class GraphT {
 public:
  int leaf(TensorT<T> t);

  int add(int a, int b);    // same shape
  int mul(int a, int b);    // same shape, elementwise
  int scale(int a, T s);
  int add_rowvec(int m, int v);  // [N,M] + [M]
  int add_chan(int x, int b);    // [N,C,H,W] + [C]
  int add_seqmat(int x, int p);  // [N,S,D] + [S,D]

  int matmul(int a, int b);  // [N,K]x[K,M]
  int bmm(int a, int b);     // [B,N,K]x[B,K,M]
  int transpose(int a, int ax0, int ax1);
  int transpose_last2(int a);
  int reshape(int a, std::vector<int> shape);

  int conv2d(int x, int w, int stride, int pad);  // NCHW x OIHW, cross-correlation

  int relu(int a);
  int gelu(int a);  // tanh approximation
  int sigmoid(int a);
  int layernorm(int x, int gamma, int beta, T eps);
  int softmax_lastdim(int a);

  int softmax_cross_entropy(int logits, std::vector<int> labels);  // mean over batch
  int binary_cross_entropy(int probs, std::vector<int> labels);    // probs [N] or [N,1]
  int sigmoid_bce(int logits, std::vector<int> labels);            // fused, stable at saturation

  int prepend_token(int x, int tok);  // [N,S,D], [D] -> [N,S+1,D]
  int take_token(int x, int t);       // [N,S,D] -> [N,D]
  int sum(int a);
  int mean(int a);

  void backward(int loss);

  const TensorT<T>& value(int id) const;
  const TensorT<T>& grad(int id) const;
  bool has_grad(int id) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  int push(NodeT<T> n);
  const NodeT<T>& at(int id) const;
  NodeT<T>& at(int id);
  void accumulate(int id, const NodeT<T>& out);  // scatter out.grad into inputs

  std::vector<NodeT<T>> nodes_;
  bool backward_done_ = false;
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

extern template class GraphT<float>;
extern template class GraphT<double>;

// input x [N,D], weight [D,K], bias [K] -> [N,K]
template <typename T>
int dense(GraphT<T>& g, int x, int w, int b) {
  return g.add_rowvec(g.matmul(x, w), b);
}

template <typename T>
struct AttentionParams {
  int wq, bq, wk, bk, wv, bv, wo, bo;  // node ids; weights [H,H], biases [H]
};

template <typename T>
struct AttentionOut {
  int out;      // [N,T,H]
  int weights;  // [N,heads,T,T], rows sum to 1
};

template <typename T>
AttentionOut<T> multi_head_attention(GraphT<T>& g, int x, const AttentionParams<T>& p,
                                     int heads);

extern template AttentionOut<float> multi_head_attention(GraphT<float>&, int,
                                                         const AttentionParams<float>&, int);
extern template AttentionOut<double> multi_head_attention(GraphT<double>&, int,
                                                          const AttentionParams<double>&, int);

}  // namespace sepipe
