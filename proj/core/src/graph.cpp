#include "sepipe/graph.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>

namespace sepipe {

namespace {

std::vector<std::int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<std::int64_t> s(shape.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = acc;
    acc *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

template <typename T>
TensorT<T> transpose_copy(const TensorT<T>& a, int ax0, int ax1) {
  std::vector<int> oshape = a.shape;
  std::swap(oshape[static_cast<std::size_t>(ax0)], oshape[static_cast<std::size_t>(ax1)]);
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const auto istr = strides_of(a.shape);
  const auto ostr = strides_of(oshape);
  const int nd = a.ndim();
  std::vector<int> c(static_cast<std::size_t>(nd), 0);
  const std::int64_t n = a.numel();
  for (std::int64_t idx = 0; idx < n; ++idx) {
    std::int64_t rem = idx;
    for (int d = 0; d < nd; ++d) {
      c[static_cast<std::size_t>(d)] = static_cast<int>(rem / istr[static_cast<std::size_t>(d)]);
      rem %= istr[static_cast<std::size_t>(d)];
    }
    std::swap(c[static_cast<std::size_t>(ax0)], c[static_cast<std::size_t>(ax1)]);
    std::int64_t oidx = 0;
    for (int d = 0; d < nd; ++d) oidx += c[static_cast<std::size_t>(d)] * ostr[static_cast<std::size_t>(d)];
    out.data[static_cast<std::size_t>(oidx)] = a.data[static_cast<std::size_t>(idx)];
  }
  return out;
}

// out[n,m] += A[n,k] * B[k,m]
template <typename T>
void matmul_acc(const T* a, const T* b, T* out, int n, int k, int m) {
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::ptrdiff_t>(p) * m;
      T* orow = out + static_cast<std::ptrdiff_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
}

}  // namespace

template <typename T>
int GraphT<T>::push(NodeT<T> n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
const NodeT<T>& GraphT<T>::at(int id) const {
  if (id < 0 || id >= size())
    throw IndexError("graph node id " + std::to_string(id) + " out of range (size " +
                     std::to_string(size()) + ")");
  return nodes_[static_cast<std::size_t>(id)];
}

template <typename T>
NodeT<T>& GraphT<T>::at(int id) {
  return const_cast<NodeT<T>&>(static_cast<const GraphT<T>*>(this)->at(id));
}

template <typename T>
const TensorT<T>& GraphT<T>::value(int id) const {
  return at(id).value;
}

template <typename T>
const TensorT<T>& GraphT<T>::grad(int id) const {
  const NodeT<T>& n = at(id);
  if (!backward_done_) throw StateError("grad() queried before backward()");
  if (n.grad.data.empty())
    throw StateError("node " + std::to_string(id) + " has no gradient (not on the loss path)");
  return n.grad;
}

template <typename T>
bool GraphT<T>::has_grad(int id) const {
  return backward_done_ && !at(id).grad.data.empty();
}

template <typename T>
int GraphT<T>::leaf(TensorT<T> t) {
  NodeT<T> n;
  n.op = Op::Leaf;
  n.need_grad = t.requires_grad;
  n.value = std::move(t);
  return push(std::move(n));
}

#define SEPIPE_BIN_PROLOGUE(opname)                                        \
  const TensorT<T>& A = at(a).value;                                       \
  const TensorT<T>& B = at(b).value;                                       \
  NodeT<T> n;                                                              \
  n.op = opname;                                                           \
  n.inputs = {a, b};                                                       \
  n.need_grad = at(a).need_grad || at(b).need_grad;

#define SEPIPE_UN_PROLOGUE(opname)                                         \
  const TensorT<T>& A = at(a).value;                                       \
  NodeT<T> n;                                                              \
  n.op = opname;                                                           \
  n.inputs = {a};                                                          \
  n.need_grad = at(a).need_grad;

template <typename T>
int GraphT<T>::add(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::Add)
  if (!A.same_shape(B))
    throw DimensionError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  n.value = A;
  for (std::size_t i = 0; i < B.data.size(); ++i) n.value.data[i] += B.data[i];
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::mul(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::Mul)
  if (!A.same_shape(B))
    throw DimensionError("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  n.value = A;
  for (std::size_t i = 0; i < B.data.size(); ++i) n.value.data[i] *= B.data[i];
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::scale(int a, T s) {
  SEPIPE_UN_PROLOGUE(Op::Scale)
  n.scalar = s;
  n.value = A;
  for (T& v : n.value.data) v *= s;
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::add_rowvec(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::AddRowVec)
  if (A.ndim() != 2 || B.ndim() != 1 || A.dim(1) != B.dim(0))
    throw DimensionError("add_rowvec: " + A.shape_str() + " vs " + B.shape_str());
  n.value = A;
  const int rows = A.dim(0), cols = A.dim(1);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) n.value.data[static_cast<std::size_t>(r) * cols + c] += B.data[static_cast<std::size_t>(c)];
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::add_chan(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::AddChan)
  if (A.ndim() != 4 || B.ndim() != 1 || A.dim(1) != B.dim(0))
    throw DimensionError("add_chan: " + A.shape_str() + " vs " + B.shape_str());
  n.value = A;
  const int N = A.dim(0), C = A.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(A.dim(2)) * A.dim(3);
  std::size_t idx = 0;
  for (int im = 0; im < N; ++im)
    for (int c = 0; c < C; ++c)
      for (std::int64_t k = 0; k < hw; ++k) n.value.data[idx++] += B.data[static_cast<std::size_t>(c)];
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::add_seqmat(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::AddSeqMat)
  if (A.ndim() != 3 || B.ndim() != 2 || A.dim(1) != B.dim(0) || A.dim(2) != B.dim(1))
    throw DimensionError("add_seqmat: " + A.shape_str() + " vs " + B.shape_str());
  n.value = A;
  const std::size_t sd = B.data.size();
  for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += B.data[i % sd];
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::matmul(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::MatMul)
  if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
    throw DimensionError("matmul: inner dimensions disagree, " + A.shape_str() + " vs " +
                         B.shape_str());
  n.value = TensorT<T>::zeros({A.dim(0), B.dim(1)});
  matmul_acc(A.data.data(), B.data.data(), n.value.data.data(), A.dim(0), A.dim(1), B.dim(1));
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::bmm(int a, int b) {
  SEPIPE_BIN_PROLOGUE(Op::Bmm)
  if (A.ndim() != 3 || B.ndim() != 3 || A.dim(0) != B.dim(0) || A.dim(2) != B.dim(1))
    throw DimensionError("bmm: " + A.shape_str() + " vs " + B.shape_str());
  const int batches = A.dim(0), rows = A.dim(1), inner = A.dim(2), cols = B.dim(2);
  n.value = TensorT<T>::zeros({batches, rows, cols});
  for (int k = 0; k < batches; ++k)
    matmul_acc(A.data.data() + static_cast<std::ptrdiff_t>(k) * rows * inner,
               B.data.data() + static_cast<std::ptrdiff_t>(k) * inner * cols,
               n.value.data.data() + static_cast<std::ptrdiff_t>(k) * rows * cols, rows, inner,
               cols);
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::transpose(int a, int ax0, int ax1) {
  SEPIPE_UN_PROLOGUE(Op::Transpose)
  const int nd = A.ndim();
  if (ax0 < 0 || ax1 < 0 || ax0 >= nd || ax1 >= nd || ax0 == ax1)
    throw ContractError("transpose: bad axes " + std::to_string(ax0) + "," + std::to_string(ax1) +
                        " for " + A.shape_str());
  n.i0 = ax0;
  n.i1 = ax1;
  n.value = transpose_copy(A, ax0, ax1);
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::transpose_last2(int a) {
  const int nd = at(a).value.ndim();
  if (nd < 2) throw DimensionError("transpose_last2 needs >=2 dims, got " + at(a).value.shape_str());
  return transpose(a, nd - 2, nd - 1);
}

template <typename T>
int GraphT<T>::reshape(int a, std::vector<int> shape) {
  SEPIPE_UN_PROLOGUE(Op::Reshape)
  if (TensorT<T>::numel_of(shape) != A.numel()) {
    std::string want = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      want += (i ? "x" : "") + std::to_string(shape[i]);
    throw DimensionError("reshape: cannot view " + A.shape_str() + " as " + want + "]");
  }
  n.value = TensorT<T>(std::move(shape), A.data);
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::conv2d(int x, int w, int stride, int pad) {
  const TensorT<T>& X = at(x).value;
  const TensorT<T>& W = at(w).value;
  NodeT<T> n;
  n.op = Op::Conv2d;
  n.inputs = {x, w};
  n.need_grad = at(x).need_grad || at(w).need_grad;
  if (stride < 1) throw ContractError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (pad < 0) throw ContractError("conv2d: padding must be non-negative, got " + std::to_string(pad));
  if (X.ndim() != 4 || W.ndim() != 4 || X.dim(1) != W.dim(1))
    throw DimensionError("conv2d: input " + X.shape_str() + " incompatible with kernel " +
                         W.shape_str());
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  const int O = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  const int ho = (H + 2 * pad - kh) / stride + 1;
  const int wo = (Wd + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || Wd + 2 * pad < kw || ho <= 0 || wo <= 0)
    throw DimensionError("conv2d: kernel " + W.shape_str() + " does not fit input " +
                         X.shape_str() + " with pad " + std::to_string(pad));
  n.i0 = stride;
  n.i1 = pad;
  n.value = TensorT<T>::zeros({N, O, ho, wo});
  for (int im = 0; im < N; ++im)
    for (int o = 0; o < O; ++o)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          T acc = 0;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < kh; ++u) {
              const int yy = i * stride - pad + u;
              if (yy < 0 || yy >= H) continue;
              for (int v = 0; v < kw; ++v) {
                const int xx = j * stride - pad + v;
                if (xx < 0 || xx >= Wd) continue;
                acc += X.data[((static_cast<std::size_t>(im) * C + c) * H + yy) * Wd + xx] *
                       W.data[((static_cast<std::size_t>(o) * C + c) * kh + u) * kw + v];
              }
            }
          n.value.data[((static_cast<std::size_t>(im) * O + o) * ho + i) * wo + j] = acc;
        }
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::relu(int a) {
  SEPIPE_UN_PROLOGUE(Op::Relu)
  n.value = A;
  for (T& v : n.value.data)
    if (v < T(0)) v = T(0);
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::gelu(int a) {
  SEPIPE_UN_PROLOGUE(Op::Gelu)
  n.value = A;
  const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  for (T& v : n.value.data) {
    const T u = k * (v + T(0.044715) * v * v * v);
    v = T(0.5) * v * (T(1) + std::tanh(u));
  }
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::sigmoid(int a) {
  SEPIPE_UN_PROLOGUE(Op::Sigmoid)
  n.value = A;
  // keep the output strictly inside (0,1) even where exp saturates
  const T lo = std::nextafter(T(0), T(1));
  const T hi = std::nextafter(T(1), T(0));
  for (T& v : n.value.data) v = std::min(std::max(T(1) / (T(1) + std::exp(-v)), lo), hi);
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::layernorm(int x, int gamma, int beta, T eps) {
  const TensorT<T>& X = at(x).value;
  const TensorT<T>& G = at(gamma).value;
  const TensorT<T>& B = at(beta).value;
  NodeT<T> n;
  n.op = Op::LayerNorm;
  n.inputs = {x, gamma, beta};
  n.need_grad = at(x).need_grad || at(gamma).need_grad || at(beta).need_grad;
  n.scalar = eps;
  const int h = X.dim(X.ndim() - 1);
  if (G.ndim() != 1 || B.ndim() != 1 || G.dim(0) != h || B.dim(0) != h)
    throw DimensionError("layernorm: feature size " + std::to_string(h) + " vs gamma " +
                         G.shape_str() + ", beta " + B.shape_str());
  const std::int64_t rows = X.numel() / h;
  n.value = X;
  n.cache.resize(static_cast<std::size_t>(rows) * 2);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = X.data.data() + r * h;
    T mu = 0;
    for (int j = 0; j < h; ++j) mu += row[j];
    mu /= static_cast<T>(h);
    T var = 0;
    for (int j = 0; j < h; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(h);
    const T rstd = T(1) / std::sqrt(var + eps);
    n.cache[static_cast<std::size_t>(r) * 2] = mu;
    n.cache[static_cast<std::size_t>(r) * 2 + 1] = rstd;
    T* out = n.value.data.data() + r * h;
    for (int j = 0; j < h; ++j)
      out[j] = G.data[static_cast<std::size_t>(j)] * (row[j] - mu) * rstd + B.data[static_cast<std::size_t>(j)];
  }
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::softmax_lastdim(int a) {
  SEPIPE_UN_PROLOGUE(Op::SoftmaxLastDim)
  const int h = A.dim(A.ndim() - 1);
  const std::int64_t rows = A.numel() / h;
  n.value = A;
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = n.value.data.data() + r * h;
    T mx = row[0];
    for (int j = 1; j < h; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (int j = 0; j < h; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (int j = 0; j < h; ++j) row[j] /= denom;
  }
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::softmax_cross_entropy(int logits, std::vector<int> labels) {
  const TensorT<T>& Z = at(logits).value;
  NodeT<T> n;
  n.op = Op::SoftmaxCrossEntropy;
  n.inputs = {logits};
  n.need_grad = at(logits).need_grad;
  if (Z.ndim() != 2)
    throw DimensionError("softmax_cross_entropy: logits must be 2-D, got " + Z.shape_str());
  const int N = Z.dim(0), C = Z.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
  for (int y : labels)
    if (y < 0 || y >= C)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(C) + ")");
  n.cache.resize(Z.data.size());
  T total = 0;
  for (int i = 0; i < N; ++i) {
    const T* row = Z.data.data() + static_cast<std::ptrdiff_t>(i) * C;
    T mx = row[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    T denom = 0;
    for (int j = 0; j < C; ++j) denom += std::exp(row[j] - mx);
    const T lse = mx + std::log(denom);
    for (int j = 0; j < C; ++j)
      n.cache[static_cast<std::size_t>(i) * C + j] = std::exp(row[j] - mx) / denom;
    total += lse - row[labels[static_cast<std::size_t>(i)]];
  }
  n.ints = std::move(labels);
  n.value = TensorT<T>::scalar(total / static_cast<T>(N));
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::binary_cross_entropy(int probs, std::vector<int> labels) {
  const TensorT<T>& P = at(probs).value;
  NodeT<T> n;
  n.op = Op::BinaryCrossEntropy;
  n.inputs = {probs};
  n.need_grad = at(probs).need_grad;
  const bool ok_shape = P.ndim() == 1 || (P.ndim() == 2 && P.dim(1) == 1);
  if (!ok_shape)
    throw DimensionError("binary_cross_entropy: probs must be [N] or [N,1], got " + P.shape_str());
  const int N = P.dim(0);
  if (static_cast<int>(labels.size()) != N)
    throw DimensionError("binary_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
  for (int y : labels)
    if (y != 0 && y != 1)
      throw ContractError("binary_cross_entropy: label must be 0 or 1, got " + std::to_string(y));
  const T eps = static_cast<T>(1e-7);
  T total = 0;
  for (int i = 0; i < N; ++i) {
    T p = P.data[static_cast<std::size_t>(i)];
    p = std::min(std::max(p, eps), T(1) - eps);
    total += labels[static_cast<std::size_t>(i)] == 1 ? -std::log(p) : -std::log(T(1) - p);
  }
  n.ints = std::move(labels);
  n.value = TensorT<T>::scalar(total / static_cast<T>(N));
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::sigmoid_bce(int logits, std::vector<int> labels) {
  const TensorT<T>& Z = at(logits).value;
  NodeT<T> n;
  n.op = Op::SigmoidBce;
  n.inputs = {logits};
  n.need_grad = at(logits).need_grad;
  const bool ok_shape = Z.ndim() == 1 || (Z.ndim() == 2 && Z.dim(1) == 1);
  if (!ok_shape)
    throw DimensionError("sigmoid_bce: logits must be [N] or [N,1], got " + Z.shape_str());
  const int N = Z.dim(0);
  if (static_cast<int>(labels.size()) != N)
    throw DimensionError("sigmoid_bce: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(N));
  for (int y : labels)
    if (y != 0 && y != 1)
      throw ContractError("sigmoid_bce: label must be 0 or 1, got " + std::to_string(y));
  T total = 0;
  for (int i = 0; i < N; ++i) {
    const T z = Z.data[static_cast<std::size_t>(i)];
    const T y = static_cast<T>(labels[static_cast<std::size_t>(i)]);
    // softplus(z) - y*z, written so exp never overflows
    total += std::max(z, T(0)) - y * z + std::log1p(std::exp(-std::abs(z)));
  }
  n.ints = std::move(labels);
  n.value = TensorT<T>::scalar(total / static_cast<T>(N));
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::prepend_token(int x, int tok) {
  const TensorT<T>& X = at(x).value;
  const TensorT<T>& Tk = at(tok).value;
  NodeT<T> n;
  n.op = Op::PrependToken;
  n.inputs = {x, tok};
  n.need_grad = at(x).need_grad || at(tok).need_grad;
  if (X.ndim() != 3 || Tk.ndim() != 1 || Tk.dim(0) != X.dim(2))
    throw DimensionError("prepend_token: " + X.shape_str() + " vs " + Tk.shape_str());
  const int N = X.dim(0), S = X.dim(1), D = X.dim(2);
  n.value = TensorT<T>::zeros({N, S + 1, D});
  for (int im = 0; im < N; ++im) {
    T* dst = n.value.data.data() + static_cast<std::ptrdiff_t>(im) * (S + 1) * D;
    for (int d = 0; d < D; ++d) dst[d] = Tk.data[static_cast<std::size_t>(d)];
    const T* src = X.data.data() + static_cast<std::ptrdiff_t>(im) * S * D;
    for (std::int64_t k = 0; k < static_cast<std::int64_t>(S) * D; ++k) dst[D + k] = src[k];
  }
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::take_token(int x, int t) {
  const TensorT<T>& X = at(x).value;
  NodeT<T> n;
  n.op = Op::TakeToken;
  n.inputs = {x};
  n.need_grad = at(x).need_grad;
  if (X.ndim() != 3) throw DimensionError("take_token: expected [N,S,D], got " + X.shape_str());
  const int N = X.dim(0), S = X.dim(1), D = X.dim(2);
  if (t < 0 || t >= S)
    throw IndexError("take_token: index " + std::to_string(t) + " outside [0, " +
                     std::to_string(S) + ")");
  n.i0 = t;
  n.value = TensorT<T>::zeros({N, D});
  for (int im = 0; im < N; ++im)
    for (int d = 0; d < D; ++d)
      n.value.data[static_cast<std::size_t>(im) * D + d] =
          X.data[(static_cast<std::size_t>(im) * S + t) * D + d];
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::sum(int a) {
  SEPIPE_UN_PROLOGUE(Op::Sum)
  T total = 0;
  for (T v : A.data) total += v;
  n.value = TensorT<T>::scalar(total);
  return push(std::move(n));
}

template <typename T>
int GraphT<T>::mean(int a) {
  SEPIPE_UN_PROLOGUE(Op::Mean)
  T total = 0;
  for (T v : A.data) total += v;
  n.value = TensorT<T>::scalar(total / static_cast<T>(A.numel()));
  return push(std::move(n));
}

template <typename T>
void GraphT<T>::backward(int loss) {
  const NodeT<T>& L = at(loss);
  if (L.value.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + L.value.shape_str());
  if (backward_done_) throw StateError("backward already ran on this graph");
  backward_done_ = true;
  if (!L.need_grad) return;
  at(loss).grad = TensorT<T>::full(L.value.shape, T(1));
  for (int id = loss; id >= 0; --id) {
    NodeT<T>& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.need_grad || n.grad.data.empty() || n.op == Op::Leaf) continue;
    accumulate(id, n);
  }
}

template <typename T>
void GraphT<T>::accumulate(int /*id*/, const NodeT<T>& n) {
  auto gref = [&](int i) -> TensorT<T>& {
    NodeT<T>& m = nodes_[static_cast<std::size_t>(i)];
    if (m.grad.data.empty()) m.grad = TensorT<T>::zeros(m.value.shape);
    return m.grad;
  };
  auto wants = [&](int i) { return nodes_[static_cast<std::size_t>(i)].need_grad; };
  auto val = [&](int i) -> const TensorT<T>& { return nodes_[static_cast<std::size_t>(i)].value; };

  const TensorT<T>& go = n.grad;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add: {
      for (int k = 0; k < 2; ++k) {
        const int in = n.inputs[static_cast<std::size_t>(k)];
        if (!wants(in)) continue;
        TensorT<T>& g = gref(in);
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i];
      }
      break;
    }
    case Op::Mul: {
      const int a = n.inputs[0], b = n.inputs[1];
      if (wants(a)) {
        TensorT<T>& g = gref(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i] * val(b).data[i];
      }
      if (wants(b)) {
        TensorT<T>& g = gref(b);
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i] * val(a).data[i];
      }
      break;
    }
    case Op::Scale: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += n.scalar * go.data[i];
      break;
    }
    case Op::AddRowVec: {
      const int a = n.inputs[0], b = n.inputs[1];
      const int rows = go.dim(0), cols = go.dim(1);
      if (wants(a)) {
        TensorT<T>& g = gref(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i];
      }
      if (wants(b)) {
        TensorT<T>& g = gref(b);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            g.data[static_cast<std::size_t>(c)] += go.data[static_cast<std::size_t>(r) * cols + c];
      }
      break;
    }
    case Op::AddChan: {
      const int a = n.inputs[0], b = n.inputs[1];
      if (wants(a)) {
        TensorT<T>& g = gref(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i];
      }
      if (wants(b)) {
        TensorT<T>& g = gref(b);
        const int N = go.dim(0), C = go.dim(1);
        const std::int64_t hw = static_cast<std::int64_t>(go.dim(2)) * go.dim(3);
        std::size_t idx = 0;
        for (int im = 0; im < N; ++im)
          for (int c = 0; c < C; ++c)
            for (std::int64_t k = 0; k < hw; ++k) g.data[static_cast<std::size_t>(c)] += go.data[idx++];
      }
      break;
    }
    case Op::AddSeqMat: {
      const int a = n.inputs[0], b = n.inputs[1];
      if (wants(a)) {
        TensorT<T>& g = gref(a);
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i];
      }
      if (wants(b)) {
        TensorT<T>& g = gref(b);
        const std::size_t sd = g.data.size();
        for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i % sd] += go.data[i];
      }
      break;
    }
    case Op::MatMul: {
      const int a = n.inputs[0], b = n.inputs[1];
      const TensorT<T>& A = val(a);
      const TensorT<T>& B = val(b);
      const int N = A.dim(0), K = A.dim(1), M = B.dim(1);
      if (wants(a)) {
        TensorT<T>& g = gref(a);
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < M; ++j) {
            const T gv = go.data[static_cast<std::size_t>(i) * M + j];
            if (gv == T(0)) continue;
            for (int k = 0; k < K; ++k)
              g.data[static_cast<std::size_t>(i) * K + k] += gv * B.data[static_cast<std::size_t>(k) * M + j];
          }
      }
      if (wants(b)) {
        TensorT<T>& g = gref(b);
        for (int i = 0; i < N; ++i)
          for (int k = 0; k < K; ++k) {
            const T av = A.data[static_cast<std::size_t>(i) * K + k];
            if (av == T(0)) continue;
            for (int j = 0; j < M; ++j)
              g.data[static_cast<std::size_t>(k) * M + j] += av * go.data[static_cast<std::size_t>(i) * M + j];
          }
      }
      break;
    }
    case Op::Bmm: {
      const int a = n.inputs[0], b = n.inputs[1];
      const TensorT<T>& A = val(a);
      const TensorT<T>& B = val(b);
      const int batches = A.dim(0), N = A.dim(1), K = A.dim(2), M = B.dim(2);
      for (int bt = 0; bt < batches; ++bt) {
        const T* ap = A.data.data() + static_cast<std::ptrdiff_t>(bt) * N * K;
        const T* bp = B.data.data() + static_cast<std::ptrdiff_t>(bt) * K * M;
        const T* gp = go.data.data() + static_cast<std::ptrdiff_t>(bt) * N * M;
        if (wants(a)) {
          T* g = gref(a).data.data() + static_cast<std::ptrdiff_t>(bt) * N * K;
          for (int i = 0; i < N; ++i)
            for (int j = 0; j < M; ++j) {
              const T gv = gp[i * M + j];
              if (gv == T(0)) continue;
              for (int k = 0; k < K; ++k) g[i * K + k] += gv * bp[k * M + j];
            }
        }
        if (wants(b)) {
          T* g = gref(b).data.data() + static_cast<std::ptrdiff_t>(bt) * K * M;
          for (int i = 0; i < N; ++i)
            for (int k = 0; k < K; ++k) {
              const T av = ap[i * K + k];
              if (av == T(0)) continue;
              for (int j = 0; j < M; ++j) g[k * M + j] += av * gp[i * M + j];
            }
        }
      }
      break;
    }
    case Op::Transpose: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T> gt = transpose_copy(go, n.i0, n.i1);
      TensorT<T>& g = gref(a);
      for (std::size_t i = 0; i < gt.data.size(); ++i) g.data[i] += gt.data[i];
      break;
    }
    case Op::Reshape: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i];
      break;
    }
    case Op::Conv2d: {
      const int x = n.inputs[0], w = n.inputs[1];
      const TensorT<T>& X = val(x);
      const TensorT<T>& W = val(w);
      const int stride = n.i0, pad = n.i1;
      const int N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
      const int O = W.dim(0), kh = W.dim(2), kw = W.dim(3);
      const int ho = go.dim(2), wo = go.dim(3);
      const bool gx = wants(x), gw = wants(w);
      T* gxd = gx ? gref(x).data.data() : nullptr;
      T* gwd = gw ? gref(w).data.data() : nullptr;
      for (int im = 0; im < N; ++im)
        for (int o = 0; o < O; ++o)
          for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
              const T gv = go.data[((static_cast<std::size_t>(im) * O + o) * ho + i) * wo + j];
              if (gv == T(0)) continue;
              for (int c = 0; c < C; ++c)
                for (int u = 0; u < kh; ++u) {
                  const int yy = i * stride - pad + u;
                  if (yy < 0 || yy >= H) continue;
                  for (int v = 0; v < kw; ++v) {
                    const int xx = j * stride - pad + v;
                    if (xx < 0 || xx >= Wd) continue;
                    const std::size_t xi = ((static_cast<std::size_t>(im) * C + c) * H + yy) * Wd + xx;
                    const std::size_t wi = ((static_cast<std::size_t>(o) * C + c) * kh + u) * kw + v;
                    if (gx) gxd[xi] += gv * W.data[wi];
                    if (gw) gwd[wi] += gv * X.data[xi];
                  }
                }
            }
      break;
    }
    case Op::Relu: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const TensorT<T>& A = val(a);
      for (std::size_t i = 0; i < go.data.size(); ++i)
        if (A.data[i] > T(0)) g.data[i] += go.data[i];
      break;
    }
    case Op::Gelu: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const TensorT<T>& A = val(a);
      const T k = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
      for (std::size_t i = 0; i < go.data.size(); ++i) {
        const T xv = A.data[i];
        const T u = k * (xv + T(0.044715) * xv * xv * xv);
        const T th = std::tanh(u);
        const T du = k * (T(1) + T(3) * T(0.044715) * xv * xv);
        const T d = T(0.5) * (T(1) + th) + T(0.5) * xv * (T(1) - th * th) * du;
        g.data[i] += go.data[i] * d;
      }
      break;
    }
    case Op::Sigmoid: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      for (std::size_t i = 0; i < go.data.size(); ++i) {
        const T s = n.value.data[i];
        g.data[i] += go.data[i] * s * (T(1) - s);
      }
      break;
    }
    case Op::LayerNorm: {
      const int x = n.inputs[0], gamma = n.inputs[1], beta = n.inputs[2];
      const TensorT<T>& X = val(x);
      const TensorT<T>& G = val(gamma);
      const int h = X.dim(X.ndim() - 1);
      const std::int64_t rows = X.numel() / h;
      const bool wx = wants(x), wg = wants(gamma), wb = wants(beta);
      T* gx = wx ? gref(x).data.data() : nullptr;
      T* gg = wg ? gref(gamma).data.data() : nullptr;
      T* gb = wb ? gref(beta).data.data() : nullptr;
      std::vector<T> xhat(static_cast<std::size_t>(h));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T mu = n.cache[static_cast<std::size_t>(r) * 2];
        const T rstd = n.cache[static_cast<std::size_t>(r) * 2 + 1];
        const T* xr = X.data.data() + r * h;
        const T* dy = go.data.data() + r * h;
        for (int j = 0; j < h; ++j) xhat[static_cast<std::size_t>(j)] = (xr[j] - mu) * rstd;
        if (wg)
          for (int j = 0; j < h; ++j) gg[j] += dy[j] * xhat[static_cast<std::size_t>(j)];
        if (wb)
          for (int j = 0; j < h; ++j) gb[j] += dy[j];
        if (wx) {
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (int j = 0; j < h; ++j) {
            const T dxh = dy[j] * G.data[static_cast<std::size_t>(j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[static_cast<std::size_t>(j)];
          }
          mean_dxh /= static_cast<T>(h);
          mean_dxh_xh /= static_cast<T>(h);
          for (int j = 0; j < h; ++j) {
            const T dxh = dy[j] * G.data[static_cast<std::size_t>(j)];
            gx[r * h + j] += rstd * (dxh - mean_dxh - xhat[static_cast<std::size_t>(j)] * mean_dxh_xh);
          }
        }
      }
      break;
    }
    case Op::SoftmaxLastDim: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const int h = n.value.dim(n.value.ndim() - 1);
      const std::int64_t rows = n.value.numel() / h;
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* y = n.value.data.data() + r * h;
        const T* dy = go.data.data() + r * h;
        T dot = 0;
        for (int j = 0; j < h; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < h; ++j) g.data[static_cast<std::size_t>(r * h + j)] += y[j] * (dy[j] - dot);
      }
      break;
    }
    case Op::SoftmaxCrossEntropy: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const int N = val(a).dim(0), C = val(a).dim(1);
      const T g0 = go.data[0] / static_cast<T>(N);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < C; ++j) {
          T p = n.cache[static_cast<std::size_t>(i) * C + j];
          if (j == n.ints[static_cast<std::size_t>(i)]) p -= T(1);
          g.data[static_cast<std::size_t>(i) * C + j] += g0 * p;
        }
      break;
    }
    case Op::BinaryCrossEntropy: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const TensorT<T>& P = val(a);
      const int N = P.dim(0);
      const T eps = static_cast<T>(1e-7);
      const T g0 = go.data[0] / static_cast<T>(N);
      for (int i = 0; i < N; ++i) {
        const T p = P.data[static_cast<std::size_t>(i)];
        if (p <= eps || p >= T(1) - eps) continue;  // clamp region is flat
        const T y = static_cast<T>(n.ints[static_cast<std::size_t>(i)]);
        g.data[static_cast<std::size_t>(i)] += g0 * (p - y) / (p * (T(1) - p));
      }
      break;
    }
    case Op::SigmoidBce: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const TensorT<T>& Z = val(a);
      const int N = Z.dim(0);
      const T g0 = go.data[0] / static_cast<T>(N);
      for (int i = 0; i < N; ++i) {
        const T z = Z.data[static_cast<std::size_t>(i)];
        const T s = T(1) / (T(1) + std::exp(-z));
        const T y = static_cast<T>(n.ints[static_cast<std::size_t>(i)]);
        g.data[static_cast<std::size_t>(i)] += g0 * (s - y);
      }
      break;
    }
    case Op::PrependToken: {
      const int x = n.inputs[0], tok = n.inputs[1];
      const int N = go.dim(0), S1 = go.dim(1), D = go.dim(2);
      const int S = S1 - 1;
      if (wants(tok)) {
        TensorT<T>& g = gref(tok);
        for (int im = 0; im < N; ++im)
          for (int d = 0; d < D; ++d)
            g.data[static_cast<std::size_t>(d)] += go.data[static_cast<std::size_t>(im) * S1 * D + d];
      }
      if (wants(x)) {
        TensorT<T>& g = gref(x);
        for (int im = 0; im < N; ++im) {
          const T* src = go.data.data() + static_cast<std::ptrdiff_t>(im) * S1 * D + D;
          T* dst = g.data.data() + static_cast<std::ptrdiff_t>(im) * S * D;
          for (std::int64_t k = 0; k < static_cast<std::int64_t>(S) * D; ++k) dst[k] += src[k];
        }
      }
      break;
    }
    case Op::TakeToken: {
      const int x = n.inputs[0];
      if (!wants(x)) break;
      TensorT<T>& g = gref(x);
      const int N = val(x).dim(0), S = val(x).dim(1), D = val(x).dim(2);
      for (int im = 0; im < N; ++im)
        for (int d = 0; d < D; ++d)
          g.data[(static_cast<std::size_t>(im) * S + n.i0) * D + d] +=
              go.data[static_cast<std::size_t>(im) * D + d];
      break;
    }
    case Op::Sum: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const T g0 = go.data[0];
      for (T& v : g.data) v += g0;
      break;
    }
    case Op::Mean: {
      const int a = n.inputs[0];
      if (!wants(a)) break;
      TensorT<T>& g = gref(a);
      const T g0 = go.data[0] / static_cast<T>(g.numel());
      for (T& v : g.data) v += g0;
      break;
    }
  }
}

#undef SEPIPE_BIN_PROLOGUE
#undef SEPIPE_UN_PROLOGUE

template <typename T>
AttentionOut<T> multi_head_attention(GraphT<T>& g, int x, const AttentionParams<T>& p,
                                     int heads) {
  const TensorT<T>& X = g.value(x);
  if (X.ndim() != 3)
    throw DimensionError("multi_head_attention: expected [N,T,H], got " + X.shape_str());
  const int N = X.dim(0), seq = X.dim(1), H = X.dim(2);
  if (heads < 1 || H % heads != 0)
    throw ConfigError("multi_head_attention: width " + std::to_string(H) +
                      " not divisible by heads " + std::to_string(heads));
  const int dh = H / heads;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  auto project = [&](int w, int b) {
    int flat = g.reshape(x, {N * seq, H});
    int y = dense(g, flat, w, b);
    int r = g.reshape(y, {N, seq, heads, dh});
    int s = g.transpose(r, 1, 2);  // [N, heads, seq, dh]
    return g.reshape(s, {N * heads, seq, dh});
  };
  const int q = project(p.wq, p.bq);
  const int k = project(p.wk, p.bk);
  const int v = project(p.wv, p.bv);

  const int scores = g.scale(g.bmm(q, g.transpose_last2(k)), att_scale);
  const int weights = g.softmax_lastdim(scores);  // [N*heads, seq, seq]
  const int ctx = g.bmm(weights, v);

  int c = g.reshape(ctx, {N, heads, seq, dh});
  c = g.transpose(c, 1, 2);
  c = g.reshape(c, {N * seq, H});
  const int out = g.reshape(dense(g, c, p.wo, p.bo), {N, seq, H});
  return {out, g.reshape(weights, {N, heads, seq, seq})};
}

template class GraphT<float>;
template class GraphT<double>;
template AttentionOut<float> multi_head_attention(GraphT<float>&, int,
                                                  const AttentionParams<float>&, int);
template AttentionOut<double> multi_head_attention(GraphT<double>&, int,
                                                   const AttentionParams<double>&, int);

}  // namespace sepipe
