#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinydistill/tensor.hpp"

namespace tinydistill {

template <typename T>
struct AttentionResult {
  TensorPtr<T> out;    // [rows, d_model]
  TensorPtr<T> probs;  // [batch*heads, L, L] when captured, else null
};

// Reverse-mode tape. Operations execute eagerly and, when any input requires
// a gradient, append a node; define-by-run guarantees the tape order is a
// topological order, so backward() walks it in exact reverse. A second
// backward on the same tape without recording new work is rejected.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Recording toggle: a disabled graph runs pure inference (teacher passes).
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t i) const { return nodes_[i].op; }

  // ----- elementwise / structural -----
  TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b);
  TensorPtr<T> mul(const TensorPtr<T>& a, const TensorPtr<T>& b);
  TensorPtr<T> scale(const TensorPtr<T>& x, T s);
  TensorPtr<T> silu(const TensorPtr<T>& x);
  TensorPtr<T> gather_rows(const TensorPtr<T>& x, std::vector<int> rows);

  // ----- dense algebra -----
  // [M,K] x [K,N] -> [M,N]
  TensorPtr<T> matmul(const TensorPtr<T>& a, const TensorPtr<T>& b);
  // table [V,d], ids in [0,V) -> [len(ids), d]
  TensorPtr<T> embedding(const TensorPtr<T>& table, std::vector<int> ids);

  // ----- normalization / position -----
  // Row-wise RMS normalization with learned gain: y = x / rms(x) * gain.
  TensorPtr<T> rms_norm(const TensorPtr<T>& x, const TensorPtr<T>& gain);
  // Rotary position encoding applied per head; row r has position r % seq_len.
  TensorPtr<T> rope(const TensorPtr<T>& x, int n_heads, int seq_len, double base);

  // ----- attention -----
  // Causal self-attention over `batch` independent sequences of length
  // seq_len stacked row-wise ([batch*L, d]). Scores use 1/sqrt(head_dim);
  // masked (future) probabilities are exact zeros. When capture_probs is set
  // the post-softmax maps are returned as a graph tensor so losses on them
  // backpropagate into the scores.
  AttentionResult<T> causal_attention(const TensorPtr<T>& q, const TensorPtr<T>& k,
                                      const TensorPtr<T>& v, int n_heads, int seq_len,
                                      bool capture_probs);

  // ----- distributions / losses -----
  // Numerically safe softmax (max subtraction) along `axis`.
  TensorPtr<T> softmax(const TensorPtr<T>& x, int axis);
  // Mean KL(p||q) over all slices along `axis`. Validates each slice of both
  // inputs sums to 1 within 1e-5. 0*log(0) on the p side contributes zero;
  // q is clamped at 1e-9 inside the log.
  TensorPtr<T> kl_divergence(const TensorPtr<T>& p, const TensorPtr<T>& q, int axis);
  // Mean over rows of 1 - cos(a_row, b_row). A zero-norm row contributes
  // distance 1 with zero gradient.
  TensorPtr<T> cosine_distance(const TensorPtr<T>& a, const TensorPtr<T>& b);
  // Mean over rows of -log softmax(logits)[target].
  TensorPtr<T> cross_entropy(const TensorPtr<T>& logits, std::vector<int> targets);
  // Scalar combination sum_i coeff_i * term_i (terms must be scalars).
  TensorPtr<T> sum_scaled(const std::vector<std::pair<T, TensorPtr<T>>>& terms);

  // Seeds d(loss)/d(loss)=1 and walks the tape in reverse creation order,
  // accumulating into .grad of every tensor that requires one. loss must be
  // a scalar produced while this graph was recording.
  void backward(const TensorPtr<T>& loss);

 private:
  struct Node {
    std::string op;
    TensorPtr<T> output;
    TensorPtr<T> aux;  // optional second output (attention maps)
    std::function<void()> grad_fn;
  };

  TensorPtr<T> result(const char* op, std::vector<int> shape,
                      std::initializer_list<TensorPtr<T>> inputs);
  void record(const char* op, const TensorPtr<T>& out, std::function<void()> fn);

  std::vector<Node> nodes_;
  bool recording_ = true;
  bool backward_taken_ = false;
};

// Free-function spelling of Graph::backward.
template <typename T>
void backward(const TensorPtr<T>& loss, Graph<T>& graph) {
  graph.backward(loss);
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace tinydistill
