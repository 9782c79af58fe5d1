#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinydistill/graph.hpp"
#include "tinydistill/tensor.hpp"

namespace tinydistill {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 0;
  int n_layers = 0;
  int d_ff = 0;
  int max_seq_len = 0;
  double rope_base = 10000.0;

  void validate() const;
  bool same_width(const ModelConfig& o) const {
    return vocab_size == o.vocab_size && d_model == o.d_model && n_heads == o.n_heads &&
           d_ff == o.d_ff && max_seq_len == o.max_seq_len && rope_base == o.rope_base;
  }
};

// Pre-norm decoder block: RMS-normed causal attention and a SwiGLU
// feed-forward, each wrapped in a residual. No biases, no dropout.
// The lora_* slots are null unless an adapter is attached (see distill.hpp);
// when present, q/v projections become W x + scale * B(A x).
template <typename T>
struct Block {
  TensorPtr<T> wq, wk, wv, wo;          // [d, d]
  TensorPtr<T> w_gate, w_up;            // [d, d_ff]
  TensorPtr<T> w_down;                  // [d_ff, d]
  TensorPtr<T> attn_norm, ff_norm;      // [d]
  TensorPtr<T> lora_qa, lora_qb;        // [d, r], [r, d]
  TensorPtr<T> lora_va, lora_vb;
};

template <typename T>
struct TransformerLM {
  ModelConfig config;
  TensorPtr<T> tok_emb;     // [vocab, d]
  std::vector<Block<T>> blocks;
  TensorPtr<T> final_norm;  // [d]
  TensorPtr<T> lm_head;     // [d, vocab]
  double lora_scale = 0.0;  // nonzero only while an adapter is attached

  TransformerLM() = default;
  TransformerLM(TransformerLM&&) noexcept = default;
  TransformerLM& operator=(TransformerLM&&) noexcept = default;
  TransformerLM(const TransformerLM&) = delete;  // use clone(): params are shared_ptrs
  TransformerLM& operator=(const TransformerLM&) = delete;

  // Fresh model: weights ~ N(0, 0.02), norm gains 1.
  static TransformerLM random_init(const ModelConfig& cfg, std::uint64_t seed);

  TransformerLM clone() const;

  // Stable-order (name, tensor) listing; checkpoint and optimizer order.
  std::vector<std::pair<std::string, TensorPtr<T>>> named_parameters() const;
  // Parameters with requires_grad set, in named order.
  std::vector<TensorPtr<T>> trainable_parameters() const;

  std::int64_t parameter_count() const;
  static std::int64_t count_parameters(const ModelConfig& cfg);

  bool has_lora() const;
};

struct CaptureFlags {
  bool hidden = false;
  bool attention = false;
};

// hidden_states[l] is the post-block residual stream of layer l,
// [positions, d_model] (batched: [batch*L, d_model]). attention_maps[l] is
// the post-softmax map [heads, L, L] (batched: [batch*heads, L, L]).
template <typename T>
struct ForwardTrace {
  std::vector<TensorPtr<T>> hidden_states;
  std::vector<TensorPtr<T>> attention_maps;
  TensorPtr<T> logits;
  int batch = 1;
  int seq_len = 0;
};

// Forward over `batch` sequences of length seq_len stacked row-wise.
template <typename T>
ForwardTrace<T> forward_batch(const TransformerLM<T>& model, std::span<const int> tokens,
                              int batch, int seq_len, CaptureFlags capture, Graph<T>& graph);

template <typename T>
ForwardTrace<T> forward(const TransformerLM<T>& model, std::span<const int> tokens,
                        CaptureFlags capture, Graph<T>& graph);

// Inference-only convenience: runs on a non-recording graph.
template <typename T>
ForwardTrace<T> forward(const TransformerLM<T>& model, std::span<const int> tokens,
                        CaptureFlags capture = {});

// log P(tokens[i] | tokens[0..i-1]) for i in [1, len); length len-1.
template <typename T>
std::vector<double> position_logprobs(const TransformerLM<T>& model, std::span<const int> tokens);

// Sum of position_logprobs: log-probability of the sequence given its first
// token. Requires at least 2 tokens.
template <typename T>
double sequence_logprob(const TransformerLM<T>& model, std::span<const int> tokens);

// Autoregressive sampling. temperature == 0 is greedy argmax (lowest index
// wins ties); otherwise samples from softmax(logits / temperature) with a
// dedicated seeded stream.
template <typename T>
std::vector<int> generate(const TransformerLM<T>& model, std::span<const int> prompt,
                          int n_new_tokens, double temperature, std::uint64_t seed);

extern template struct TransformerLM<float>;
extern template struct TransformerLM<double>;

}  // namespace tinydistill
