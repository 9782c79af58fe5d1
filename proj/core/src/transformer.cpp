#include "tinydistill/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "tinydistill/rng.hpp"

namespace tinydistill {

void ModelConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("model: vocab_size must be positive");
  if (d_model <= 0) throw ConfigError("model: d_model must be positive");
  if (n_heads <= 0) throw ConfigError("model: n_heads must be positive");
  if (n_layers <= 0) throw ConfigError("model: n_layers must be positive");
  if (d_ff <= 0) throw ConfigError("model: d_ff must be positive");
  if (max_seq_len <= 0) throw ConfigError("model: max_seq_len must be positive");
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
  if ((d_model / n_heads) % 2 != 0) throw ConfigError("model: head dimension must be even");
  if (rope_base <= 1.0) throw ConfigError("model: rope_base must exceed 1");
}

template <typename T>
TransformerLM<T> TransformerLM<T>::random_init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  constexpr T kStd = T(0.02);
  Rng rng(seed);
  TransformerLM<T> m;
  m.config = cfg;
  m.tok_emb = make_param<T>({cfg.vocab_size, cfg.d_model}, kStd, rng);
  m.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& b : m.blocks) {
    b.wq = make_param<T>({cfg.d_model, cfg.d_model}, kStd, rng);
    b.wk = make_param<T>({cfg.d_model, cfg.d_model}, kStd, rng);
    b.wv = make_param<T>({cfg.d_model, cfg.d_model}, kStd, rng);
    b.wo = make_param<T>({cfg.d_model, cfg.d_model}, kStd, rng);
    b.w_gate = make_param<T>({cfg.d_model, cfg.d_ff}, kStd, rng);
    b.w_up = make_param<T>({cfg.d_model, cfg.d_ff}, kStd, rng);
    b.w_down = make_param<T>({cfg.d_ff, cfg.d_model}, kStd, rng);
    b.attn_norm = make_ones<T>({cfg.d_model});
    b.ff_norm = make_ones<T>({cfg.d_model});
  }
  m.final_norm = make_ones<T>({cfg.d_model});
  m.lm_head = make_param<T>({cfg.d_model, cfg.vocab_size}, kStd, rng);
  return m;
}

namespace {

template <typename T>
TensorPtr<T> copy_tensor(const TensorPtr<T>& t) {
  if (!t) return nullptr;
  auto c = std::make_shared<Tensor<T>>();
  c->shape = t->shape;
  c->data = t->data;
  c->requires_grad = t->requires_grad;
  return c;
}

}  // namespace

template <typename T>
TransformerLM<T> TransformerLM<T>::clone() const {
  TransformerLM<T> m;
  m.config = config;
  m.lora_scale = lora_scale;
  m.tok_emb = copy_tensor(tok_emb);
  m.blocks.resize(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    auto& c = m.blocks[i];
    c.wq = copy_tensor(b.wq);
    c.wk = copy_tensor(b.wk);
    c.wv = copy_tensor(b.wv);
    c.wo = copy_tensor(b.wo);
    c.w_gate = copy_tensor(b.w_gate);
    c.w_up = copy_tensor(b.w_up);
    c.w_down = copy_tensor(b.w_down);
    c.attn_norm = copy_tensor(b.attn_norm);
    c.ff_norm = copy_tensor(b.ff_norm);
    c.lora_qa = copy_tensor(b.lora_qa);
    c.lora_qb = copy_tensor(b.lora_qb);
    c.lora_va = copy_tensor(b.lora_va);
    c.lora_vb = copy_tensor(b.lora_vb);
  }
  m.final_norm = copy_tensor(final_norm);
  m.lm_head = copy_tensor(lm_head);
  return m;
}

template <typename T>
std::vector<std::pair<std::string, TensorPtr<T>>> TransformerLM<T>::named_parameters() const {
  std::vector<std::pair<std::string, TensorPtr<T>>> out;
  out.emplace_back("tok_emb", tok_emb);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    out.emplace_back(p + "wq", b.wq);
    out.emplace_back(p + "wk", b.wk);
    out.emplace_back(p + "wv", b.wv);
    out.emplace_back(p + "wo", b.wo);
    out.emplace_back(p + "w_gate", b.w_gate);
    out.emplace_back(p + "w_up", b.w_up);
    out.emplace_back(p + "w_down", b.w_down);
    out.emplace_back(p + "attn_norm", b.attn_norm);
    out.emplace_back(p + "ff_norm", b.ff_norm);
    if (b.lora_qa) {
      out.emplace_back(p + "lora_q.a", b.lora_qa);
      out.emplace_back(p + "lora_q.b", b.lora_qb);
    }
    if (b.lora_va) {
      out.emplace_back(p + "lora_v.a", b.lora_va);
      out.emplace_back(p + "lora_v.b", b.lora_vb);
    }
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("lm_head", lm_head);
  return out;
}

template <typename T>
std::vector<TensorPtr<T>> TransformerLM<T>::trainable_parameters() const {
  std::vector<TensorPtr<T>> out;
  for (auto& [name, t] : named_parameters())
    if (t->requires_grad) out.push_back(t);
  return out;
}

template <typename T>
std::int64_t TransformerLM<T>::parameter_count() const {
  std::int64_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t->numel();
  return n;
}

template <typename T>
std::int64_t TransformerLM<T>::count_parameters(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model, v = cfg.vocab_size, f = cfg.d_ff;
  return v * d + cfg.n_layers * (4 * d * d + 3 * d * f + 2 * d) + d + d * v;
}

template <typename T>
bool TransformerLM<T>::has_lora() const {
  for (const auto& b : blocks)
    if (b.lora_qa || b.lora_va) return true;
  return false;
}

// ===== forward =====

template <typename T>
ForwardTrace<T> forward_batch(const TransformerLM<T>& model, std::span<const int> tokens,
                              int batch, int seq_len, CaptureFlags capture, Graph<T>& graph) {
  const ModelConfig& cfg = model.config;
  if (batch <= 0 || seq_len <= 0) throw UsageError("forward: batch and seq_len must be positive");
  if (static_cast<std::int64_t>(tokens.size()) != static_cast<std::int64_t>(batch) * seq_len)
    throw ShapeError("forward: token count does not equal batch * seq_len");
  if (seq_len > cfg.max_seq_len)
    throw LengthError("forward: sequence length " + std::to_string(seq_len) +
                      " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) throw DomainError("forward: token id out of range");

  ForwardTrace<T> trace;
  trace.batch = batch;
  trace.seq_len = seq_len;

  const T lscale = static_cast<T>(model.lora_scale);
  auto project = [&](const TensorPtr<T>& x, const TensorPtr<T>& w, const TensorPtr<T>& la,
                     const TensorPtr<T>& lb) {
    auto y = graph.matmul(x, w);
    if (la) y = graph.add(y, graph.scale(graph.matmul(graph.matmul(x, la), lb), lscale));
    return y;
  };

  auto x = graph.embedding(model.tok_emb, std::vector<int>(tokens.begin(), tokens.end()));
  for (const auto& b : model.blocks) {
    auto a = graph.rms_norm(x, b.attn_norm);
    auto q = project(a, b.wq, b.lora_qa, b.lora_qb);
    auto k = graph.matmul(a, b.wk);
    auto v = project(a, b.wv, b.lora_va, b.lora_vb);
    q = graph.rope(q, cfg.n_heads, seq_len, cfg.rope_base);
    k = graph.rope(k, cfg.n_heads, seq_len, cfg.rope_base);
    auto att = graph.causal_attention(q, k, v, cfg.n_heads, seq_len, capture.attention);
    x = graph.add(x, graph.matmul(att.out, b.wo));
    auto f = graph.rms_norm(x, b.ff_norm);
    auto ff = graph.matmul(graph.mul(graph.silu(graph.matmul(f, b.w_gate)), graph.matmul(f, b.w_up)),
                           b.w_down);
    x = graph.add(x, ff);
    if (capture.hidden) trace.hidden_states.push_back(x);
    if (capture.attention) trace.attention_maps.push_back(att.probs);
  }
  trace.logits = graph.matmul(graph.rms_norm(x, model.final_norm), model.lm_head);
  return trace;
}

template <typename T>
ForwardTrace<T> forward(const TransformerLM<T>& model, std::span<const int> tokens,
                        CaptureFlags capture, Graph<T>& graph) {
  return forward_batch(model, tokens, 1, static_cast<int>(tokens.size()), capture, graph);
}

template <typename T>
ForwardTrace<T> forward(const TransformerLM<T>& model, std::span<const int> tokens,
                        CaptureFlags capture) {
  Graph<T> graph;
  graph.set_recording(false);
  return forward(model, tokens, capture, graph);
}

// ===== scoring / sampling =====

namespace {

// log softmax(row)[id] computed in double with max subtraction.
template <typename T>
double row_logprob(const T* row, int v, int id) {
  T mx = row[0];
  for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
  double denom = 0.0;
  for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
  return static_cast<double>(row[id] - mx) - std::log(denom);
}

}  // namespace

template <typename T>
std::vector<double> position_logprobs(const TransformerLM<T>& model, std::span<const int> tokens) {
  if (tokens.size() < 2)
    throw UsageError("position_logprobs: need at least 2 tokens to score a transition");
  auto trace = forward(model, tokens);
  const int v = model.config.vocab_size;
  std::vector<double> out(tokens.size() - 1);
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const T* row = trace.logits->data.data() + static_cast<std::int64_t>(i - 1) * v;
    out[i - 1] = row_logprob(row, v, tokens[i]);
  }
  return out;
}

template <typename T>
double sequence_logprob(const TransformerLM<T>& model, std::span<const int> tokens) {
  double acc = 0.0;
  for (double lp : position_logprobs(model, tokens)) acc += lp;
  return acc;
}

template <typename T>
std::vector<int> generate(const TransformerLM<T>& model, std::span<const int> prompt,
                          int n_new_tokens, double temperature, std::uint64_t seed) {
  if (prompt.empty()) throw UsageError("generate: prompt must be non-empty");
  if (n_new_tokens < 0) throw DomainError("generate: n_new_tokens must be non-negative");
  if (temperature < 0.0) throw DomainError("generate: temperature must be non-negative");
  if (static_cast<int>(prompt.size()) + n_new_tokens > model.config.max_seq_len)
    throw LengthError("generate: prompt plus new tokens exceeds max_seq_len");
  std::vector<int> seq(prompt.begin(), prompt.end());
  const int v = model.config.vocab_size;
  Rng rng(seed);
  std::vector<double> probs(static_cast<std::size_t>(v));
  for (int step = 0; step < n_new_tokens; ++step) {
    auto trace = forward(model, std::span<const int>(seq));
    const T* row = trace.logits->data.data() + static_cast<std::int64_t>(seq.size() - 1) * v;
    int next = 0;
    if (temperature == 0.0) {
      for (int j = 1; j < v; ++j)
        if (row[j] > row[next]) next = j;  // strict: lowest index wins ties
    } else {
      double mx = -1e300;
      for (int j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]) / temperature);
      double denom = 0.0;
      for (int j = 0; j < v; ++j) {
        probs[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(row[j]) / temperature - mx);
        denom += probs[static_cast<std::size_t>(j)];
      }
      for (auto& p : probs) p /= denom;
      next = static_cast<int>(rng.categorical(probs));
    }
    seq.push_back(next);
  }
  return seq;
}

// ===== explicit instantiations =====

template struct TransformerLM<float>;
template struct TransformerLM<double>;

template ForwardTrace<float> forward_batch(const TransformerLM<float>&, std::span<const int>, int,
                                           int, CaptureFlags, Graph<float>&);
template ForwardTrace<double> forward_batch(const TransformerLM<double>&, std::span<const int>,
                                            int, int, CaptureFlags, Graph<double>&);
template ForwardTrace<float> forward(const TransformerLM<float>&, std::span<const int>,
                                     CaptureFlags, Graph<float>&);
template ForwardTrace<double> forward(const TransformerLM<double>&, std::span<const int>,
                                      CaptureFlags, Graph<double>&);
template ForwardTrace<float> forward(const TransformerLM<float>&, std::span<const int>,
                                     CaptureFlags);
template ForwardTrace<double> forward(const TransformerLM<double>&, std::span<const int>,
                                      CaptureFlags);
template std::vector<double> position_logprobs(const TransformerLM<float>&, std::span<const int>);
template std::vector<double> position_logprobs(const TransformerLM<double>&, std::span<const int>);
template double sequence_logprob(const TransformerLM<float>&, std::span<const int>);
template double sequence_logprob(const TransformerLM<double>&, std::span<const int>);
template std::vector<int> generate(const TransformerLM<float>&, std::span<const int>, int, double,
                                   std::uint64_t);
template std::vector<int> generate(const TransformerLM<double>&, std::span<const int>, int, double,
                                   std::uint64_t);

}  // namespace tinydistill
