#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tinydistill/transformer.hpp"

namespace tinydistill {

// Student layer l aligns with (and is initialized from) teacher layer
// stride*l + offset.
struct LayerMap {
  int stride = 3;
  int offset = 4;

  int teacher_layer(int student_layer) const { return stride * student_layer + offset; }
  void validate(int teacher_layers, int student_layers) const;
};

struct DistillConfig {
  LayerMap map;
  std::vector<double> alpha;  // per-student-layer hidden-alignment weights; empty = all 1
  std::vector<double> gamma;  // per-student-layer attention-KL weights; empty = all 1
  double tau = 2.0;           // softening temperature for the output term
  bool tau_sq_scale = false;  // multiply the output term by tau^2
  double lambda1 = 1.0;       // weight of the alignment term
  double lambda2 = 1.0;       // weight of the output-distribution term
  double lambda3 = 1.0;       // weight of the data cross-entropy term

  void validate(int teacher_layers, int student_layers) const;
};

struct LoraConfig {
  int rank = 4;
  double scale = 1.0;
  bool target_q = true;  // adapt the query projection
  bool target_v = true;  // adapt the value projection

  void validate(int d_model) const;
};

struct TrainConfig {
  int steps = 0;
  int batch_size = 1;
  int seq_len = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 0;
  int log_interval = 50;

  void validate() const;
};

// ===== student construction =====

// Depth-reduced student: bitwise copies of the teacher's embedding, head,
// final norm, and the mapped subset of blocks. Widths are inherited.
template <typename T>
TransformerLM<T> prune_init(const TransformerLM<T>& teacher, const LayerMap& map,
                            int student_layers);

// ===== distillation losses (graph scalars) =====

// sum_l alpha_l * cos_dist(teacher_hidden[g(l)], student_hidden[l])
//     + gamma_l * KL(teacher_attn[g(l)] || student_attn[l]).
// Attention KL is averaged over heads and query rows (teacher as p).
template <typename T>
TensorPtr<T> align_loss(Graph<T>& graph, const ForwardTrace<T>& teacher,
                        const ForwardTrace<T>& student, const DistillConfig& cfg);

// Mean-over-positions KL(softmax(t/tau) || softmax(s/tau)), optionally
// scaled by tau^2.
template <typename T>
TensorPtr<T> output_loss(Graph<T>& graph, const TensorPtr<T>& teacher_logits,
                         const TensorPtr<T>& student_logits, double tau, bool tau_sq_scale);

// Next-token cross-entropy; identical to Graph::cross_entropy.
template <typename T>
TensorPtr<T> lm_loss(Graph<T>& graph, const TensorPtr<T>& logits, std::vector<int> targets);

// lambda1*align + lambda2*output + lambda3*lm.
template <typename T>
TensorPtr<T> total_loss(Graph<T>& graph, const TensorPtr<T>& align, const TensorPtr<T>& output,
                        const TensorPtr<T>& lm, const DistillConfig& cfg);

// ===== low-rank adaptation =====

// Attaching freezes every base parameter and adds trainable pairs (A, B) to
// the configured projections; B starts at zero so the adapted model is
// forward-identical to the base until trained.
template <typename T>
struct LoraHandle {
  TransformerLM<T>* model = nullptr;
  LoraConfig config;
  bool merged = false;
  // requires_grad of each base parameter before attach, in named order.
  std::vector<std::pair<TensorPtr<T>, bool>> saved_flags;

  std::vector<TensorPtr<T>> adapter_parameters() const;
};

template <typename T>
LoraHandle<T> lora_attach(TransformerLM<T>& model, const LoraConfig& cfg, std::uint64_t seed);

// Folds scale*A*B into the base projections, removes the adapters, restores
// the base parameters' trainability, and returns the model. A handle can be
// merged once.
template <typename T>
TransformerLM<T>& lora_merge(LoraHandle<T>& handle);

// ===== optimization =====

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::int64_t t = 0;

  void init_like(const std::vector<TensorPtr<T>>& params);
  bool initialized() const { return !m.empty(); }
};

// One Adam update over `params` from their .grad buffers: global-norm clip,
// bias-corrected moments, then grads are zeroed.
template <typename T>
void adam_step(const std::vector<TensorPtr<T>>& params, AdamState<T>& state,
               const TrainConfig& cfg);

// ===== training loops =====

struct TrainStepRecord {
  int step = 0;  // 1-based, value is the count of completed steps
  double loss_lm = 0.0;
  double loss_align = 0.0;
  double loss_output = 0.0;
  double loss_total = 0.0;
  double wall_ms = 0.0;
};

struct TrainReport {
  std::vector<TrainStepRecord> records;  // one per log interval plus the final step
  int steps_run = 0;
  double final_loss = 0.0;
};

using StepCallback = std::function<void(int completed_steps)>;

// Plain next-token training of every trainable parameter. Batches are
// windows drawn with a per-step seeded stream, so a run resumed from
// start_step replays the interrupted trajectory exactly.
template <typename T>
TrainReport train_lm(TransformerLM<T>& model, const std::vector<std::vector<int>>& corpus,
                     const TrainConfig& cfg, AdamState<T>* state = nullptr, int start_step = 0,
                     const StepCallback& after_step = {});

// Distillation: frozen teacher traces supervise the student through
// align/output terms combined with the data term. With lambda1 = lambda2 = 0
// the trajectory is step-for-step identical to train_lm.
template <typename T>
TrainReport distill_train(const TransformerLM<T>& teacher, TransformerLM<T>& student,
                          const std::vector<std::vector<int>>& corpus, const DistillConfig& dcfg,
                          const TrainConfig& tcfg, AdamState<T>* state = nullptr,
                          int start_step = 0, const StepCallback& after_step = {});

// Attach adapters, train them on the target corpus, merge, return.
template <typename T>
TransformerLM<T> teacher_correct(TransformerLM<T> teacher,
                                 const std::vector<std::vector<int>>& target_corpus,
                                 const LoraConfig& lcfg, const TrainConfig& tcfg);

}  // namespace tinydistill
