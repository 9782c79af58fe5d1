#include "tinydistill/distill.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>

#include "tinydistill/rng.hpp"

namespace tinydistill {

// ===== config validation =====

void LayerMap::validate(int teacher_layers, int student_layers) const {
  if (stride <= 0) throw ConfigError("layer map: stride must be positive");
  if (offset < 0) throw ConfigError("layer map: offset must be non-negative");
  if (student_layers <= 0) throw ConfigError("layer map: student depth must be positive");
  const int last = teacher_layer(student_layers - 1);
  if (last >= teacher_layers)
    throw ConfigError("layer map: student layer " + std::to_string(student_layers - 1) +
                      " maps to teacher layer " + std::to_string(last) + " but teacher has " +
                      std::to_string(teacher_layers) + " layers");
}

void DistillConfig::validate(int teacher_layers, int student_layers) const {
  map.validate(teacher_layers, student_layers);
  if (!alpha.empty() && static_cast<int>(alpha.size()) != student_layers)
    throw ConfigError("distill: alpha must have one weight per student layer");
  if (!gamma.empty() && static_cast<int>(gamma.size()) != student_layers)
    throw ConfigError("distill: gamma must have one weight per student layer");
  if (tau <= 0.0) throw ConfigError("distill: tau must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0 || lambda3 < 0.0)
    throw ConfigError("distill: loss weights must be non-negative");
  if (lambda1 == 0.0 && lambda2 == 0.0 && lambda3 == 0.0)
    throw ConfigError("distill: at least one loss weight must be positive");
  for (double a : alpha)
    if (a < 0.0) throw ConfigError("distill: alpha weights must be non-negative");
  for (double g : gamma)
    if (g < 0.0) throw ConfigError("distill: gamma weights must be non-negative");
}

void LoraConfig::validate(int d_model) const {
  if (rank < 1) throw ConfigError("lora: rank must be at least 1");
  if (rank >= d_model) throw ConfigError("lora: rank must be smaller than d_model");
  if (scale <= 0.0) throw ConfigError("lora: scale must be positive");
  if (!target_q && !target_v) throw ConfigError("lora: target set must not be empty");
}

void TrainConfig::validate() const {
  if (steps < 0) throw ConfigError("train: steps must be non-negative");
  if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (seq_len < 2) throw ConfigError("train: seq_len must be at least 2");
  if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("train: betas must lie in [0, 1)");
  if (eps <= 0.0) throw ConfigError("train: eps must be positive");
  if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be non-negative");
  if (log_interval < 1) throw ConfigError("train: log_interval must be at least 1");
}

// ===== student construction =====

template <typename T>
TransformerLM<T> prune_init(const TransformerLM<T>& teacher, const LayerMap& map,
                            int student_layers) {
  map.validate(teacher.config.n_layers, student_layers);
  if (teacher.has_lora())
    throw UsageError("prune_init: teacher has unmerged adapters; merge before pruning");

  auto copy_of = [](const TensorPtr<T>& t) {
    auto c = std::make_shared<Tensor<T>>();
    c->shape = t->shape;
    c->data = t->data;
    c->requires_grad = t->requires_grad;
    return c;
  };

  TransformerLM<T> student;
  student.config = teacher.config;
  student.config.n_layers = student_layers;
  student.tok_emb = copy_of(teacher.tok_emb);
  student.blocks.resize(static_cast<std::size_t>(student_layers));
  for (int l = 0; l < student_layers; ++l) {
    const auto& src = teacher.blocks[static_cast<std::size_t>(map.teacher_layer(l))];
    auto& dst = student.blocks[static_cast<std::size_t>(l)];
    dst.wq = copy_of(src.wq);
    dst.wk = copy_of(src.wk);
    dst.wv = copy_of(src.wv);
    dst.wo = copy_of(src.wo);
    dst.w_gate = copy_of(src.w_gate);
    dst.w_up = copy_of(src.w_up);
    dst.w_down = copy_of(src.w_down);
    dst.attn_norm = copy_of(src.attn_norm);
    dst.ff_norm = copy_of(src.ff_norm);
  }
  student.final_norm = copy_of(teacher.final_norm);
  student.lm_head = copy_of(teacher.lm_head);
  return student;
}

// ===== losses =====

template <typename T>
TensorPtr<T> align_loss(Graph<T>& graph, const ForwardTrace<T>& teacher,
                        const ForwardTrace<T>& student, const DistillConfig& cfg) {
  const int sl = static_cast<int>(student.hidden_states.size());
  const int sl_attn = static_cast<int>(student.attention_maps.size());
  const int n_student = std::max(sl, sl_attn);
  if (n_student == 0)
    throw UsageError("align_loss: student trace has no captured hidden states or attention maps");

  std::vector<double> alpha = cfg.alpha.empty() ? std::vector<double>(n_student, 1.0) : cfg.alpha;
  std::vector<double> gamma = cfg.gamma.empty() ? std::vector<double>(n_student, 1.0) : cfg.gamma;
  if (static_cast<int>(alpha.size()) != n_student || static_cast<int>(gamma.size()) != n_student)
    throw ConfigError("align_loss: weight vectors must have one entry per student layer");

  std::vector<std::pair<T, TensorPtr<T>>> terms;
  for (int l = 0; l < n_student; ++l) {
    const int tl = cfg.map.teacher_layer(l);
    if (alpha[static_cast<std::size_t>(l)] != 0.0) {
      if (l >= sl || tl >= static_cast<int>(teacher.hidden_states.size()))
        throw UsageError("align_loss: hidden-state capture missing for mapped layer");
      terms.emplace_back(static_cast<T>(alpha[static_cast<std::size_t>(l)]),
                         graph.cosine_distance(teacher.hidden_states[static_cast<std::size_t>(tl)],
                                               student.hidden_states[static_cast<std::size_t>(l)]));
    }
    if (gamma[static_cast<std::size_t>(l)] != 0.0) {
      if (l >= sl_attn || tl >= static_cast<int>(teacher.attention_maps.size()))
        throw UsageError("align_loss: attention capture missing for mapped layer");
      const auto& ta = teacher.attention_maps[static_cast<std::size_t>(tl)];
      terms.emplace_back(static_cast<T>(gamma[static_cast<std::size_t>(l)]),
                         graph.kl_divergence(ta,
                                             student.attention_maps[static_cast<std::size_t>(l)],
                                             ta->ndim() - 1));
    }
  }
  if (terms.empty()) return make_tensor<T>({1});
  return graph.sum_scaled(terms);
}

template <typename T>
TensorPtr<T> output_loss(Graph<T>& graph, const TensorPtr<T>& teacher_logits,
                         const TensorPtr<T>& student_logits, double tau, bool tau_sq_scale) {
  if (tau <= 0.0) throw DomainError("output_loss: tau must be positive");
  if (!teacher_logits || !student_logits || teacher_logits->shape != student_logits->shape)
    throw ShapeError("output_loss: logits shape mismatch");
  const int axis = teacher_logits->ndim() - 1;
  const T inv_tau = static_cast<T>(1.0 / tau);
  auto p = graph.softmax(graph.scale(teacher_logits, inv_tau), axis);
  auto q = graph.softmax(graph.scale(student_logits, inv_tau), axis);
  auto kl = graph.kl_divergence(p, q, axis);
  if (tau_sq_scale) kl = graph.scale(kl, static_cast<T>(tau * tau));
  return kl;
}

template <typename T>
TensorPtr<T> lm_loss(Graph<T>& graph, const TensorPtr<T>& logits, std::vector<int> targets) {
  return graph.cross_entropy(logits, std::move(targets));
}

template <typename T>
TensorPtr<T> total_loss(Graph<T>& graph, const TensorPtr<T>& align, const TensorPtr<T>& output,
                        const TensorPtr<T>& lm, const DistillConfig& cfg) {
  for (const auto& t : {align, output, lm}) {
    if (!t || t->numel() != 1) throw UsageError("total_loss: every term must be a scalar");
    if (!std::isfinite(static_cast<double>(t->data[0])))
      throw DomainError("total_loss: non-finite loss term");
  }
  return graph.sum_scaled({{static_cast<T>(cfg.lambda1), align},
                           {static_cast<T>(cfg.lambda2), output},
                           {static_cast<T>(cfg.lambda3), lm}});
}

// ===== low-rank adaptation =====

template <typename T>
std::vector<TensorPtr<T>> LoraHandle<T>::adapter_parameters() const {
  std::vector<TensorPtr<T>> out;
  if (!model) return out;
  for (const auto& b : model->blocks) {
    if (b.lora_qa) {
      out.push_back(b.lora_qa);
      out.push_back(b.lora_qb);
    }
    if (b.lora_va) {
      out.push_back(b.lora_va);
      out.push_back(b.lora_vb);
    }
  }
  return out;
}

template <typename T>
LoraHandle<T> lora_attach(TransformerLM<T>& model, const LoraConfig& cfg, std::uint64_t seed) {
  cfg.validate(model.config.d_model);
  if (model.has_lora()) throw UsageError("lora_attach: model already has adapters attached");

  LoraHandle<T> handle;
  handle.model = &model;
  handle.config = cfg;
  for (auto& [name, t] : model.named_parameters()) {
    handle.saved_flags.emplace_back(t, t->requires_grad);
    t->requires_grad = false;
  }

  const int d = model.config.d_model;
  Rng rng(seed);
  auto new_pair = [&](TensorPtr<T>& a, TensorPtr<T>& b) {
    a = make_param<T>({d, cfg.rank}, T(0.02), rng);
    b = make_tensor<T>({cfg.rank, d}, true);  // zero: adapted == base at step 0
  };
  for (auto& blk : model.blocks) {
    if (cfg.target_q) new_pair(blk.lora_qa, blk.lora_qb);
    if (cfg.target_v) new_pair(blk.lora_va, blk.lora_vb);
  }
  model.lora_scale = cfg.scale;
  return handle;
}

template <typename T>
TransformerLM<T>& lora_merge(LoraHandle<T>& handle) {
  if (!handle.model) throw UsageError("lora_merge: empty handle");
  if (handle.merged) throw UsageError("lora_merge: adapter already merged");
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  TransformerLM<T>& m = *handle.model;
  const int d = m.config.d_model;
  const int r = handle.config.rank;
  const T s = static_cast<T>(handle.config.scale);
  for (auto& blk : m.blocks) {
    auto fold = [&](TensorPtr<T>& w, TensorPtr<T>& a, TensorPtr<T>& b) {
      if (!a) return;
      Eigen::Map<Mat> wm(w->data.data(), d, d);
      Eigen::Map<const Mat> am(a->data.data(), d, r);
      Eigen::Map<const Mat> bm(b->data.data(), r, d);
      wm.noalias() += s * (am * bm);
      a.reset();
      b.reset();
    };
    fold(blk.wq, blk.lora_qa, blk.lora_qb);
    fold(blk.wv, blk.lora_va, blk.lora_vb);
  }
  for (auto& [t, flag] : handle.saved_flags) t->requires_grad = flag;
  m.lora_scale = 0.0;
  handle.merged = true;
  return m;
}

// ===== optimization =====

template <typename T>
void AdamState<T>::init_like(const std::vector<TensorPtr<T>>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p->data.size(), T(0));
    v.emplace_back(p->data.size(), T(0));
  }
  t = 0;
}

template <typename T>
void adam_step(const std::vector<TensorPtr<T>>& params, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (!state.initialized()) state.init_like(params);
  if (state.m.size() != params.size())
    throw UsageError("adam_step: optimizer state does not match parameter list");

  // Global-norm clip, accumulated in double in a fixed order.
  double scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& p : params) {
      if (!p->has_grad()) continue;
      for (T g : p->grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.eps);
  const T c1 = static_cast<T>(1.0 / bc1), c2 = static_cast<T>(1.0 / bc2);
  const T gs = static_cast<T>(scale);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    p.ensure_grad();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const T g = p.grad[j] * gs;
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      p.data[j] -= lr * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
    }
    p.zero_grad();
  }
}

// ===== training loops =====

namespace {

std::vector<int> eligible_sequences(const std::vector<std::vector<int>>& corpus, int window) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (static_cast<int>(corpus[i].size()) >= window) idx.push_back(static_cast<int>(i));
  return idx;
}

// One batch of next-token windows: inputs are w[0..L), targets w[1..L].
void draw_windows(const std::vector<std::vector<int>>& corpus, const std::vector<int>& eligible,
                  int batch, int L, Rng& rng, std::vector<int>& inputs, std::vector<int>& targets) {
  inputs.resize(static_cast<std::size_t>(batch) * L);
  targets.resize(static_cast<std::size_t>(batch) * L);
  for (int b = 0; b < batch; ++b) {
    const auto& seq = corpus[static_cast<std::size_t>(
        eligible[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(eligible.size())))])];
    const int max_start = static_cast<int>(seq.size()) - (L + 1);
    const int off = max_start == 0 ? 0 : rng.uniform_int(max_start + 1);
    std::copy_n(seq.begin() + off, L, inputs.begin() + static_cast<std::size_t>(b) * L);
    std::copy_n(seq.begin() + off + 1, L, targets.begin() + static_cast<std::size_t>(b) * L);
  }
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

[[noreturn]] void diverged(const char* what, int step, double value) {
  throw Error(std::string(what) + ": non-finite loss " + std::to_string(value) + " at step " +
              std::to_string(step) + "; aborting");
}

}  // namespace

template <typename T>
TrainReport train_lm(TransformerLM<T>& model, const std::vector<std::vector<int>>& corpus,
                     const TrainConfig& cfg, AdamState<T>* state, int start_step,
                     const StepCallback& after_step) {
  cfg.validate();
  if (start_step < 0) throw UsageError("train_lm: start_step must be non-negative");
  auto params = model.trainable_parameters();
  if (params.empty()) throw UsageError("train_lm: model has no trainable parameters");
  if (cfg.steps > 0 && corpus.empty()) throw UsageError("train_lm: empty corpus");

  AdamState<T> local;
  AdamState<T>& opt = state ? *state : local;

  TrainReport report;
  if (cfg.steps == 0 || start_step >= cfg.steps) return report;

  const auto eligible = eligible_sequences(corpus, cfg.seq_len + 1);
  if (eligible.empty())
    throw UsageError("train_lm: no sequence is long enough for seq_len + 1 tokens");

  std::vector<int> inputs, targets;
  for (int step = start_step; step < cfg.steps; ++step) {
    const double t0 = now_ms();
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(step)));
    draw_windows(corpus, eligible, cfg.batch_size, cfg.seq_len, rng, inputs, targets);
    Graph<T> graph;
    auto trace = forward_batch(model, std::span<const int>(inputs), cfg.batch_size, cfg.seq_len,
                               CaptureFlags{}, graph);
    auto loss = graph.cross_entropy(trace.logits, targets);
    const double lv = static_cast<double>(loss->data[0]);
    if (!std::isfinite(lv)) diverged("train_lm", step + 1, lv);
    graph.backward(loss);
    adam_step(params, opt, cfg);

    const int done = step + 1;
    report.steps_run = done - start_step;
    report.final_loss = lv;
    if (done % cfg.log_interval == 0 || done == cfg.steps)
      report.records.push_back({done, lv, 0.0, 0.0, lv, now_ms() - t0});
    if (after_step) after_step(done);
  }
  return report;
}

template <typename T>
TrainReport distill_train(const TransformerLM<T>& teacher, TransformerLM<T>& student,
                          const std::vector<std::vector<int>>& corpus, const DistillConfig& dcfg,
                          const TrainConfig& tcfg, AdamState<T>* state, int start_step,
                          const StepCallback& after_step) {
  tcfg.validate();
  if (start_step < 0) throw UsageError("distill_train: start_step must be non-negative");
  if (!teacher.config.same_width(student.config))
    throw ConfigError("distill_train: teacher and student widths differ");
  dcfg.validate(teacher.config.n_layers, student.config.n_layers);
  auto params = student.trainable_parameters();
  if (params.empty()) throw UsageError("distill_train: student has no trainable parameters");
  if (tcfg.steps > 0 && corpus.empty()) throw UsageError("distill_train: empty corpus");

  AdamState<T> local;
  AdamState<T>& opt = state ? *state : local;

  TrainReport report;
  if (tcfg.steps == 0 || start_step >= tcfg.steps) return report;

  const auto eligible = eligible_sequences(corpus, tcfg.seq_len + 1);
  if (eligible.empty())
    throw UsageError("distill_train: no sequence is long enough for seq_len + 1 tokens");

  const int n_student = student.config.n_layers;
  const bool any_alpha =
      dcfg.alpha.empty() ||
      std::any_of(dcfg.alpha.begin(), dcfg.alpha.end(), [](double a) { return a != 0.0; });
  const bool any_gamma =
      dcfg.gamma.empty() ||
      std::any_of(dcfg.gamma.begin(), dcfg.gamma.end(), [](double g) { return g != 0.0; });
  CaptureFlags capture;
  capture.hidden = dcfg.lambda1 > 0.0 && any_alpha;
  capture.attention = dcfg.lambda1 > 0.0 && any_gamma;
  const bool use_align = capture.hidden || capture.attention;
  const bool need_teacher = use_align || dcfg.lambda2 > 0.0;
  (void)n_student;

  std::vector<int> inputs, targets;
  for (int step = start_step; step < tcfg.steps; ++step) {
    const double t0 = now_ms();
    Rng rng(Rng::mix(tcfg.seed, static_cast<std::uint64_t>(step)));
    draw_windows(corpus, eligible, tcfg.batch_size, tcfg.seq_len, rng, inputs, targets);

    Graph<T> teacher_graph;
    teacher_graph.set_recording(false);
    ForwardTrace<T> ttrace;
    if (need_teacher)
      ttrace = forward_batch(teacher, std::span<const int>(inputs), tcfg.batch_size, tcfg.seq_len,
                             capture, teacher_graph);

    Graph<T> graph;
    auto strace = forward_batch(student, std::span<const int>(inputs), tcfg.batch_size,
                                tcfg.seq_len, capture, graph);

    std::vector<std::pair<T, TensorPtr<T>>> terms;
    double la = 0.0, lo = 0.0, lm = 0.0;
    if (use_align) {
      auto align = align_loss(graph, ttrace, strace, dcfg);
      la = static_cast<double>(align->data[0]);
      terms.emplace_back(static_cast<T>(dcfg.lambda1), align);
    }
    if (dcfg.lambda2 > 0.0) {
      auto output = output_loss(graph, ttrace.logits, strace.logits, dcfg.tau, dcfg.tau_sq_scale);
      lo = static_cast<double>(output->data[0]);
      terms.emplace_back(static_cast<T>(dcfg.lambda2), output);
    }
    if (dcfg.lambda3 > 0.0) {
      auto data_term = lm_loss(graph, strace.logits, targets);
      lm = static_cast<double>(data_term->data[0]);
      terms.emplace_back(static_cast<T>(dcfg.lambda3), data_term);
    }
    auto total = graph.sum_scaled(terms);
    const double lv = static_cast<double>(total->data[0]);
    if (!std::isfinite(lv)) diverged("distill_train", step + 1, lv);
    graph.backward(total);
    adam_step(params, opt, tcfg);

    const int done = step + 1;
    report.steps_run = done - start_step;
    report.final_loss = lv;
    if (done % tcfg.log_interval == 0 || done == tcfg.steps)
      report.records.push_back({done, lm, la, lo, lv, now_ms() - t0});
    if (after_step) after_step(done);
  }
  return report;
}

template <typename T>
TransformerLM<T> teacher_correct(TransformerLM<T> teacher,
                                 const std::vector<std::vector<int>>& target_corpus,
                                 const LoraConfig& lcfg, const TrainConfig& tcfg) {
  auto handle = lora_attach(teacher, lcfg, Rng::mix(tcfg.seed, 0x6c6f7261ull));
  train_lm(teacher, target_corpus, tcfg);
  lora_merge(handle);
  return teacher;
}

// ===== explicit instantiations =====

template TransformerLM<float> prune_init(const TransformerLM<float>&, const LayerMap&, int);
template TransformerLM<double> prune_init(const TransformerLM<double>&, const LayerMap&, int);
template TensorPtr<float> align_loss(Graph<float>&, const ForwardTrace<float>&,
                                     const ForwardTrace<float>&, const DistillConfig&);
template TensorPtr<double> align_loss(Graph<double>&, const ForwardTrace<double>&,
                                      const ForwardTrace<double>&, const DistillConfig&);
template TensorPtr<float> output_loss(Graph<float>&, const TensorPtr<float>&,
                                      const TensorPtr<float>&, double, bool);
template TensorPtr<double> output_loss(Graph<double>&, const TensorPtr<double>&,
                                       const TensorPtr<double>&, double, bool);
template TensorPtr<float> lm_loss(Graph<float>&, const TensorPtr<float>&, std::vector<int>);
template TensorPtr<double> lm_loss(Graph<double>&, const TensorPtr<double>&, std::vector<int>);
template TensorPtr<float> total_loss(Graph<float>&, const TensorPtr<float>&,
                                     const TensorPtr<float>&, const TensorPtr<float>&,
                                     const DistillConfig&);
template TensorPtr<double> total_loss(Graph<double>&, const TensorPtr<double>&,
                                      const TensorPtr<double>&, const TensorPtr<double>&,
                                      const DistillConfig&);
template struct LoraHandle<float>;
template struct LoraHandle<double>;
template LoraHandle<float> lora_attach(TransformerLM<float>&, const LoraConfig&, std::uint64_t);
template LoraHandle<double> lora_attach(TransformerLM<double>&, const LoraConfig&, std::uint64_t);
template TransformerLM<float>& lora_merge(LoraHandle<float>&);
template TransformerLM<double>& lora_merge(LoraHandle<double>&);
template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const std::vector<TensorPtr<float>>&, AdamState<float>&,
                        const TrainConfig&);
template void adam_step(const std::vector<TensorPtr<double>>&, AdamState<double>&,
                        const TrainConfig&);
template TrainReport train_lm(TransformerLM<float>&, const std::vector<std::vector<int>>&,
                              const TrainConfig&, AdamState<float>*, int, const StepCallback&);
template TrainReport train_lm(TransformerLM<double>&, const std::vector<std::vector<int>>&,
                              const TrainConfig&, AdamState<double>*, int, const StepCallback&);
template TrainReport distill_train(const TransformerLM<float>&, TransformerLM<float>&,
                                   const std::vector<std::vector<int>>&, const DistillConfig&,
                                   const TrainConfig&, AdamState<float>*, int,
                                   const StepCallback&);
template TrainReport distill_train(const TransformerLM<double>&, TransformerLM<double>&,
                                   const std::vector<std::vector<int>>&, const DistillConfig&,
                                   const TrainConfig&, AdamState<double>*, int,
                                   const StepCallback&);
template TransformerLM<float> teacher_correct(TransformerLM<float>,
                                              const std::vector<std::vector<int>>&,
                                              const LoraConfig&, const TrainConfig&);
template TransformerLM<double> teacher_correct(TransformerLM<double>,
                                               const std::vector<std::vector<int>>&,
                                               const LoraConfig&, const TrainConfig&);

}  // namespace tinydistill
