#include "tinydistill/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tinydistill/errors.hpp"
#include "tinydistill/rng.hpp"

namespace tinydistill {

using nlohmann::json;

namespace {

// walks one JSON object, pulling known keys and rejecting everything else
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;  // keep the default
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  // claims a key without reading it: echo-only fields in resolved configs
  void ignore(const char* key) { seen_.insert(key); }

  const json& child(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  // call after all known keys were claimed; flags any leftovers
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + ": unknown key \"" + it.key() + "\"");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_layout(const json& j, const std::string& path, VocabLayout& out) {
  ObjectReader r(j, path);
  r.get("phonetic_size", out.phonetic_size);
  r.get("pitch_size", out.pitch_size);
  r.get("style_size", out.style_size);
  r.get("text_size", out.text_size);
  r.finish();
}

void read_model(const json& j, const std::string& path, ModelConfig& out) {
  ObjectReader r(j, path);
  r.get("vocab_size", out.vocab_size);
  r.get("d_model", out.d_model);
  r.get("n_heads", out.n_heads);
  r.get("n_layers", out.n_layers);
  r.get("d_ff", out.d_ff);
  r.get("max_seq_len", out.max_seq_len);
  r.get("rope_base", out.rope_base);
  r.finish();
}

void read_distill(const json& j, const std::string& path, DistillConfig& out) {
  ObjectReader r(j, path);
  if (r.has("layer_map")) {
    ObjectReader m(r.child("layer_map"), path + ".layer_map");
    m.get("stride", out.map.stride);
    m.get("offset", out.map.offset);
    m.finish();
  }
  r.get("alpha", out.alpha);
  r.get("gamma", out.gamma);
  r.get("tau", out.tau);
  r.get("tau_sq_scale", out.tau_sq_scale);
  r.get("lambda_align", out.lambda1);
  r.get("lambda_output", out.lambda2);
  r.get("lambda_lm", out.lambda3);
  r.finish();
}

void read_lora(const json& j, const std::string& path, LoraConfig& out) {
  ObjectReader r(j, path);
  r.get("rank", out.rank);
  r.get("scale", out.scale);
  r.get("target_q", out.target_q);
  r.get("target_v", out.target_v);
  r.finish();
}

void read_train(const json& j, const std::string& path, TrainConfig& out) {
  ObjectReader r(j, path);
  r.get("steps", out.steps);
  r.get("batch_size", out.batch_size);
  r.get("seq_len", out.seq_len);
  r.get("learning_rate", out.learning_rate);
  r.get("beta1", out.beta1);
  r.get("beta2", out.beta2);
  r.get("eps", out.eps);
  r.get("grad_clip", out.grad_clip);
  r.get("log_interval", out.log_interval);
  // per-stage seeds are derived from master_seed, never set directly: an
  // explicit "seed" key here is an unknown key and fails the parse
  r.ignore("derived_seed");
  r.finish();
}

void read_data(const json& j, const std::string& path, DataGenConfig& out) {
  ObjectReader r(j, path);
  r.get("pretrain_seed", out.pretrain_seed);
  r.get("target_seed", out.target_seed);
  r.get("concentration", out.concentration);
  r.get("sample_seed", out.sample_seed);
  r.get("n_train_seqs", out.n_train_seqs);
  r.get("seq_len", out.seq_len);
  r.get("n_eval_seqs", out.n_eval_seqs);
  r.get("eval_seq_len", out.eval_seq_len);
  r.get("interleaved_utts", out.interleaved_utts);
  r.get("interleaved_words", out.interleaved_words);
  r.get("interleaved_word_len", out.interleaved_word_len);
  r.get("pattern_probs", out.pattern_probs);
  if (r.has("expressive")) {
    ObjectReader e(r.child("expressive"), path + ".expressive");
    e.get("segments", out.expressive.segments);
    e.get("seg_len", out.expressive.seg_len);
    e.get("pitch_period", out.expressive.pitch_period);
    e.finish();
  }
  r.get("expressive_docs", out.expressive_docs);
  r.get("cloze_items", out.cloze_items);
  r.get("cloze_ctx_len", out.cloze_ctx_len);
  r.get("cloze_cont_len", out.cloze_cont_len);
  r.get("style_items", out.style_items);
  r.get("style_ctx_segments", out.style_ctx_segments);
  r.finish();
}

void read_stages(const json& j, const std::string& path, StageFiles& out) {
  ObjectReader r(j, path);
  r.get("teacher_corpus", out.teacher_corpus);
  r.get("correct_corpus", out.correct_corpus);
  r.get("correct_eval_corpus", out.correct_eval_corpus);
  r.get("distill_corpus", out.distill_corpus);
  r.get("baseline_corpus", out.baseline_corpus);
  r.get("eval_corpus", out.eval_corpus);
  r.get("eval_cloze", out.eval_cloze);
  r.get("eval_style", out.eval_style);
  r.get("distill_teacher", out.distill_teacher);
  r.finish();
}

json layout_json(const VocabLayout& l) {
  return json{{"phonetic_size", l.phonetic_size},
              {"pitch_size", l.pitch_size},
              {"style_size", l.style_size},
              {"text_size", l.text_size}};
}

json model_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
              {"n_heads", c.n_heads},       {"n_layers", c.n_layers},
              {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
              {"rope_base", c.rope_base}};
}

json train_json(const TrainConfig& t, std::uint64_t derived_seed) {
  return json{{"steps", t.steps},
              {"batch_size", t.batch_size},
              {"seq_len", t.seq_len},
              {"learning_rate", t.learning_rate},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"eps", t.eps},
              {"grad_clip", t.grad_clip},
              {"log_interval", t.log_interval},
              {"derived_seed", derived_seed}};
}

}  // namespace

void DataGenConfig::validate() const {
  if (concentration <= 0.0) throw ConfigError("data.concentration must be positive");
  if (n_train_seqs < 1 || seq_len < 2) throw ConfigError("data: training corpus shape invalid");
  if (n_eval_seqs < 1 || eval_seq_len < 2) throw ConfigError("data: eval corpus shape invalid");
  if (interleaved_utts < 1 || interleaved_words < 1 || interleaved_word_len < 1)
    throw ConfigError("data: interleaved corpus shape invalid");
  double sum = 0.0;
  for (double p : pattern_probs) {
    if (p < 0.0) throw ConfigError("data.pattern_probs must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("data.pattern_probs must sum to 1");
  expressive.validate();
  if (expressive_docs < 1) throw ConfigError("data.expressive_docs must be positive");
  if (cloze_items < 1 || cloze_ctx_len < 1 || cloze_cont_len < 1)
    throw ConfigError("data: cloze item shape invalid");
  if (style_items < 1 || style_ctx_segments < 1)
    throw ConfigError("data: style item shape invalid");
}

namespace {
enum : std::uint64_t {
  kTagTeacherInit = 1,
  kTagTeacherTrain = 2,
  kTagCorrectTrain = 3,
  kTagDistillTrain = 4,
  kTagBaselineInit = 5,
  kTagBaselineTrain = 6,
};
}

std::uint64_t RunConfig::teacher_init_seed() const { return Rng::mix(master_seed, kTagTeacherInit); }
std::uint64_t RunConfig::baseline_init_seed() const { return Rng::mix(master_seed, kTagBaselineInit); }
std::uint64_t RunConfig::teacher_train_seed() const { return Rng::mix(master_seed, kTagTeacherTrain); }
std::uint64_t RunConfig::correct_train_seed() const { return Rng::mix(master_seed, kTagCorrectTrain); }
std::uint64_t RunConfig::distill_train_seed() const { return Rng::mix(master_seed, kTagDistillTrain); }
std::uint64_t RunConfig::baseline_train_seed() const { return Rng::mix(master_seed, kTagBaselineTrain); }

namespace {
TrainConfig with_seed(TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}
}  // namespace

TrainConfig RunConfig::stage_train_teacher() const {
  return with_seed(train_teacher, teacher_train_seed());
}
TrainConfig RunConfig::stage_train_correct() const {
  return with_seed(train_correct, correct_train_seed());
}
TrainConfig RunConfig::stage_train_distill() const {
  return with_seed(train_distill, distill_train_seed());
}
TrainConfig RunConfig::stage_train_baseline() const {
  return with_seed(train_baseline, baseline_train_seed());
}

void StageFiles::validate() const {
  for (const std::string* s : {&teacher_corpus, &correct_corpus, &correct_eval_corpus,
                               &distill_corpus, &baseline_corpus, &eval_corpus, &eval_cloze,
                               &eval_style, &distill_teacher})
    if (s->empty()) throw ConfigError("stages: file names must not be empty");
}

void RunConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (snapshot_interval < 0) throw ConfigError("snapshot_interval must be non-negative");
  stages.validate();
  layout.validate();
  data.validate();
  teacher.validate();
  student.validate();
  if (!teacher.same_width(student))
    throw ConfigError("teacher and student must share width, head count, and vocabulary");
  if (teacher.vocab_size != layout.total())
    throw ConfigError("model vocab_size must equal the layout's total token count (" +
                      std::to_string(layout.total()) + ")");
  distill.validate(teacher.n_layers, student.n_layers);
  lora.validate(teacher.d_model);
  // stage shapes; seeds are derived later so 0 placeholders are fine here
  stage_train_teacher().validate();
  stage_train_correct().validate();
  stage_train_distill().validate();
  stage_train_baseline().validate();
  for (const TrainConfig* t : {&train_teacher, &train_correct, &train_distill, &train_baseline})
    if (t->seq_len > teacher.max_seq_len)
      throw ConfigError("train seq_len exceeds the model's max_seq_len");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  RunConfig c;
  ObjectReader r(j, "config");
  r.get("out_dir", c.out_dir);
  r.get("data_dir", c.data_dir);
  r.get("master_seed", c.master_seed);
  r.get("snapshot_interval", c.snapshot_interval);
  if (r.has("stages")) read_stages(r.child("stages"), "config.stages", c.stages);
  if (r.has("layout")) read_layout(r.child("layout"), "config.layout", c.layout);
  if (r.has("data")) read_data(r.child("data"), "config.data", c.data);
  if (r.has("teacher")) read_model(r.child("teacher"), "config.teacher", c.teacher);
  if (r.has("student")) read_model(r.child("student"), "config.student", c.student);
  if (r.has("distill")) read_distill(r.child("distill"), "config.distill", c.distill);
  if (r.has("lora")) read_lora(r.child("lora"), "config.lora", c.lora);
  if (r.has("train_teacher"))
    read_train(r.child("train_teacher"), "config.train_teacher", c.train_teacher);
  if (r.has("train_correct"))
    read_train(r.child("train_correct"), "config.train_correct", c.train_correct);
  if (r.has("train_distill"))
    read_train(r.child("train_distill"), "config.train_distill", c.train_distill);
  if (r.has("train_baseline"))
    read_train(r.child("train_baseline"), "config.train_baseline", c.train_baseline);
  r.ignore("derived_seeds");

  r.finish();
  if (c.data_dir.empty()) c.data_dir = c.out_dir + "/data";
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string resolved_config_json(const RunConfig& c) {
  json j{{"out_dir", c.out_dir},
         {"data_dir", c.data_dir},
         {"master_seed", c.master_seed},
         {"snapshot_interval", c.snapshot_interval},
         {"stages",
          {{"teacher_corpus", c.stages.teacher_corpus},
           {"correct_corpus", c.stages.correct_corpus},
           {"correct_eval_corpus", c.stages.correct_eval_corpus},
           {"distill_corpus", c.stages.distill_corpus},
           {"baseline_corpus", c.stages.baseline_corpus},
           {"eval_corpus", c.stages.eval_corpus},
           {"eval_cloze", c.stages.eval_cloze},
           {"eval_style", c.stages.eval_style},
           {"distill_teacher", c.stages.distill_teacher}}},
         {"layout", layout_json(c.layout)},
         {"data",
          {{"pretrain_seed", c.data.pretrain_seed},
           {"target_seed", c.data.target_seed},
           {"concentration", c.data.concentration},
           {"sample_seed", c.data.sample_seed},
           {"n_train_seqs", c.data.n_train_seqs},
           {"seq_len", c.data.seq_len},
           {"n_eval_seqs", c.data.n_eval_seqs},
           {"eval_seq_len", c.data.eval_seq_len},
           {"interleaved_utts", c.data.interleaved_utts},
           {"interleaved_words", c.data.interleaved_words},
           {"interleaved_word_len", c.data.interleaved_word_len},
           {"pattern_probs", c.data.pattern_probs},
           {"expressive",
            {{"segments", c.data.expressive.segments},
             {"seg_len", c.data.expressive.seg_len},
             {"pitch_period", c.data.expressive.pitch_period}}},
           {"expressive_docs", c.data.expressive_docs},
           {"cloze_items", c.data.cloze_items},
           {"cloze_ctx_len", c.data.cloze_ctx_len},
           {"cloze_cont_len", c.data.cloze_cont_len},
           {"style_items", c.data.style_items},
           {"style_ctx_segments", c.data.style_ctx_segments}}},
         {"teacher", model_json(c.teacher)},
         {"student", model_json(c.student)},
         {"distill",
          {{"layer_map", {{"stride", c.distill.map.stride}, {"offset", c.distill.map.offset}}},
           {"alpha", c.distill.alpha},
           {"gamma", c.distill.gamma},
           {"tau", c.distill.tau},
           {"tau_sq_scale", c.distill.tau_sq_scale},
           {"lambda_align", c.distill.lambda1},
           {"lambda_output", c.distill.lambda2},
           {"lambda_lm", c.distill.lambda3}}},
         {"lora",
          {{"rank", c.lora.rank},
           {"scale", c.lora.scale},
           {"target_q", c.lora.target_q},
           {"target_v", c.lora.target_v}}},
         {"train_teacher", train_json(c.train_teacher, c.teacher_train_seed())},
         {"train_correct", train_json(c.train_correct, c.correct_train_seed())},
         {"train_distill", train_json(c.train_distill, c.distill_train_seed())},
         {"train_baseline", train_json(c.train_baseline, c.baseline_train_seed())},
         {"derived_seeds",
          {{"teacher_init", c.teacher_init_seed()},
           {"baseline_init", c.baseline_init_seed()},
           {"teacher_train", c.teacher_train_seed()},
           {"correct_train", c.correct_train_seed()},
           {"distill_train", c.distill_train_seed()},
           {"baseline_train", c.baseline_train_seed()}}}};
  return j.dump(2) + "\n";
}

}  // namespace tinydistill
