#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "tinydistill/data.hpp"
#include "tinydistill/distill.hpp"
#include "tinydistill/transformer.hpp"

namespace tinydistill {

// Everything the pipeline generates, keyed by file name under data_dir.
struct DataGenConfig {
  std::uint64_t pretrain_seed = 101;  // chain behind pretrain.corpus
  std::uint64_t target_seed = 202;    // independent chain behind target.corpus
  double concentration = 1.0;         // transition-row sharpness
  std::uint64_t sample_seed = 303;    // drawing corpora and item sets

  int n_train_seqs = 512;  // pretrain.corpus / target.corpus
  int seq_len = 256;
  int n_eval_seqs = 100;  // *_eval.corpus, held out from training
  int eval_seq_len = 1000;

  int interleaved_utts = 64;  // interleaved.corpus (built on the pretrain chain)
  int interleaved_words = 6;
  int interleaved_word_len = 3;
  std::array<double, 5> pattern_probs = {0.2, 0.2, 0.2, 0.2, 0.2};

  ExpressiveSpec expressive;   // expressive.corpus (built on the pretrain chain)
  int expressive_docs = 256;

  int cloze_items = 1000;  // cloze.items (pretrain chain)
  int cloze_ctx_len = 32;
  int cloze_cont_len = 20;

  int style_items = 1000;  // style.items (pretrain chain)
  int style_ctx_segments = 2;

  void validate() const;
};

// Which files each pipeline stage reads and writes. Corpus and item names
// are relative to data_dir; checkpoint names are relative to out_dir.
struct StageFiles {
  std::string teacher_corpus = "pretrain.corpus";
  std::string correct_corpus = "target.corpus";       // adapter fine-tune split
  std::string correct_eval_corpus = "target_eval.corpus";  // pre/post perplexity probe
  std::string distill_corpus = "pretrain.corpus";
  std::string baseline_corpus = "pretrain.corpus";
  std::string eval_corpus = "pretrain_eval.corpus";
  std::string eval_cloze = "cloze.items";
  std::string eval_style = "style.items";
  std::string distill_teacher = "teacher.twck";  // which teacher the student sees

  void validate() const;
};

// One document drives every stage; stages read their slice.
struct RunConfig {
  std::string out_dir = "runs/default";
  std::string data_dir;  // defaults to out_dir + "/data"
  std::uint64_t master_seed = 1;
  int snapshot_interval = 0;  // steps between resumable snapshots; 0 = none

  StageFiles stages;

  VocabLayout layout;
  DataGenConfig data;

  ModelConfig teacher;
  ModelConfig student;

  DistillConfig distill;
  LoraConfig lora;

  // usable zero-step defaults so a stage omitted from the document validates
  // but trains nothing until given a step budget
  TrainConfig train_teacher{.steps = 0, .batch_size = 8, .seq_len = 64};
  TrainConfig train_correct{.steps = 0, .batch_size = 8, .seq_len = 64};
  TrainConfig train_distill{.steps = 0, .batch_size = 8, .seq_len = 64};
  TrainConfig train_baseline{.steps = 0, .batch_size = 8, .seq_len = 64};

  // Derived per-stage seeds: Rng::mix(master_seed, stage tag). Data seeds are
  // NOT derived from master_seed, so reseeded runs reuse identical corpora.
  std::uint64_t teacher_init_seed() const;
  std::uint64_t baseline_init_seed() const;
  std::uint64_t teacher_train_seed() const;
  std::uint64_t correct_train_seed() const;
  std::uint64_t distill_train_seed() const;
  std::uint64_t baseline_train_seed() const;

  void validate() const;

  // Stage TrainConfigs with the derived seed filled in.
  TrainConfig stage_train_teacher() const;
  TrainConfig stage_train_correct() const;
  TrainConfig stage_train_distill() const;
  TrainConfig stage_train_baseline() const;
};

// Strict parse: unknown keys anywhere are errors, types must match, and every
// absent field keeps its default. Throws ConfigError with a field path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Deterministic full echo of the config with every default resolved; written
// next to each stage's outputs so runs are auditable and replayable.
std::string resolved_config_json(const RunConfig& config);

}  // namespace tinydistill
