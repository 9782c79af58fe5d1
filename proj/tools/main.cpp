// tinydistill: end-to-end pipeline driver.
//   gen-data -> train-teacher -> [correct-teacher] -> init-student
//            -> distill | train-baseline -> eval
// Every stage validates its config, writes the fully-resolved config next to
// its outputs, and exits 0 only when it completed cleanly.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tinydistill/checkpoint.hpp"
#include "tinydistill/data.hpp"
#include "tinydistill/distill.hpp"
#include "tinydistill/errors.hpp"
#include "tinydistill/eval.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/runconfig.hpp"
#include "tinydistill/transformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tinydistill;

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  bool resume = false;
  std::vector<std::string> checkpoints;  // eval positionals
};

RunConfig load_cli_config(const CliOptions& opt) {
  RunConfig c = load_run_config(opt.config_path);
  if (!opt.out_override.empty()) {
    if (c.data_dir == c.out_dir + "/data") c.data_dir = opt.out_override + "/data";
    c.out_dir = opt.out_override;
  }
  if (opt.seed_set) c.master_seed = opt.seed_override;
  c.validate();
  return c;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// every stage drops the resolved config beside its outputs
void write_resolved(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "resolved_config.json", resolved_config_json(c));
}

CorpusFile load_corpus_checked(const RunConfig& c, const std::string& name) {
  const fs::path path = fs::path(c.data_dir) / name;
  if (!fs::exists(path))
    throw IoError("corpus not found: " + path.string() + " (run gen-data first)");
  return load_corpus(path.string());
}

json record_line(const std::string& stage, const TrainStepRecord& r) {
  return json{{"stage", stage},          {"step", r.step},
              {"loss_lm", r.loss_lm},    {"loss_align", r.loss_align},
              {"loss_output", r.loss_output}, {"loss_total", r.loss_total},
              {"wall_ms", r.wall_ms}};
}

void append_metric_lines(const fs::path& path, const std::vector<json>& lines, bool append) {
  std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& l : lines) out << l.dump() << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------- gen-data ----------

int cmd_gen_data(const RunConfig& c) {
  fs::create_directories(c.data_dir);
  write_resolved(c, c.out_dir);
  write_resolved(c, c.data_dir);

  const auto& d = c.data;
  auto pre = make_source(d.pretrain_seed, c.layout.phonetic_size, d.concentration);
  auto tgt = make_source(d.target_seed, c.layout.phonetic_size, d.concentration);
  const double h_pre = entropy_rate(pre);
  const double h_tgt = entropy_rate(tgt);
  const double h_exp = expressive_entropy_rate(pre, c.layout, d.expressive);
  auto seed = [&](std::uint64_t k) { return Rng::mix(d.sample_seed, k); };
  auto out = [&](const char* name) { return (fs::path(c.data_dir) / name).string(); };

  save_corpus(out("pretrain.corpus"), {c.layout, pre.seed, h_pre, "stream"},
              build_stream_corpus(pre, d.n_train_seqs, d.seq_len, seed(1)));
  save_corpus(out("pretrain_eval.corpus"), {c.layout, pre.seed, h_pre, "stream"},
              build_stream_corpus(pre, d.n_eval_seqs, d.eval_seq_len, seed(2)));
  save_corpus(out("target.corpus"), {c.layout, tgt.seed, h_tgt, "stream"},
              build_stream_corpus(tgt, d.n_train_seqs, d.seq_len, seed(3)));
  save_corpus(out("target_eval.corpus"), {c.layout, tgt.seed, h_tgt, "stream"},
              build_stream_corpus(tgt, d.n_eval_seqs, d.eval_seq_len, seed(4)));
  save_corpus(out("interleaved.corpus"), {c.layout, pre.seed, h_pre, "interleaved"},
              build_interleaved_corpus(pre, c.layout, d.interleaved_utts, d.interleaved_words,
                                       d.interleaved_word_len, d.pattern_probs, seed(5)));
  save_corpus(out("expressive.corpus"), {c.layout, pre.seed, h_exp, "expressive"},
              build_expressive_corpus(pre, c.layout, d.expressive, d.expressive_docs, seed(6)));
  save_corpus(out("expressive_eval.corpus"), {c.layout, pre.seed, h_exp, "expressive"},
              build_expressive_corpus(pre, c.layout, d.expressive, d.n_eval_seqs, seed(7)));
  save_cloze_items(out("cloze.items"),
                   build_cloze(pre, d.cloze_items, d.cloze_ctx_len, d.cloze_cont_len, seed(8)));
  save_style_items(out("style.items"),
                   build_style_items(pre, c.layout, d.style_items, d.style_ctx_segments,
                                     d.expressive.seg_len, d.expressive.pitch_period, seed(9)));

  std::cout << "gen-data: wrote 7 corpora + 2 item sets to " << c.data_dir << "\n"
            << "  pretrain chain entropy " << h_pre << " nats/token\n"
            << "  target chain entropy   " << h_tgt << " nats/token\n"
            << "  expressive stream rate " << h_exp << " nats/token\n";
  return 0;
}

// ---------- shared training plumbing ----------

struct StagePaths {
  std::string stage;  // metadata tag and metrics prefix
  fs::path final_file;
  fs::path partial_file;
  fs::path metrics_file;
};

StagePaths stage_paths(const RunConfig& c, const std::string& stage, const std::string& final_name) {
  const fs::path base(c.out_dir);
  return {stage, base / final_name, base / (final_name + ".partial"),
          base / ("metrics_" + stage + ".jsonl")};
}

struct PreparedStage {
  TransformerLM<float> model;
  AdamState<float> opt;
  int start_step = 0;
  bool already_done = false;
};

// fresh start, or pick up the rolling snapshot when --resume is given
PreparedStage prepare_stage(const StagePaths& sp, bool resume,
                            const std::function<TransformerLM<float>()>& fresh) {
  PreparedStage p;
  if (resume && fs::exists(sp.final_file)) {
    std::cout << sp.stage << ": " << sp.final_file.string() << " already complete\n";
    p.already_done = true;
    return p;
  }
  if (resume && fs::exists(sp.partial_file)) {
    auto loaded = load_checkpoint(sp.partial_file.string());
    if (loaded.meta.stage != sp.stage)
      throw IoError("snapshot " + sp.partial_file.string() + " belongs to stage \"" +
                    loaded.meta.stage + "\"");
    if (!loaded.opt)
      throw IoError("snapshot " + sp.partial_file.string() + " carries no optimizer state");
    p.model = std::move(loaded.model);
    p.opt = std::move(*loaded.opt);
    p.start_step = static_cast<int>(loaded.meta.step);
    std::cout << sp.stage << ": resuming from step " << p.start_step << "\n";
    return p;
  }
  p.model = fresh();
  return p;
}

// periodic resumable snapshots during a stage
StepCallback snapshot_callback(const RunConfig& c, const StagePaths& sp,
                               const TransformerLM<float>& model, const AdamState<float>& opt,
                               int total_steps) {
  if (c.snapshot_interval <= 0) return {};
  return [&, total_steps](int done) {
    if (done % c.snapshot_interval == 0 && done < total_steps)
      save_checkpoint(sp.partial_file.string(), model,
                      CheckpointMeta{sp.stage, c.master_seed, done}, &opt);
  };
}

void finish_stage(const RunConfig& c, const StagePaths& sp, const TransformerLM<float>& model,
                  const AdamState<float>& opt, const TrainConfig& tcfg, const TrainReport& report,
                  bool resumed) {
  save_checkpoint(sp.final_file.string(), model, CheckpointMeta{sp.stage, c.master_seed, tcfg.steps},
                  &opt);
  std::vector<json> lines;
  lines.reserve(report.records.size());
  for (const auto& r : report.records) lines.push_back(record_line(sp.stage, r));
  append_metric_lines(sp.metrics_file, lines, resumed);
  std::cout << sp.stage << ": " << report.steps_run << " steps, final loss " << report.final_loss
            << ", saved " << sp.final_file.string() << "\n";
}

int run_lm_stage(const RunConfig& c, const CliOptions& opt, const std::string& stage,
                 const std::string& final_name, const std::string& corpus_name,
                 const ModelConfig& mcfg, std::uint64_t init_seed, TrainConfig tcfg) {
  write_resolved(c, c.out_dir);
  const auto corpus = load_corpus_checked(c, corpus_name).sequences;
  const auto sp = stage_paths(c, stage, final_name);
  auto prepared = prepare_stage(sp, opt.resume, [&] {
    return TransformerLM<float>::random_init(mcfg, init_seed);
  });
  if (prepared.already_done) return 0;

  auto callback = snapshot_callback(c, sp, prepared.model, prepared.opt, tcfg.steps);
  const auto report =
      train_lm(prepared.model, corpus, tcfg, &prepared.opt, prepared.start_step, callback);
  finish_stage(c, sp, prepared.model, prepared.opt, tcfg, report, prepared.start_step > 0);
  return 0;
}

// ---------- train stages ----------

int cmd_train_teacher(const RunConfig& c, const CliOptions& opt) {
  return run_lm_stage(c, opt, "teacher", "teacher.twck", c.stages.teacher_corpus, c.teacher,
                      c.teacher_init_seed(), c.stage_train_teacher());
}

int cmd_train_baseline(const RunConfig& c, const CliOptions& opt) {
  // the scratch control consumes exactly the distillation token budget
  const auto d = c.stage_train_distill();
  const auto b = c.stage_train_baseline();
  const std::int64_t budget_d = std::int64_t(d.steps) * d.batch_size * d.seq_len;
  const std::int64_t budget_b = std::int64_t(b.steps) * b.batch_size * b.seq_len;
  if (budget_b != budget_d)
    throw ConfigError("train_baseline token budget (" + std::to_string(budget_b) +
                      ") must equal train_distill's (" + std::to_string(budget_d) + ")");
  return run_lm_stage(c, opt, "baseline", "baseline.twck", c.stages.baseline_corpus, c.student,
                      c.baseline_init_seed(), b);
}

int cmd_correct_teacher(const RunConfig& c, const CliOptions& opt) {
  if (opt.resume)
    throw ConfigError("correct-teacher does not support --resume (adapter state is not persisted)");
  write_resolved(c, c.out_dir);

  const fs::path teacher_path = fs::path(c.out_dir) / "teacher.twck";
  if (!fs::exists(teacher_path))
    throw IoError("teacher checkpoint not found: " + teacher_path.string());
  auto loaded = load_checkpoint(teacher_path.string());

  const auto train_corpus = load_corpus_checked(c, c.stages.correct_corpus).sequences;
  const auto probe_corpus = load_corpus_checked(c, c.stages.correct_eval_corpus).sequences;

  const double ppl_pre = perplexity(ModelScorer<float>(loaded.model), probe_corpus);
  auto corrected = teacher_correct(std::move(loaded.model), train_corpus, c.lora,
                                   c.stage_train_correct());
  const double ppl_post = perplexity(ModelScorer<float>(corrected), probe_corpus);

  const auto sp = stage_paths(c, "teacher-corrected", "teacher_corrected.twck");
  save_checkpoint(sp.final_file.string(), corrected,
                  CheckpointMeta{sp.stage, c.master_seed, c.train_correct.steps});
  append_metric_lines(sp.metrics_file,
                      {json{{"stage", sp.stage},
                            {"steps", c.train_correct.steps},
                            {"target_ppl_pre", ppl_pre},
                            {"target_ppl_post", ppl_post}}},
                      false);
  std::cout << "teacher-corrected: target-corpus perplexity " << ppl_pre << " -> " << ppl_post
            << ", saved " << sp.final_file.string() << "\n";
  return 0;
}

int cmd_init_student(const RunConfig& c, const CliOptions&) {
  write_resolved(c, c.out_dir);
  const fs::path teacher_path = fs::path(c.out_dir) / c.stages.distill_teacher;
  if (!fs::exists(teacher_path))
    throw IoError("teacher checkpoint not found: " + teacher_path.string());
  auto teacher = load_checkpoint(teacher_path.string());
  if (!teacher.model.config.same_width(c.student))
    throw ConfigError("student config width does not match the teacher checkpoint");

  auto student = prune_init(teacher.model, c.distill.map, c.student.n_layers);

  // verify every copied tensor content-hash-equal to its source
  std::vector<json> lines;
  bool all_match = true;
  auto teacher_named = teacher.model.named_parameters();
  auto student_named = student.named_parameters();
  auto hash_of = [](const auto& named, const std::string& name) -> std::uint64_t {
    for (const auto& [n, t] : named)
      if (n == name) return tensor_content_hash(*t);
    throw UsageError("tensor not found: " + name);
  };
  for (const char* name : {"tok_emb", "final_norm", "lm_head"}) {
    const bool match = hash_of(teacher_named, name) == hash_of(student_named, name);
    all_match &= match;
    lines.push_back(json{{"stage", "student-init"}, {"tensor", name}, {"hash_match", match}});
  }
  const char* block_tensors[] = {"wq", "wk", "wv", "wo", "w_gate", "w_up",
                                 "w_down", "attn_norm", "ff_norm"};
  for (int l = 0; l < c.student.n_layers; ++l) {
    const int g = c.distill.map.teacher_layer(l);
    bool match = true;
    for (const char* t : block_tensors)
      match &= hash_of(teacher_named, "blocks." + std::to_string(g) + "." + t) ==
               hash_of(student_named, "blocks." + std::to_string(l) + "." + t);
    all_match &= match;
    lines.push_back(json{{"stage", "student-init"},
                         {"student_layer", l},
                         {"teacher_layer", g},
                         {"hash_match", match}});
  }

  const auto sp = stage_paths(c, "student-init", "student_init.twck");
  save_checkpoint(sp.final_file.string(), student, CheckpointMeta{sp.stage, c.master_seed, 0});
  append_metric_lines(sp.metrics_file, lines, false);
  std::cout << "student-init: " << c.student.n_layers << " layers copied from teacher layers {";
  for (int l = 0; l < c.student.n_layers; ++l)
    std::cout << (l ? "," : "") << c.distill.map.teacher_layer(l);
  std::cout << "}, hashes " << (all_match ? "verified" : "MISMATCHED") << ", saved "
            << sp.final_file.string() << "\n";
  return all_match ? 0 : 1;
}

int cmd_distill(const RunConfig& c, const CliOptions& opt) {
  write_resolved(c, c.out_dir);
  const fs::path teacher_path = fs::path(c.out_dir) / c.stages.distill_teacher;
  const fs::path init_path = fs::path(c.out_dir) / "student_init.twck";
  if (!fs::exists(teacher_path))
    throw IoError("teacher checkpoint not found: " + teacher_path.string());
  auto teacher = load_checkpoint(teacher_path.string());

  const auto corpus = load_corpus_checked(c, c.stages.distill_corpus).sequences;
  const auto sp = stage_paths(c, "distilled", "student_distilled.twck");
  auto prepared = prepare_stage(sp, opt.resume, [&] {
    if (!fs::exists(init_path))
      throw IoError("student checkpoint not found: " + init_path.string() +
                    " (run init-student first)");
    return load_checkpoint(init_path.string()).model;
  });
  if (prepared.already_done) return 0;

  const auto tcfg = c.stage_train_distill();
  auto callback = snapshot_callback(c, sp, prepared.model, prepared.opt, tcfg.steps);
  const auto report = distill_train(teacher.model, prepared.model, corpus, c.distill, tcfg,
                                    &prepared.opt, prepared.start_step, callback);
  finish_stage(c, sp, prepared.model, prepared.opt, tcfg, report, prepared.start_step > 0);
  return 0;
}

// ---------- eval ----------

int stage_rank(const std::string& stage) {
  if (stage == "teacher") return 0;
  if (stage == "teacher-corrected") return 1;
  if (stage == "student-init") return 2;
  if (stage == "distilled") return 3;
  if (stage == "baseline") return 4;
  return 5;
}

int cmd_eval(const RunConfig& c, const CliOptions& opt) {
  if (opt.checkpoints.empty()) throw UsageError("eval: pass at least one checkpoint path");
  write_resolved(c, c.out_dir);

  const auto corpus = load_corpus_checked(c, c.stages.eval_corpus);
  const fs::path cloze_path = fs::path(c.data_dir) / c.stages.eval_cloze;
  const fs::path style_path = fs::path(c.data_dir) / c.stages.eval_style;
  if (!fs::exists(cloze_path)) throw IoError("item file not found: " + cloze_path.string());
  if (!fs::exists(style_path)) throw IoError("item file not found: " + style_path.string());
  const auto cloze = load_cloze_items(cloze_path.string());
  const auto style = load_style_items(style_path.string());

  std::int64_t scored = 0;
  for (const auto& s : corpus.sequences) scored += static_cast<std::int64_t>(s.size()) - 1;

  std::vector<std::pair<int, EvalReport>> rows;
  int order = 0;
  for (const auto& arg : opt.checkpoints) {
    fs::path path(arg);
    if (!fs::exists(path)) path = fs::path(c.out_dir) / arg;  // bare names live in out_dir
    if (!fs::exists(path)) throw IoError("checkpoint not found: " + arg);
    auto loaded = load_checkpoint(path.string());
    ModelScorer<float> scorer(loaded.model);

    EvalReport r;
    r.model_id = loaded.meta.stage;
    r.corpus_id = c.stages.eval_corpus;
    r.perplexity = perplexity(scorer, corpus.sequences);
    r.nps = nps(scorer, corpus.sequences, corpus.header.entropy_rate);
    r.preference_accuracy = preference_accuracy(scorer, cloze);
    r.style_accuracy = style_accuracy(scorer, style);
    r.n_tokens = scored;
    r.n_items = static_cast<std::int64_t>(cloze.size());
    rows.emplace_back(stage_rank(r.model_id) * 1000 + order++, std::move(r));
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<EvalReport> reports;
  reports.reserve(rows.size());
  for (auto& [rank, r] : rows) reports.push_back(std::move(r));
  const fs::path report_path = fs::path(c.out_dir) / "eval_report.jsonl";
  save_eval_reports(report_path.string(), reports);

  std::cout << "model               perplexity      nps    cloze    style\n";
  std::cout << "-----------------------------------------------------------\n";
  char line[160];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-18s %11.4f %8.4f %8.4f %8.4f\n", r.model_id.c_str(),
                  r.perplexity, r.nps, r.preference_accuracy, r.style_accuracy);
    std::cout << line;
  }
  std::cout << "wrote " << report_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layer-aligned distillation pipeline for synthetic token streams"};
  app.require_subcommand(1);

  CliOptions opt;
  auto add_common = [&](CLI::App* sc, bool with_resume) {
    sc->add_option("--config", opt.config_path, "pipeline config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sc->add_option("--out", opt.out_override, "override the config's out_dir");
    sc->add_option("--seed", opt.seed_override, "override master_seed")
        ->each([&](const std::string&) { opt.seed_set = true; });
    if (with_resume)
      sc->add_flag("--resume", opt.resume, "continue from the last snapshot if present");
    return sc;
  };

  auto* gen = add_common(app.add_subcommand("gen-data", "generate corpora and item sets"), false);
  auto* teach = add_common(app.add_subcommand("train-teacher", "train the teacher"), true);
  auto* correct = app.add_subcommand("correct-teacher", "adapter fine-tune on the target corpus");
  add_common(correct, false);
  correct->add_flag("--resume", opt.resume, "(rejected: correction is not resumable)");
  auto* init = add_common(app.add_subcommand("init-student", "prune the teacher into a student"),
                          false);
  auto* dist = add_common(app.add_subcommand("distill", "train the student against the teacher"),
                          true);
  auto* base = add_common(app.add_subcommand("train-baseline", "train the scratch control"), true);
  auto* ev = add_common(app.add_subcommand("eval", "score checkpoints side by side"), false);
  ev->add_option("checkpoints", opt.checkpoints, "checkpoint files to score")->expected(-1);

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig config = load_cli_config(opt);
    if (gen->parsed()) return cmd_gen_data(config);
    if (teach->parsed()) return cmd_train_teacher(config, opt);
    if (correct->parsed()) return cmd_correct_teacher(config, opt);
    if (init->parsed()) return cmd_init_student(config, opt);
    if (dist->parsed()) return cmd_distill(config, opt);
    if (base->parsed()) return cmd_train_baseline(config, opt);
    if (ev->parsed()) return cmd_eval(config, opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
