#include "tinydistill/eval.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "tinydistill/errors.hpp"

namespace tinydistill {

using nlohmann::json;

TableScorer::TableScorer(MarkovSource source) : source_(std::move(source)) {
  source_.validate();
}

std::vector<double> TableScorer::position_logprobs(std::span<const int> tokens) const {
  if (tokens.size() < 2) throw UsageError("scorer: need at least 2 tokens to score");
  std::vector<double> out;
  out.reserve(tokens.size() - 1);
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    const int prev = tokens[t - 1];
    const int next = tokens[t];
    if (prev < 0 || prev >= source_.vocab || next < 0 || next >= source_.vocab)
      throw DomainError("scorer: token id outside the chain vocabulary");
    out.push_back(std::log(std::max(source_.prob(prev, next), 1e-300)));
  }
  return out;
}

UniformScorer::UniformScorer(int vocab) : vocab_(vocab) {
  if (vocab < 1) throw ConfigError("scorer: vocabulary must be positive");
}

std::vector<double> UniformScorer::position_logprobs(std::span<const int> tokens) const {
  if (tokens.size() < 2) throw UsageError("scorer: need at least 2 tokens to score");
  return std::vector<double>(tokens.size() - 1, -std::log(static_cast<double>(vocab_)));
}

double cross_entropy_nats(const SequenceScorer& scorer,
                          const std::vector<std::vector<int>>& sequences) {
  if (sequences.empty()) throw UsageError("perplexity: corpus is empty");
  double nats = 0.0;
  std::int64_t scored = 0;
  for (const auto& seq : sequences) {
    if (seq.size() < 2) throw UsageError("perplexity: every sequence needs at least 2 tokens");
    for (double lp : scorer.position_logprobs(seq)) {
      nats -= lp;
      ++scored;
    }
  }
  return nats / static_cast<double>(scored);
}

double perplexity(const SequenceScorer& scorer, const std::vector<std::vector<int>>& sequences) {
  return std::exp(cross_entropy_nats(scorer, sequences));
}

double nps(const SequenceScorer& scorer, const std::vector<std::vector<int>>& sequences,
           double oracle_entropy) {
  return std::min(1.0, std::exp(oracle_entropy - cross_entropy_nats(scorer, sequences)));
}

namespace {

// conditional log-probability of a continuation given a shared context
double continuation_logprob(const SequenceScorer& scorer, const std::vector<int>& context,
                            const std::vector<int>& continuation) {
  std::vector<int> full = context;
  full.insert(full.end(), continuation.begin(), continuation.end());
  const auto lps = scorer.position_logprobs(full);
  double lp = 0.0;
  // entries [context.size()-1, end) score exactly the continuation tokens
  for (std::size_t i = context.size() - 1; i < lps.size(); ++i) lp += lps[i];
  return lp;
}

template <typename Item>
double pairwise_accuracy(const SequenceScorer& scorer, std::span<const Item> items) {
  if (items.empty()) throw UsageError("accuracy: item list is empty");
  int correct = 0;
  for (const auto& it : items) {
    if (it.context.empty() || it.correct.empty() || it.correct.size() != it.distractor.size())
      throw DomainError("accuracy: malformed item");
    const double good = continuation_logprob(scorer, it.context, it.correct);
    const double bad = continuation_logprob(scorer, it.context, it.distractor);
    if (good > bad) ++correct;  // ties score as incorrect
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

}  // namespace

double preference_accuracy(const SequenceScorer& scorer, std::span<const ClozeItem> items) {
  return pairwise_accuracy(scorer, items);
}

double style_accuracy(const SequenceScorer& scorer, std::span<const StyleItem> items) {
  return pairwise_accuracy(scorer, items);
}

std::string eval_report_line(const EvalReport& report) {
  json j{{"model_id", report.model_id},
         {"corpus_id", report.corpus_id},
         {"perplexity", report.perplexity},
         {"nps", report.nps},
         {"preference_accuracy", report.preference_accuracy},
         {"style_accuracy", report.style_accuracy},
         {"n_tokens", report.n_tokens},
         {"n_items", report.n_items}};
  return j.dump();
}

void save_eval_reports(const std::string& path, const std::vector<EvalReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& r : reports) out << eval_report_line(r) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

std::vector<EvalReport> load_eval_reports(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<EvalReport> reports;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      EvalReport r;
      r.model_id = j.at("model_id").get<std::string>();
      r.corpus_id = j.at("corpus_id").get<std::string>();
      r.perplexity = j.at("perplexity").get<double>();
      r.nps = j.at("nps").get<double>();
      r.preference_accuracy = j.at("preference_accuracy").get<double>();
      r.style_accuracy = j.at("style_accuracy").get<double>();
      r.n_tokens = j.at("n_tokens").get<std::int64_t>();
      r.n_items = j.at("n_items").get<std::int64_t>();
      reports.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError("eval report line is malformed: " + std::string(e.what()));
    }
  }
  return reports;
}

}  // namespace tinydistill
