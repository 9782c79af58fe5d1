#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tinydistill/data.hpp"
#include "tinydistill/transformer.hpp"

namespace tinydistill {

// Anything that can assign next-token log-probabilities to a sequence.
// position_logprobs returns log P(tokens[t] | tokens[0..t)) for t = 1..n-1,
// so the result has n-1 entries and the first token is never scored.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::vector<double> position_logprobs(std::span<const int> tokens) const = 0;
};

// Scores with a trained language model. Sequences longer than the model's
// context are scored in windows that overlap by one token, so every position
// after the first is scored exactly once (conditioned within its window).
template <typename T>
class ModelScorer final : public SequenceScorer {
 public:
  explicit ModelScorer(const TransformerLM<T>& model) : model_(model) {}
  std::vector<double> position_logprobs(std::span<const int> tokens) const override {
    const std::size_t window = static_cast<std::size_t>(model_.config.max_seq_len);
    if (tokens.size() <= window) return tinydistill::position_logprobs(model_, tokens);
    std::vector<double> out;
    out.reserve(tokens.size() - 1);
    for (std::size_t start = 0; start + 1 < tokens.size(); start += window - 1) {
      const auto len = std::min(window, tokens.size() - start);
      const auto part = tinydistill::position_logprobs(model_, tokens.subspan(start, len));
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

 private:
  const TransformerLM<T>& model_;
};

// Scores with the data-generating chain itself: the exact conditional
// distribution, used to calibrate the normalized score's upper end.
class TableScorer final : public SequenceScorer {
 public:
  explicit TableScorer(MarkovSource source);
  std::vector<double> position_logprobs(std::span<const int> tokens) const override;

 private:
  MarkovSource source_;
};

// Assigns 1/vocab to every token everywhere: the no-information floor.
class UniformScorer final : public SequenceScorer {
 public:
  explicit UniformScorer(int vocab);
  std::vector<double> position_logprobs(std::span<const int> tokens) const override;

 private:
  int vocab_;
};

// Mean next-token cross-entropy in nats over every scored position of the
// corpus. Every sequence must have at least 2 tokens.
double cross_entropy_nats(const SequenceScorer& scorer,
                          const std::vector<std::vector<int>>& sequences);

// exp(cross_entropy_nats)
double perplexity(const SequenceScorer& scorer, const std::vector<std::vector<int>>& sequences);

// min(1, exp(oracle_entropy - measured cross-entropy)); 1 means the scorer is
// indistinguishable from the source, lower means worse. Always in (0, 1].
double nps(const SequenceScorer& scorer, const std::vector<std::vector<int>>& sequences,
           double oracle_entropy);

// Fraction of items whose correct continuation is strictly more likely than
// the distractor given the shared context. Ties count as incorrect.
double preference_accuracy(const SequenceScorer& scorer, std::span<const ClozeItem> items);
double style_accuracy(const SequenceScorer& scorer, std::span<const StyleItem> items);

struct EvalReport {
  std::string model_id;
  std::string corpus_id;
  double perplexity = 0.0;
  double nps = 0.0;
  double preference_accuracy = -1.0;  // -1: metric not evaluated
  double style_accuracy = -1.0;
  std::int64_t n_tokens = 0;  // scored positions behind perplexity/nps
  std::int64_t n_items = 0;   // items behind the accuracy fields
};

// One deterministic JSON object per line; byte-stable for identical inputs.
std::string eval_report_line(const EvalReport& report);
void save_eval_reports(const std::string& path, const std::vector<EvalReport>& reports);
std::vector<EvalReport> load_eval_reports(const std::string& path);

}  // namespace tinydistill
