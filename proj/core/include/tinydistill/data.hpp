#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinydistill/errors.hpp"

namespace tinydistill {

// Token-id space shared by every corpus: contiguous, disjoint ranges for
// phonetic units, pitch annotations, style labels, text units, and two mode
// markers. Ids are laid out in that order starting at 0.
struct VocabLayout {
  int phonetic_size = 100;
  int pitch_size = 8;
  int style_size = 4;
  int text_size = 40;

  int phonetic_begin() const { return 0; }
  int pitch_begin() const { return phonetic_size; }
  int style_begin() const { return phonetic_size + pitch_size; }
  int text_begin() const { return phonetic_size + pitch_size + style_size; }
  int speech_marker() const { return text_begin() + text_size; }
  int text_marker() const { return speech_marker() + 1; }
  int total() const { return phonetic_size + pitch_size + style_size + text_size + 2; }

  bool is_phonetic(int id) const { return id >= 0 && id < phonetic_size; }
  bool is_pitch(int id) const { return id >= pitch_begin() && id < style_begin(); }
  bool is_style(int id) const { return id >= style_begin() && id < text_begin(); }
  bool is_text(int id) const { return id >= text_begin() && id < speech_marker(); }
  bool is_marker(int id) const { return id == speech_marker() || id == text_marker(); }

  // Each style owns a contiguous block of pitch ids; pitch annotations are
  // drawn from the active style's block, which ties the two factors together.
  int pitch_block() const { return pitch_size / style_size; }

  void validate() const;
};

// Order-1 chain over the phonetic alphabet with a known stationary
// distribution, so the exact entropy rate of every corpus is available.
struct MarkovSource {
  int vocab = 0;
  std::vector<double> transition;  // row-major [vocab, vocab], rows sum to 1
  std::vector<double> stationary;  // fixed point of the transition matrix
  std::uint64_t seed = 0;

  double prob(int from, int to) const {
    return transition[static_cast<std::size_t>(from) * vocab + to];
  }
  void validate() const;
};

// Rows drawn from a symmetric Dirichlet(concentration); the stationary
// distribution is the solution of the balance equations (direct linear
// solve, so near-reducible chains are handled exactly).
MarkovSource make_source(std::uint64_t seed, int vocab_size, double concentration);

// Exact nats/token of the chain at stationarity: sum_i pi_i * H(row_i).
double entropy_rate(const MarkovSource& source);

// First token from the stationary distribution, then chain transitions.
std::vector<int> sample_stream(const MarkovSource& source, int length, std::uint64_t seed);

// ----- expressive annotation -----

// Prepends the style token and inserts one pitch token before every
// pitch_period-th phonetic token (1-indexed). Pitch values are seeded draws
// from the style's pitch block, so two calls with the same seed but
// different styles differ exactly by the style token and a constant block
// offset on every pitch token.
std::vector<int> add_style_and_pitch(std::span<const int> phonetic, const VocabLayout& layout,
                                     int pitch_period, int style_id, std::uint64_t seed);

// Keeps only phonetic-range ids: exact inverse of the annotation step.
std::vector<int> strip_to_phonetic(std::span<const int> tokens, const VocabLayout& layout);

// ----- paired speech/text -----

// Speech tokens grouped into words, one text token per word, plus the
// utterance's style label. Boundaries are end positions, last == length.
struct PairedUtterance {
  std::vector<int> speech_tokens;
  std::vector<int> word_boundaries;
  std::vector<int> text_tokens;
  int style_id = -1;

  void validate(const VocabLayout& layout) const;
};

// End positions of fixed-size words (the final word absorbs any remainder).
std::vector<int> word_boundaries(int n_tokens, int word_len);

// One text token per word: a fixed surjective hash of the word's phonetic
// ids into the text range.
std::vector<int> transcribe(std::span<const int> phonetic, std::span<const int> boundaries,
                            const VocabLayout& layout);

PairedUtterance make_paired(const MarkovSource& source, const VocabLayout& layout, int n_words,
                            int word_len, int style_id, std::uint64_t seed);

// ----- interleaving -----

// The five modality templates for mixed sequences.
enum class Pattern { kSpeech = 0, kText = 1, kSpeechText = 2, kTextSpeech = 3,
                     kSpeechTextSpeech = 4 };

struct InterleaveResult {
  std::vector<int> tokens;
  Pattern pattern = Pattern::kSpeech;
  bool ok = false;  // false: too few words for the drawn pattern, resample
};

// Draws a pattern, splits the utterance at word boundaries into that many
// contiguous spans, and emits each span as its marker token followed by the
// span's phonetic tokens (speech) or its words' text tokens (text).
InterleaveResult interleave(const PairedUtterance& utt, const std::array<double, 5>& pattern_probs,
                            const VocabLayout& layout, std::uint64_t seed);

// ----- evaluation item sets -----

struct ClozeItem {
  std::vector<int> context;
  std::vector<int> correct;
  std::vector<int> distractor;
};

// Context and correct continuation are one chain trajectory; the distractor
// is length-matched tokens drawn independently from the stationary
// distribution, so it is locally implausible under the chain at every step.
std::vector<ClozeItem> build_cloze(const MarkovSource& source, int n_items, int ctx_len,
                                   int cont_len, std::uint64_t seed);

struct StyleItem {
  std::vector<int> context;
  std::vector<int> correct;
  std::vector<int> distractor;
  int style_id = -1;       // style carried by the context and correct side
  int distractor_style = -1;
};

// Shape of expressive documents: `segments` annotated runs of `seg_len`
// phonetic tokens over one continuous chain, all carrying the document's
// style.
struct ExpressiveSpec {
  int segments = 4;
  int seg_len = 16;
  int pitch_period = 4;

  void validate() const;
};

// Context = ctx_segments annotated segments of one document; correct = the
// next segment with the same style; distractor = the same segment with a
// different style and its pitch tokens shifted to that style's block. The
// two continuations strip to identical phonetic tokens.
std::vector<StyleItem> build_style_items(const MarkovSource& source, const VocabLayout& layout,
                                         int n_items, int ctx_segments, int seg_len,
                                         int pitch_period, std::uint64_t seed);

// ----- corpus builders -----

std::vector<std::vector<int>> build_stream_corpus(const MarkovSource& source, int n_seqs,
                                                  int seq_len, std::uint64_t seed);

std::vector<std::vector<int>> build_expressive_corpus(const MarkovSource& source,
                                                      const VocabLayout& layout,
                                                      const ExpressiveSpec& spec, int n_docs,
                                                      std::uint64_t seed);

std::vector<std::vector<int>> build_interleaved_corpus(const MarkovSource& source,
                                                       const VocabLayout& layout, int n_utts,
                                                       int n_words, int word_len,
                                                       const std::array<double, 5>& pattern_probs,
                                                       std::uint64_t seed);

// Exact expected nats per scored position (every token after the first) of
// an expressive document: chain entropy for phonetic tokens plus the
// first-token surprise under the stationary distribution, pitch-block
// entropy per annotation, and zero for the style repeats.
double expressive_entropy_rate(const MarkovSource& source, const VocabLayout& layout,
                               const ExpressiveSpec& spec);

// ----- files -----

// First line: structured header (layout, source seed, exact entropy rate,
// split name). Every further line: one space-separated token-id sequence.
struct CorpusHeader {
  VocabLayout layout;
  std::uint64_t source_seed = 0;
  double entropy_rate = 0.0;
  std::string kind;
};

struct CorpusFile {
  CorpusHeader header;
  std::vector<std::vector<int>> sequences;
};

void save_corpus(const std::string& path, const CorpusHeader& header,
                 const std::vector<std::vector<int>>& sequences);
CorpusFile load_corpus(const std::string& path);

// Line-delimited records, one item per line.
void save_cloze_items(const std::string& path, const std::vector<ClozeItem>& items);
std::vector<ClozeItem> load_cloze_items(const std::string& path);
void save_style_items(const std::string& path, const std::vector<StyleItem>& items);
std::vector<StyleItem> load_style_items(const std::string& path);

}  // namespace tinydistill
