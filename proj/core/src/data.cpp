#include "tinydistill/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "json.hpp"
#include "tinydistill/rng.hpp"

namespace tinydistill {

using nlohmann::json;

// ===== layout / source =====

void VocabLayout::validate() const {
  if (phonetic_size < 2) throw ConfigError("layout: phonetic range needs at least 2 ids");
  if (pitch_size < 1 || style_size < 1 || text_size < 1)
    throw ConfigError("layout: every range needs at least 1 id");
  if (pitch_size % style_size != 0)
    throw ConfigError("layout: pitch range must split evenly across styles");
}

void MarkovSource::validate() const {
  if (vocab < 2) throw ConfigError("source: vocabulary needs at least 2 states");
  if (transition.size() != static_cast<std::size_t>(vocab) * vocab ||
      stationary.size() != static_cast<std::size_t>(vocab))
    throw ConfigError("source: matrix/stationary sizes do not match the vocabulary");
  for (double p : transition)
    if (!std::isfinite(p) || p < 0.0 || p > 1.0)
      throw DomainError("source: transition entries must lie in [0, 1]");
  for (double p : stationary)
    if (!std::isfinite(p) || p < 0.0)
      throw DomainError("source: stationary entries must be non-negative");
  for (int i = 0; i < vocab; ++i) {
    double s = 0.0;
    for (int j = 0; j < vocab; ++j) s += prob(i, j);
    if (std::abs(s - 1.0) > 1e-9)
      throw DomainError("source: transition row " + std::to_string(i) + " sums to " +
                        std::to_string(s));
  }
  double s = 0.0;
  for (int j = 0; j < vocab; ++j) {
    double pj = 0.0;
    for (int i = 0; i < vocab; ++i) pj += stationary[static_cast<std::size_t>(i)] * prob(i, j);
    if (std::abs(pj - stationary[static_cast<std::size_t>(j)]) > 1e-8)
      throw DomainError("source: stationary distribution is not a fixed point");
    s += stationary[static_cast<std::size_t>(j)];
  }
  if (std::abs(s - 1.0) > 1e-9) throw DomainError("source: stationary does not sum to 1");
}

MarkovSource make_source(std::uint64_t seed, int vocab_size, double concentration) {
  if (vocab_size < 2) throw ConfigError("make_source: vocab_size must be at least 2");
  if (concentration <= 0.0) throw ConfigError("make_source: concentration must be positive");

  MarkovSource src;
  src.vocab = vocab_size;
  src.seed = seed;
  src.transition.resize(static_cast<std::size_t>(vocab_size) * vocab_size);
  Rng rng(seed);
  for (int i = 0; i < vocab_size; ++i) {
    auto row = rng.dirichlet(vocab_size, concentration);
    std::copy(row.begin(), row.end(),
              src.transition.begin() + static_cast<std::size_t>(i) * vocab_size);
  }

  // stationary distribution: solve (P^T - I) pi = 0 with the normalization
  // row sum(pi) = 1 substituted for the last (redundant) equation
  Eigen::MatrixXd a(vocab_size, vocab_size);
  for (int j = 0; j < vocab_size; ++j)
    for (int i = 0; i < vocab_size; ++i) a(j, i) = src.prob(i, j) - (i == j ? 1.0 : 0.0);
  a.row(vocab_size - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(vocab_size);
  b(vocab_size - 1) = 1.0;
  Eigen::VectorXd pi = a.partialPivLu().solve(b);

  src.stationary.resize(static_cast<std::size_t>(vocab_size));
  double total = 0.0;
  for (int i = 0; i < vocab_size; ++i) {
    src.stationary[static_cast<std::size_t>(i)] = std::max(pi(i), 0.0);
    total += src.stationary[static_cast<std::size_t>(i)];
  }
  for (double& p : src.stationary) p /= total;
  src.validate();
  return src;
}

double entropy_rate(const MarkovSource& source) {
  source.validate();
  double h = 0.0;
  for (int i = 0; i < source.vocab; ++i) {
    double row_h = 0.0;
    for (int j = 0; j < source.vocab; ++j) {
      const double p = source.prob(i, j);
      if (p > 0.0) row_h -= p * std::log(p);
    }
    h += source.stationary[static_cast<std::size_t>(i)] * row_h;
  }
  return h;
}

namespace {

int chain_step(const MarkovSource& src, int state, Rng& rng) {
  std::span<const double> row(src.transition.data() + static_cast<std::size_t>(state) * src.vocab,
                              static_cast<std::size_t>(src.vocab));
  return rng.categorical(row);
}

// length tokens, first from the stationary distribution, using `rng`
std::vector<int> chain_walk(const MarkovSource& src, int length, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(length));
  int state = rng.categorical(src.stationary);
  out.push_back(state);
  for (int i = 1; i < length; ++i) {
    state = chain_step(src, state, rng);
    out.push_back(state);
  }
  return out;
}

}  // namespace

std::vector<int> sample_stream(const MarkovSource& source, int length, std::uint64_t seed) {
  if (length < 1) throw UsageError("sample_stream: length must be at least 1");
  Rng rng(seed);
  return chain_walk(source, length, rng);
}

// ===== expressive annotation =====

std::vector<int> add_style_and_pitch(std::span<const int> phonetic, const VocabLayout& layout,
                                     int pitch_period, int style_id, std::uint64_t seed) {
  layout.validate();
  if (pitch_period < 1) throw DomainError("annotate: pitch_period must be at least 1");
  if (!layout.is_style(style_id)) throw DomainError("annotate: style id outside the style range");
  for (int t : phonetic)
    if (!layout.is_phonetic(t)) throw DomainError("annotate: input must be phonetic ids");

  const int n = static_cast<int>(phonetic.size());
  const int block = layout.pitch_block();
  const int block_begin = layout.pitch_begin() + (style_id - layout.style_begin()) * block;

  Rng rng(seed);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n + 1 + n / pitch_period));
  out.push_back(style_id);
  for (int i = 1; i <= n; ++i) {
    if (i % pitch_period == 0) out.push_back(block_begin + rng.uniform_int(block));
    out.push_back(phonetic[static_cast<std::size_t>(i - 1)]);
  }
  return out;
}

std::vector<int> strip_to_phonetic(std::span<const int> tokens, const VocabLayout& layout) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (int t : tokens)
    if (layout.is_phonetic(t)) out.push_back(t);
  return out;
}

// ===== paired speech/text =====

std::vector<int> word_boundaries(int n_tokens, int word_len) {
  if (n_tokens < 1) throw DomainError("word_boundaries: need at least one token");
  if (word_len < 1) throw DomainError("word_boundaries: word_len must be at least 1");
  std::vector<int> out;
  for (int b = word_len; b <= n_tokens; b += word_len) out.push_back(b);
  if (out.empty())
    out.push_back(n_tokens);  // a single short word
  else if (out.back() != n_tokens)
    out.back() = n_tokens;  // final word absorbs the remainder
  return out;
}

namespace {

void check_boundaries(std::span<const int> boundaries, int n_tokens) {
  if (boundaries.empty()) throw DomainError("boundaries: empty");
  int prev = 0;
  for (int b : boundaries) {
    if (b <= prev) throw DomainError("boundaries: positions must be strictly ascending");
    prev = b;
  }
  if (prev != n_tokens) throw DomainError("boundaries: last position must equal the length");
}

}  // namespace

std::vector<int> transcribe(std::span<const int> phonetic, std::span<const int> boundaries,
                            const VocabLayout& layout) {
  layout.validate();
  check_boundaries(boundaries, static_cast<int>(phonetic.size()));
  std::vector<int> text;
  text.reserve(boundaries.size());
  int start = 0;
  for (int end : boundaries) {
    // FNV-1a over the word's ids, folded into the text range
    std::uint64_t h = 1469598103934665603ull;
    for (int i = start; i < end; ++i) {
      h ^= static_cast<std::uint64_t>(phonetic[static_cast<std::size_t>(i)]);
      h *= 1099511628211ull;
    }
    text.push_back(layout.text_begin() +
                   static_cast<int>(h % static_cast<std::uint64_t>(layout.text_size)));
    start = end;
  }
  return text;
}

void PairedUtterance::validate(const VocabLayout& layout) const {
  check_boundaries(word_boundaries, static_cast<int>(speech_tokens.size()));
  if (text_tokens.size() != word_boundaries.size())
    throw DomainError("utterance: one text token per word required");
  for (int t : speech_tokens)
    if (!layout.is_phonetic(t)) throw DomainError("utterance: speech tokens must be phonetic");
  for (int t : text_tokens)
    if (!layout.is_text(t)) throw DomainError("utterance: text tokens outside the text range");
  if (!layout.is_style(style_id)) throw DomainError("utterance: style id outside the style range");
}

PairedUtterance make_paired(const MarkovSource& source, const VocabLayout& layout, int n_words,
                            int word_len, int style_id, std::uint64_t seed) {
  if (n_words < 1) throw DomainError("make_paired: need at least one word");
  PairedUtterance utt;
  utt.speech_tokens = sample_stream(source, n_words * word_len, seed);
  utt.word_boundaries = word_boundaries(n_words * word_len, word_len);
  utt.text_tokens = transcribe(utt.speech_tokens, utt.word_boundaries, layout);
  utt.style_id = style_id;
  utt.validate(layout);
  return utt;
}

// ===== interleaving =====

InterleaveResult interleave(const PairedUtterance& utt, const std::array<double, 5>& pattern_probs,
                            const VocabLayout& layout, std::uint64_t seed) {
  utt.validate(layout);
  double sum = 0.0;
  for (double p : pattern_probs) {
    if (p < 0.0) throw DomainError("interleave: pattern probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw DomainError("interleave: pattern probabilities must sum to 1");

  Rng rng(seed);
  const auto pattern = static_cast<Pattern>(
      rng.categorical(std::span<const double>(pattern_probs.data(), pattern_probs.size())));
  const int words = static_cast<int>(utt.word_boundaries.size());
  const int spans = pattern == Pattern::kSpeechTextSpeech
                        ? 3
                        : (pattern == Pattern::kSpeech || pattern == Pattern::kText ? 1 : 2);

  InterleaveResult res;
  res.pattern = pattern;
  if (words < spans) return res;  // ok stays false: caller resamples

  // split points in word units, strictly inside (0, words)
  int s1 = 0, s2 = 0;
  if (spans == 2) {
    s1 = 1 + rng.uniform_int(words - 1);
  } else if (spans == 3) {
    int g1 = rng.uniform_int(words - 1);
    int g2 = rng.uniform_int(words - 2);
    if (g2 >= g1) ++g2;  // uniform distinct pair of gaps
    s1 = 1 + std::min(g1, g2);
    s2 = 1 + std::max(g1, g2);
  }

  auto word_start = [&](int w) { return w == 0 ? 0 : utt.word_boundaries[static_cast<std::size_t>(w - 1)]; };
  auto emit_speech = [&](int w0, int w1) {
    res.tokens.push_back(layout.speech_marker());
    for (int p = word_start(w0); p < word_start(w1); ++p)
      res.tokens.push_back(utt.speech_tokens[static_cast<std::size_t>(p)]);
  };
  auto emit_text = [&](int w0, int w1) {
    res.tokens.push_back(layout.text_marker());
    for (int w = w0; w < w1; ++w)
      res.tokens.push_back(utt.text_tokens[static_cast<std::size_t>(w)]);
  };

  switch (pattern) {
    case Pattern::kSpeech: emit_speech(0, words); break;
    case Pattern::kText: emit_text(0, words); break;
    case Pattern::kSpeechText:
      emit_speech(0, s1);
      emit_text(s1, words);
      break;
    case Pattern::kTextSpeech:
      emit_text(0, s1);
      emit_speech(s1, words);
      break;
    case Pattern::kSpeechTextSpeech:
      emit_speech(0, s1);
      emit_text(s1, s2);
      emit_speech(s2, words);
      break;
  }
  res.ok = true;
  return res;
}

// ===== evaluation item sets =====

std::vector<ClozeItem> build_cloze(const MarkovSource& source, int n_items, int ctx_len,
                                   int cont_len, std::uint64_t seed) {
  if (n_items < 1) throw UsageError("build_cloze: need at least one item");
  if (ctx_len < 1 || cont_len < 1)
    throw DomainError("build_cloze: context and continuation lengths must be at least 1");
  source.validate();

  Rng rng(seed);
  std::vector<ClozeItem> items;
  items.reserve(static_cast<std::size_t>(n_items));
  for (int k = 0; k < n_items; ++k) {
    auto traj = chain_walk(source, ctx_len + cont_len, rng);
    ClozeItem item;
    item.context.assign(traj.begin(), traj.begin() + ctx_len);
    item.correct.assign(traj.begin() + ctx_len, traj.end());
    do {
      item.distractor.clear();
      for (int i = 0; i < cont_len; ++i) item.distractor.push_back(rng.categorical(source.stationary));
    } while (item.distractor == item.correct);
    items.push_back(std::move(item));
  }
  return items;
}

void ExpressiveSpec::validate() const {
  if (segments < 1) throw ConfigError("expressive: segments must be at least 1");
  if (seg_len < 1) throw ConfigError("expressive: seg_len must be at least 1");
  if (pitch_period < 1) throw ConfigError("expressive: pitch_period must be at least 1");
}

std::vector<StyleItem> build_style_items(const MarkovSource& source, const VocabLayout& layout,
                                         int n_items, int ctx_segments, int seg_len,
                                         int pitch_period, std::uint64_t seed) {
  if (n_items < 1) throw UsageError("build_style_items: need at least one item");
  if (ctx_segments < 1) throw DomainError("build_style_items: need at least one context segment");
  if (seg_len < 1 || pitch_period < 1)
    throw DomainError("build_style_items: segment shape must be positive");
  layout.validate();
  if (layout.style_size < 2)
    throw ConfigError("build_style_items: need at least two styles to contrast");
  source.validate();

  std::vector<StyleItem> items;
  items.reserve(static_cast<std::size_t>(n_items));
  for (int k = 0; k < n_items; ++k) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(k)));
    const int style_idx = rng.uniform_int(layout.style_size);
    const int other_idx = (style_idx + 1 + rng.uniform_int(layout.style_size - 1)) %
                          layout.style_size;
    const int style = layout.style_begin() + style_idx;
    const int other = layout.style_begin() + other_idx;

    auto chain = chain_walk(source, (ctx_segments + 1) * seg_len, rng);
    StyleItem item;
    item.style_id = style;
    item.distractor_style = other;
    for (int s = 0; s < ctx_segments; ++s) {
      std::span<const int> seg(chain.data() + static_cast<std::size_t>(s) * seg_len,
                               static_cast<std::size_t>(seg_len));
      auto annotated = add_style_and_pitch(seg, layout, pitch_period, style,
                                           Rng::mix(Rng::mix(seed, k), s));
      item.context.insert(item.context.end(), annotated.begin(), annotated.end());
    }
    std::span<const int> last(chain.data() + static_cast<std::size_t>(ctx_segments) * seg_len,
                              static_cast<std::size_t>(seg_len));
    const std::uint64_t last_seed = Rng::mix(Rng::mix(seed, k), ctx_segments);
    // same seed for both sides: pitch offsets match, only the blocks differ
    item.correct = add_style_and_pitch(last, layout, pitch_period, style, last_seed);
    item.distractor = add_style_and_pitch(last, layout, pitch_period, other, last_seed);
    items.push_back(std::move(item));
  }
  return items;
}

// ===== corpus builders =====

std::vector<std::vector<int>> build_stream_corpus(const MarkovSource& source, int n_seqs,
                                                  int seq_len, std::uint64_t seed) {
  if (n_seqs < 1) throw UsageError("build_stream_corpus: need at least one sequence");
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n_seqs));
  for (int s = 0; s < n_seqs; ++s)
    out.push_back(sample_stream(source, seq_len, Rng::mix(seed, static_cast<std::uint64_t>(s))));
  return out;
}

std::vector<std::vector<int>> build_expressive_corpus(const MarkovSource& source,
                                                      const VocabLayout& layout,
                                                      const ExpressiveSpec& spec, int n_docs,
                                                      std::uint64_t seed) {
  if (n_docs < 1) throw UsageError("build_expressive_corpus: need at least one document");
  spec.validate();
  layout.validate();
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n_docs));
  for (int d = 0; d < n_docs; ++d) {
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(d)));
    const int style = layout.style_begin() + rng.uniform_int(layout.style_size);
    auto chain = chain_walk(source, spec.segments * spec.seg_len, rng);
    std::vector<int> doc;
    for (int s = 0; s < spec.segments; ++s) {
      std::span<const int> seg(chain.data() + static_cast<std::size_t>(s) * spec.seg_len,
                               static_cast<std::size_t>(spec.seg_len));
      auto annotated = add_style_and_pitch(seg, layout, spec.pitch_period, style,
                                           Rng::mix(Rng::mix(seed, d), 1000 + s));
      doc.insert(doc.end(), annotated.begin(), annotated.end());
    }
    out.push_back(std::move(doc));
  }
  return out;
}

std::vector<std::vector<int>> build_interleaved_corpus(const MarkovSource& source,
                                                       const VocabLayout& layout, int n_utts,
                                                       int n_words, int word_len,
                                                       const std::array<double, 5>& pattern_probs,
                                                       std::uint64_t seed) {
  if (n_utts < 1) throw UsageError("build_interleaved_corpus: need at least one utterance");
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(n_utts));
  for (int u = 0; u < n_utts; ++u) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000)
        throw DomainError("build_interleaved_corpus: no drawable pattern fits the word count");
      const std::uint64_t s = Rng::mix(Rng::mix(seed, u), attempt);
      Rng rng(s);
      const int style = layout.style_begin() + rng.uniform_int(layout.style_size);
      auto utt = make_paired(source, layout, n_words, word_len, style, Rng::mix(s, 1));
      auto res = interleave(utt, pattern_probs, layout, Rng::mix(s, 2));
      if (res.ok) {
        out.push_back(std::move(res.tokens));
        break;
      }
    }
  }
  return out;
}

double expressive_entropy_rate(const MarkovSource& source, const VocabLayout& layout,
                               const ExpressiveSpec& spec) {
  spec.validate();
  layout.validate();
  const double h_chain = entropy_rate(source);
  double h_first = 0.0;  // surprise of the first phonetic token: stationary draw
  for (double p : source.stationary)
    if (p > 0.0) h_first -= p * std::log(p);
  const double h_pitch = std::log(static_cast<double>(layout.pitch_block()));

  const int phonetic = spec.segments * spec.seg_len;
  const int pitches = spec.segments * (spec.seg_len / spec.pitch_period);
  const int total_tokens = spec.segments + phonetic + pitches;  // one style token per segment
  // style tokens carry nothing: the first is the (unscored) document start
  // and repeats are determined by it
  const double total_nats =
      h_first + (phonetic - 1) * h_chain + static_cast<double>(pitches) * h_pitch;
  return total_nats / static_cast<double>(total_tokens - 1);
}

// ===== files =====

namespace {

json layout_to_json(const VocabLayout& l) {
  return json{{"phonetic_size", l.phonetic_size},
              {"pitch_size", l.pitch_size},
              {"style_size", l.style_size},
              {"text_size", l.text_size}};
}

VocabLayout layout_from_json(const json& j) {
  VocabLayout l;
  l.phonetic_size = j.at("phonetic_size").get<int>();
  l.pitch_size = j.at("pitch_size").get<int>();
  l.style_size = j.at("style_size").get<int>();
  l.text_size = j.at("text_size").get<int>();
  l.validate();
  return l;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary: byte-stable across hosts
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

}  // namespace

void save_corpus(const std::string& path, const CorpusHeader& header,
                 const std::vector<std::vector<int>>& sequences) {
  header.layout.validate();
  auto out = open_out(path);
  json h{{"kind", header.kind},
         {"source_seed", header.source_seed},
         {"entropy_rate", header.entropy_rate},
         {"layout", layout_to_json(header.layout)}};
  out << h.dump() << "\n";
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out << ' ';
      out << seq[i];
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

CorpusFile load_corpus(const std::string& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("corpus file is empty: " + path);

  CorpusFile file;
  try {
    json h = json::parse(line);
    file.header.kind = h.at("kind").get<std::string>();
    file.header.source_seed = h.at("source_seed").get<std::uint64_t>();
    file.header.entropy_rate = h.at("entropy_rate").get<double>();
    file.header.layout = layout_from_json(h.at("layout"));
  } catch (const json::exception& e) {
    throw IoError("corpus header is malformed: " + std::string(e.what()));
  }

  const int vocab = file.header.layout.total();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<int> seq;
    int id;
    while (ss >> id) {
      if (id < 0 || id >= vocab)
        throw IoError("corpus token id " + std::to_string(id) + " outside the layout");
      seq.push_back(id);
    }
    if (!ss.eof()) throw IoError("corpus line has a non-numeric token");
    file.sequences.push_back(std::move(seq));
  }
  return file;
}

namespace {

template <typename Item>
json item_core(const Item& it) {
  return json{{"context", it.context}, {"correct", it.correct}, {"distractor", it.distractor}};
}

template <typename Item>
void parse_item_core(const json& j, Item& it) {
  it.context = j.at("context").get<std::vector<int>>();
  it.correct = j.at("correct").get<std::vector<int>>();
  it.distractor = j.at("distractor").get<std::vector<int>>();
  if (it.correct.size() != it.distractor.size() || it.correct.empty())
    throw IoError("item continuations must be non-empty and length-matched");
}

}  // namespace

void save_cloze_items(const std::string& path, const std::vector<ClozeItem>& items) {
  auto out = open_out(path);
  for (const auto& it : items) out << item_core(it).dump() << "\n";
  if (!out) throw IoError("write failed: " + path);
}

std::vector<ClozeItem> load_cloze_items(const std::string& path) {
  auto in = open_in(path);
  std::vector<ClozeItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      ClozeItem it;
      parse_item_core(j, it);
      items.push_back(std::move(it));
    } catch (const json::exception& e) {
      throw IoError("cloze item is malformed: " + std::string(e.what()));
    }
  }
  return items;
}

void save_style_items(const std::string& path, const std::vector<StyleItem>& items) {
  auto out = open_out(path);
  for (const auto& it : items) {
    json j = item_core(it);
    j["style_id"] = it.style_id;
    j["distractor_style"] = it.distractor_style;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<StyleItem> load_style_items(const std::string& path) {
  auto in = open_in(path);
  std::vector<StyleItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      StyleItem it;
      parse_item_core(j, it);
      it.style_id = j.at("style_id").get<int>();
      it.distractor_style = j.at("distractor_style").get<int>();
      items.push_back(std::move(it));
    } catch (const json::exception& e) {
      throw IoError("style item is malformed: " + std::string(e.what()));
    }
  }
  return items;
}

}  // namespace tinydistill
