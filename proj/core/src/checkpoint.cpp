#include "tinydistill/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "tinydistill/errors.hpp"

namespace tinydistill {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'W', 'C', 'K'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr const char* kOptM = "opt.m.";
constexpr const char* kOptV = "opt.v.";

// explicit little-endian encoding so files are identical on any host
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(uint_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
  std::uint64_t u64() { return uint_le(8); }
  float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(uint_le(4))); }

  std::string str(std::size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }

  void seek(std::size_t pos) {
    if (pos > bytes_.size()) throw IoError("checkpoint: offset beyond end of file");
    pos_ = pos;
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint: truncated file");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint64_t uint_le(int n) {
    const char* p = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
              {"n_heads", c.n_heads},       {"n_layers", c.n_layers},
              {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
              {"rope_base", c.rope_base}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.rope_base = j.at("rope_base").get<double>();
  return c;
}

struct NamedTensor {
  std::string name;
  const Tensor<float>* tensor;
};

}  // namespace

void save_checkpoint(const std::string& path, const TransformerLM<float>& model,
                     const CheckpointMeta& meta, const AdamState<float>* opt) {
  if (model.has_lora())
    throw UsageError("checkpoint: merge the adapter before saving");

  const auto params = model.named_parameters();
  std::vector<NamedTensor> entries;
  entries.reserve(params.size() * (opt ? 3 : 1));
  for (const auto& [name, t] : params) entries.push_back({name, t.get()});

  // optimizer moments ride along as shape-matched shadow tensors
  std::vector<Tensor<float>> moments;
  if (opt) {
    if (opt->m.size() != params.size() || opt->v.size() != params.size())
      throw UsageError("checkpoint: optimizer state does not match the parameter list");
    moments.reserve(params.size() * 2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (const char* prefix : {kOptM, kOptV}) {
        const auto& buf = (prefix == kOptM) ? opt->m[i] : opt->v[i];
        if (buf.size() != params[i].second->data.size())
          throw UsageError("checkpoint: optimizer buffer size mismatch");
        Tensor<float> t;
        t.shape = params[i].second->shape;
        t.data = buf;
        moments.push_back(std::move(t));
        entries.push_back({prefix + params[i].first, &moments.back()});
      }
    }
  }

  json header{{"config", config_to_json(model.config)},
              {"stage", meta.stage},
              {"seed", meta.seed},
              {"step", meta.step}};
  if (opt) header["adam_t"] = opt->t;
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header_bytes.size()));
  out += header_bytes;

  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out += e.name;
    out.push_back(static_cast<char>(kDtypeF32));
    out.push_back(static_cast<char>(e.tensor->ndim()));
    for (int d : e.tensor->shape) put_u32(out, static_cast<std::uint32_t>(d));
    put_u64(out, offset);
    offset += static_cast<std::uint64_t>(e.tensor->numel()) * 4;
  }
  for (const auto& e : entries)
    for (float v : e.tensor->data) put_f32(out, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  if (r.str(4) != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic");
  const auto version = r.u16();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));

  const auto header_len = r.u32();
  json header;
  CheckpointMeta meta;
  ModelConfig cfg;
  std::int64_t adam_t = -1;
  try {
    header = json::parse(r.str(header_len));
    cfg = config_from_json(header.at("config"));
    meta.stage = header.at("stage").get<std::string>();
    meta.seed = header.at("seed").get<std::uint64_t>();
    meta.step = header.at("step").get<std::int64_t>();
    if (header.contains("adam_t")) adam_t = header.at("adam_t").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw IoError("checkpoint: malformed header: " + std::string(e.what()));
  }
  cfg.validate();

  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset;
  };
  const auto n_entries = r.u32();
  if (n_entries > 1000000) throw IoError("checkpoint: implausible tensor count");
  std::vector<Entry> entries(n_entries);
  for (auto& e : entries) {
    e.name = r.str(r.u16());
    if (r.u8() != kDtypeF32) throw IoError("checkpoint: unknown dtype tag");
    e.shape.resize(r.u8());
    for (int& d : e.shape) d = static_cast<int>(r.u32());
    e.offset = r.u64();
  }
  const std::size_t payload_start = r.pos();

  LoadedCheckpoint out;
  out.meta = meta;
  out.model = TransformerLM<float>::random_init(cfg, 0);

  auto read_into = [&](const Entry& e, std::vector<float>& dst) {
    r.seek(payload_start + e.offset);
    for (float& v : dst) v = r.f32();
  };

  const auto params = out.model.named_parameters();
  std::size_t found = 0;
  std::vector<const Entry*> m_entries(params.size(), nullptr);
  std::vector<const Entry*> v_entries(params.size(), nullptr);
  for (const auto& e : entries) {
    bool matched = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, tensor] = params[i];
      if (e.name == name) {
        if (e.shape != tensor->shape)
          throw IoError("checkpoint: tensor " + e.name + " has shape " + shape_str(e.shape) +
                        ", model expects " + shape_str(tensor->shape));
        read_into(e, tensor->data);
        ++found;
        matched = true;
      } else if (e.name == kOptM + name) {
        if (e.shape != tensor->shape) throw IoError("checkpoint: moment shape mismatch: " + e.name);
        m_entries[i] = &e;
        matched = true;
      } else if (e.name == kOptV + name) {
        if (e.shape != tensor->shape) throw IoError("checkpoint: moment shape mismatch: " + e.name);
        v_entries[i] = &e;
        matched = true;
      }
      if (matched) break;
    }
    if (!matched) throw IoError("checkpoint: tensor " + e.name + " does not belong to the model");
  }
  if (found != params.size())
    throw IoError("checkpoint: file is missing model tensors (" + std::to_string(found) + "/" +
                  std::to_string(params.size()) + ")");

  const bool any_m = std::any_of(m_entries.begin(), m_entries.end(),
                                 [](const Entry* e) { return e != nullptr; });
  if (any_m) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (!m_entries[i] || !v_entries[i])
        throw IoError("checkpoint: optimizer moments are incomplete");
    AdamState<float> opt;
    opt.m.resize(params.size());
    opt.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      opt.m[i].resize(params[i].second->data.size());
      opt.v[i].resize(params[i].second->data.size());
      read_into(*m_entries[i], opt.m[i]);
      read_into(*v_entries[i], opt.v[i]);
    }
    opt.t = adam_t < 0 ? meta.step : adam_t;
    out.opt = std::move(opt);
  }
  return out;
}

std::uint64_t tensor_content_hash(const Tensor<float>& tensor) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_byte = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (int d : tensor.shape)
    for (int i = 0; i < 4; ++i) mix_byte(static_cast<std::uint8_t>((d >> (8 * i)) & 0xff));
  for (float v : tensor.data) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) mix_byte(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
  return h;
}

}  // namespace tinydistill
