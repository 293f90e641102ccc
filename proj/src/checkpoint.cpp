#include "home/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

namespace home {
namespace {

constexpr char kMagic[8] = {'H', 'O', 'M', 'E', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }

  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  float f32() { return std::bit_cast<float>(u32()); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

struct Header {
  CheckpointKind kind;
  ModelConfig config;
  int router_hidden = 0;
};

using ConstEntries = std::vector<std::pair<std::string, const Tensor*>>;

std::vector<std::uint8_t> write_all(const Header& h, const ConstEntries& entries) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(h.kind));
  const ModelConfig& c = h.config;
  for (int v : {c.vocab_size, c.d_model, c.n_blocks, c.n_heads, c.d_ffn, c.max_seq}) w.u32(static_cast<std::uint32_t>(v));
  w.u64(c.seed);
  w.u32(static_cast<std::uint32_t>(h.router_hidden));
  w.u32(static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (std::size_t d : t->shape) w.u64(d);
    w.u64(offset);
    offset += 4 * t->size();
  }
  for (const auto& [name, t] : entries) {
    for (double x : t->values) w.f32(static_cast<float>(x));
  }
  return std::move(w.buf);
}

Header read_header(Reader& r) {
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Header h;
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw CheckpointError("unknown checkpoint kind " + std::to_string(kind));
  h.kind = static_cast<CheckpointKind>(kind);
  ModelConfig& c = h.config;
  c.vocab_size = static_cast<int>(r.u32());
  c.d_model = static_cast<int>(r.u32());
  c.n_blocks = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.d_ffn = static_cast<int>(r.u32());
  c.max_seq = static_cast<int>(r.u32());
  c.seed = r.u64();
  h.router_hidden = static_cast<int>(r.u32());
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("invalid config in checkpoint: ") + e.what());
  }
  return h;
}

void read_entries(Reader& r, const std::vector<std::pair<std::string, Tensor*>>& targets) {
  const std::uint32_t count = r.u32();
  struct Entry {
    Shape shape;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> manifest;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError("entry '" + name + "' has implausible rank");
    Entry e;
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::size_t>(r.u64()));
    e.offset = r.u64();
    if (!manifest.emplace(name, e).second) throw CheckpointError("duplicate entry '" + name + "'");
  }
  if (manifest.size() != targets.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(manifest.size()) + " entries, expected " +
                          std::to_string(targets.size()));
  }
  const std::size_t data_start = r.pos();
  for (const auto& [name, t] : targets) {
    auto it = manifest.find(name);
    if (it == manifest.end()) throw CheckpointError("checkpoint is missing entry '" + name + "'");
    if (it->second.shape != t->shape) {
      throw CheckpointError("entry '" + name + "' has shape " + shape_str(it->second.shape) + ", expected " +
                            shape_str(t->shape));
    }
    r.seek(data_start + it->second.offset);
    for (double& x : t->values) x = static_cast<double>(r.f32());
    t->grad.reset();
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const DenseParams& params) {
  return write_all({CheckpointKind::Dense, params.config, 0}, params.named_tensors());
}

std::vector<std::uint8_t> serialize_checkpoint(const HybridParams& params) {
  return write_all({CheckpointKind::Hybrid, params.config, params.router_config.hidden}, params.named_tensors());
}

CheckpointKind checkpoint_kind(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  return read_header(r).kind;
}

DenseParams deserialize_dense(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const Header h = read_header(r);
  if (h.kind != CheckpointKind::Dense) throw CheckpointError("expected a dense checkpoint, found a hybrid one");
  DenseParams p = DenseParams::init(h.config);
  read_entries(r, p.named_tensors());
  return p;
}

HybridParams deserialize_hybrid(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const Header h = read_header(r);
  if (h.kind != CheckpointKind::Hybrid) throw CheckpointError("expected a hybrid checkpoint, found a dense one");
  RouterConfig rc;
  rc.hidden = h.router_hidden;
  HybridParams p = expand(DenseParams::init(h.config), 0, rc);
  read_entries(r, p.named_tensors());
  return p;
}

void save_checkpoint(const DenseParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path.string());
}

void save_checkpoint(const HybridParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointKind checkpoint_kind(const std::filesystem::path& path) { return checkpoint_kind(read_file_bytes(path)); }
DenseParams load_dense(const std::filesystem::path& path) { return deserialize_dense(read_file_bytes(path)); }
HybridParams load_hybrid(const std::filesystem::path& path) { return deserialize_hybrid(read_file_bytes(path)); }

}  // namespace home
