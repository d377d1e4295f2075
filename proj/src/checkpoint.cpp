#include "defstereo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace defstereo {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'S', 'N'};

template <typename U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    if constexpr (sizeof(U) == 4) return __builtin_bswap32(v);
    if constexpr (sizeof(U) == 8) return __builtin_bswap64(v);
  }
  return v;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    v = to_le(v);
    raw(&v, 4);
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError(path_ + ": truncated checkpoint");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return to_le(v);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_, path_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::U8: return 1;
    case DType::I64: return 8;
  }
  throw CheckpointError("unknown dtype");
}

std::vector<std::uint32_t> to_u32_dims(const Dims& d) {
  return std::vector<std::uint32_t>(d.begin(), d.end());
}

bool dims_match(const std::vector<std::uint32_t>& a, const Dims& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(),
                                            [](std::uint32_t x, int y) { return static_cast<int>(x) == y; });
}

std::string dims_text(const std::vector<std::uint32_t>& d) {
  std::string s = "[";
  for (std::size_t i = 0; i < d.size(); ++i) s += (i ? ", " : "") + std::to_string(d[i]);
  return s + "]";
}

void copy_into(const CheckpointEntry& e, BasicTensor<float> t, const std::string& name) {
  if (e.dtype != DType::F32) throw CheckpointError("entry " + name + " is not float data");
  if (!dims_match(e.dims, t.dims())) {
    throw CheckpointError("shape mismatch for " + name + ": checkpoint " + dims_text(e.dims) +
                          ", model " + dims_to_string(t.dims()));
  }
  const std::vector<float> v = e.floats();
  std::copy(v.begin(), v.end(), t.data().begin());
}

}  // namespace

std::size_t CheckpointEntry::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<float> CheckpointEntry::floats() const {
  std::vector<float> out(numel());
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * k, 4);
    out[k] = std::bit_cast<float>(to_le(u));
  }
  return out;
}

std::string CheckpointEntry::text() const { return std::string(bytes.begin(), bytes.end()); }

std::int64_t CheckpointEntry::int64() const {
  if (dtype != DType::I64 || bytes.size() != 8) throw CheckpointError("entry is not an int64 scalar");
  std::uint64_t u;
  std::memcpy(&u, bytes.data(), 8);
  return static_cast<std::int64_t>(to_le(u));
}

void Checkpoint::put_floats(const std::string& name, const Dims& dims, std::span<const float> values) {
  CheckpointEntry e{DType::F32, to_u32_dims(dims), {}};
  e.bytes.resize(values.size() * 4);
  for (std::size_t k = 0; k < values.size(); ++k) {
    const std::uint32_t u = to_le(std::bit_cast<std::uint32_t>(values[k]));
    std::memcpy(e.bytes.data() + 4 * k, &u, 4);
  }
  entries[name] = std::move(e);
}

void Checkpoint::put_text(const std::string& name, const std::string& text) {
  entries[name] = {DType::U8, {static_cast<std::uint32_t>(text.size())},
                   std::vector<std::uint8_t>(text.begin(), text.end())};
}

void Checkpoint::put_int(const std::string& name, std::int64_t v) {
  const std::uint64_t u = to_le(static_cast<std::uint64_t>(v));
  CheckpointEntry e{DType::I64, {1}, std::vector<std::uint8_t>(8)};
  std::memcpy(e.bytes.data(), &u, 8);
  entries[name] = std::move(e);
}

const CheckpointEntry& Checkpoint::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw CheckpointError("checkpoint has no entry " + name);
  return it->second;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u32(static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) w.u32(d);
    w.raw(e.bytes.data(), e.bytes.size());
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw CheckpointError("cannot write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path.string());
  if (r.bytes(4) != std::string(kMagic, 4)) throw CheckpointError(path.string() + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    const std::string name = r.bytes(len);
    const std::uint8_t tag = r.u8();
    if (tag > 2) throw CheckpointError(path.string() + ": unknown dtype for " + name);
    CheckpointEntry e;
    e.dtype = static_cast<DType>(tag);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw CheckpointError(path.string() + ": implausible rank for " + name);
    for (std::uint32_t k = 0; k < rank; ++k) e.dims.push_back(r.u32());
    const std::string payload = r.bytes(e.numel() * dtype_size(e.dtype));
    e.bytes.assign(payload.begin(), payload.end());
    if (!ck.entries.emplace(name, std::move(e)).second) {
      throw CheckpointError(path.string() + ": duplicate entry " + name);
    }
  }
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after last entry");
  return ck;
}

Checkpoint make_checkpoint(const DepthModel<float>& model, const AdamState<float>* adam,
                           long long step, const TrainConfig* train_cfg) {
  Checkpoint ck;
  for (const auto& [name, entry] : model.params().params())
    ck.put_floats(name, entry.tensor.dims(), entry.tensor.data());
  for (const auto& [name, t] : model.params().buffers()) ck.put_floats("buf/" + name, t.dims(), t.data());
  if (adam) {
    for (const auto& [name, t] : adam->m) ck.put_floats("opt/m/" + name, t.dims(), t.data());
    for (const auto& [name, t] : adam->v) ck.put_floats("opt/v/" + name, t.dims(), t.data());
    ck.put_int("opt/t", adam->t);
  }
  ck.put_int("meta/step", step);
  ck.put_text("meta/model", model.config().echo());
  if (train_cfg) ck.put_text("meta/train", train_cfg->echo());
  return ck;
}

ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  return ModelConfig::from_config(KeyValueConfig::parse(ck.at("meta/model").text(), "checkpoint"));
}

long long restore_checkpoint(const Checkpoint& ck, DepthModel<float>& model,
                             AdamState<float>* adam) {
  const std::string stored = ck.at("meta/model").text();
  const std::string expected = model.config().echo();
  if (stored != expected) {
    throw CheckpointMismatch("checkpoint was written for a different model configuration",
                             expected, stored);
  }
  const auto& params = model.params();
  std::size_t seen_params = 0, seen_buffers = 0, seen_m = 0, seen_v = 0;
  for (const auto& [name, e] : ck.entries) {
    if (name.rfind("meta/", 0) == 0) continue;
    if (name.rfind("buf/", 0) == 0) {
      const std::string b = name.substr(4);
      if (!params.buffers().count(b)) throw CheckpointError("unknown buffer in checkpoint: " + b);
      copy_into(e, params.buffer(b), name);
      ++seen_buffers;
    } else if (name.rfind("opt/", 0) == 0) {
      if (!adam) continue;
      if (name == "opt/t") {
        adam->t = e.int64();
        continue;
      }
      const bool is_m = name.rfind("opt/m/", 0) == 0;
      if (!is_m && name.rfind("opt/v/", 0) != 0) throw CheckpointError("unknown optimizer entry " + name);
      const std::string p = name.substr(6);
      auto& map = is_m ? adam->m : adam->v;
      auto it = map.find(p);
      if (it == map.end()) throw CheckpointError("optimizer state for unknown parameter " + p);
      copy_into(e, it->second, name);
      ++(is_m ? seen_m : seen_v);
    } else {
      if (!params.contains(name)) throw CheckpointError("unknown parameter in checkpoint: " + name);
      copy_into(e, params.get(name), name);
      ++seen_params;
    }
  }
  if (seen_params != params.params().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(seen_params) + " of " +
                          std::to_string(params.params().size()) + " parameters");
  }
  if (seen_buffers != params.buffers().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(seen_buffers) + " of " +
                          std::to_string(params.buffers().size()) + " buffers");
  }
  if (adam && (seen_m != adam->m.size() || seen_v != adam->v.size() || !ck.has("opt/t"))) {
    throw CheckpointError("checkpoint has no complete optimizer state");
  }
  return ck.at("meta/step").int64();
}

std::size_t checkpoint_parameter_count(const Checkpoint& ck) {
  std::size_t n = 0;
  for (const auto& [name, e] : ck.entries) {
    if (name.find('/') != std::string::npos) continue;
    n += e.numel();
  }
  return n;
}

}  // namespace defstereo
