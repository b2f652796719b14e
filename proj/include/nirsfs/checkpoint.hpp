#pragma once
// Binary checkpoint container. All integers and floats little-endian.
//
//   char[8]  "NIRSFSCK"
//   u32      format version
//   u64      architecture hash
//   u64      iteration
//   u32 len, char[len]   config echo (JSON text, stored verbatim)
//   u32      blob count
//     u32 len, char[len] name; u32 ndim; u64 dims[ndim]; f32 values[prod(dims)]
//   u32      optimizer count
//     u32 len, char[len] name; u64 step; f64 beta1, beta2, epsilon, learning_rate;
//     u32 buffers; per buffer: u64 n, f32 m[n], f32 v[n]
//
// Blob names are "<net>.<layer>.<tensor>", e.g. "gen.conv1.weight",
// "gen.bn1.running_mean", "dis.bn2.initialized".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nirsfs/adam.hpp"
#include "nirsfs/nets.hpp"

namespace nirsfs {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'N', 'I', 'R', 'S', 'F', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Both networks, both optimizers and the iteration counter.
template <typename T>
struct TrainingState {
  GeneratorNet<T> gen;
  DiscriminatorNet<T> dis;
  AdamState<T> opt_gen;
  AdamState<T> opt_dis;
  std::uint64_t iteration = 0;

  TrainingState(const NetConfig& gcfg, const NetConfig& dcfg)
      : gen(gcfg), dis(dcfg), opt_gen(gen.parameters()), opt_dis(dis.parameters()) {}

  std::uint64_t arch() const { return arch_hash(gen, dis); }
};

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t arch_hash = 0;
  std::uint64_t iteration = 0;
  std::string config;  // JSON text
};

namespace detail {

class ByteWriter {
 public:
  template <typename V>
  void pod(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(V));
  }
  void str(const std::string& s) {
    pod(std::uint32_t(s.size()));
    buf_.append(s);
  }
  template <typename T>
  void floats(const std::vector<T>& v) {
    for (T x : v) pod(float(x));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string path) : buf_(std::move(bytes)), path_(std::move(path)) {}

  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  std::vector<T> floats(std::uint64_t n) {
    need(n * sizeof(float));
    std::vector<T> out(n);
    for (auto& x : out) x = T(pod<float>());
    return out;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (buf_.size() - pos_ < n) throw IoError("truncated checkpoint", path_);
  }

  std::string buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

struct Blob {
  Shape shape;
  std::vector<float> values;
};

template <typename T>
void collect_blobs(const std::vector<NamedParam<T>>& params, const std::vector<BatchNormLayer<T>>& bns,
                   std::vector<std::pair<std::string, Blob>>& out) {
  for (const auto& p : params)
    out.push_back({p.name, Blob{p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())}});
  for (const auto& b : bns) {
    const std::size_t c = b.stats.mean.size();
    out.push_back({b.name + ".running_mean", Blob{{c}, std::vector<float>(b.stats.mean.begin(), b.stats.mean.end())}});
    out.push_back({b.name + ".running_var", Blob{{c}, std::vector<float>(b.stats.var.begin(), b.stats.var.end())}});
    out.push_back({b.name + ".initialized", Blob{{1}, {b.stats.initialized ? 1.0f : 0.0f}}});
  }
}

template <typename T>
void write_optimizer(ByteWriter& w, const std::string& name, const AdamState<T>& s) {
  w.str(name);
  w.pod(std::uint64_t(s.step_count));
  w.pod(s.beta1);
  w.pod(s.beta2);
  w.pod(s.epsilon);
  w.pod(s.learning_rate);
  w.pod(std::uint32_t(s.first_moment.size()));
  for (std::size_t k = 0; k < s.first_moment.size(); ++k) {
    w.pod(std::uint64_t(s.first_moment[k].size()));
    w.floats(s.first_moment[k]);
    w.floats(s.second_moment[k]);
  }
}

template <typename T>
void read_optimizer(ByteReader& r, const std::string& expect, AdamState<T>& s, const std::string& path) {
  const std::string name = r.str();
  if (name != expect) throw IoError("expected optimizer '" + expect + "', found '" + name + "'", path);
  AdamState<T> loaded;
  loaded.step_count = r.pod<std::uint64_t>();
  loaded.beta1 = r.pod<double>();
  loaded.beta2 = r.pod<double>();
  loaded.epsilon = r.pod<double>();
  loaded.learning_rate = r.pod<double>();
  const auto n = r.pod<std::uint32_t>();
  if (n != s.first_moment.size()) throw ArchMismatch("optimizer '" + name + "' has wrong buffer count in " + path);
  for (std::size_t k = 0; k < n; ++k) {
    const auto len = r.pod<std::uint64_t>();
    if (len != s.first_moment[k].size()) throw ArchMismatch("optimizer '" + name + "' buffer size mismatch in " + path);
    loaded.first_moment.push_back(r.floats<T>(len));
    loaded.second_moment.push_back(r.floats<T>(len));
  }
  s = std::move(loaded);
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint", path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline CheckpointInfo read_header(ByteReader& r, const std::string& path) {
  char magic[8];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint file", path);
  CheckpointInfo info;
  info.version = r.pod<std::uint32_t>();
  if (info.version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(info.version), path);
  info.arch_hash = r.pod<std::uint64_t>();
  info.iteration = r.pod<std::uint64_t>();
  info.config = r.str();
  return info;
}

}  // namespace detail

/// Serialized bytes of `state`; save → load → save yields identical bytes.
template <typename T>
std::string serialize_checkpoint(const TrainingState<T>& state, const std::string& config_json) {
  detail::ByteWriter w;
  for (char c : kCheckpointMagic) w.pod(c);
  w.pod(kCheckpointVersion);
  w.pod(state.arch());
  w.pod(std::uint64_t(state.iteration));
  w.str(config_json);

  std::vector<std::pair<std::string, detail::Blob>> blobs;
  detail::collect_blobs(state.gen.named_parameters(), state.gen.norm_layers(), blobs);
  detail::collect_blobs(state.dis.named_parameters(), state.dis.norm_layers(), blobs);
  w.pod(std::uint32_t(blobs.size()));
  for (const auto& [name, b] : blobs) {
    w.str(name);
    w.pod(std::uint32_t(b.shape.size()));
    for (auto d : b.shape) w.pod(std::uint64_t(d));
    w.floats(b.values);
  }
  w.pod(std::uint32_t(2));
  detail::write_optimizer(w, "adam.gen", state.opt_gen);
  detail::write_optimizer(w, "adam.dis", state.opt_dis);
  return w.bytes();
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainingState<T>& state, const std::string& config_json) {
  const std::string bytes = serialize_checkpoint(state, config_json);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing", tmp);
    os.write(bytes.data(), std::streamsize(bytes.size()));
    if (!os) throw IoError("checkpoint write failed", tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place (" + ec.message() + ")", path);
}

/// Header and config echo only; used to size the networks before loading.
inline CheckpointInfo read_checkpoint_info(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  return detail::read_header(r, path);
}

/// Restores every parameter, running statistic and optimizer buffer. Throws
/// ArchMismatch if the file was written for a different architecture; `state`
/// is untouched on any error.
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, TrainingState<T>& state) {
  detail::ByteReader r(detail::read_file(path), path);
  const CheckpointInfo info = detail::read_header(r, path);
  if (info.arch_hash != state.arch()) {
    throw ArchMismatch("checkpoint architecture does not match the configured networks: " + path);
  }
  std::map<std::string, detail::Blob> blobs;
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    detail::Blob b;
    const auto ndim = r.pod<std::uint32_t>();
    for (std::uint32_t k = 0; k < ndim; ++k) b.shape.push_back(std::size_t(r.pod<std::uint64_t>()));
    b.values = r.floats<float>(numel_of(b.shape));
    if (!blobs.emplace(std::move(name), std::move(b)).second) throw IoError("duplicate blob in checkpoint", path);
  }

  std::vector<std::pair<std::string, detail::Blob>> expected;
  detail::collect_blobs(state.gen.named_parameters(), state.gen.norm_layers(), expected);
  detail::collect_blobs(state.dis.named_parameters(), state.dis.norm_layers(), expected);
  if (expected.size() != blobs.size()) throw ArchMismatch("checkpoint blob count mismatch: " + path);
  for (const auto& [name, e] : expected) {
    const auto it = blobs.find(name);
    if (it == blobs.end()) throw ArchMismatch("checkpoint lacks blob '" + name + "': " + path);
    if (it->second.shape != e.shape)
      throw ArchMismatch("blob '" + name + "' has shape " + to_string(it->second.shape) + ", expected " +
                         to_string(e.shape));
  }

  AdamState<T> opt_gen = state.opt_gen, opt_dis = state.opt_dis;
  if (r.pod<std::uint32_t>() != 2) throw IoError("checkpoint must hold two optimizer states", path);
  detail::read_optimizer(r, "adam.gen", opt_gen, path);
  detail::read_optimizer(r, "adam.dis", opt_dis, path);
  if (!r.at_end()) throw IoError("trailing bytes after checkpoint payload", path);

  // Commit.
  auto restore = [&](const std::vector<NamedParam<T>>& params, std::vector<BatchNormLayer<T>>& bns) {
    for (const auto& p : params) {
      const auto& v = blobs.at(p.name).values;
      Tensor<T> t = p.tensor;
      auto dst = t.data();
      for (std::size_t i = 0; i < v.size(); ++i) dst[i] = T(v[i]);
    }
    for (auto& b : bns) {
      const auto& m = blobs.at(b.name + ".running_mean").values;
      const auto& v = blobs.at(b.name + ".running_var").values;
      b.stats.mean.assign(m.begin(), m.end());
      b.stats.var.assign(v.begin(), v.end());
      b.stats.initialized = blobs.at(b.name + ".initialized").values[0] != 0.0f;
    }
  };
  restore(state.gen.named_parameters(), state.gen.norm_layers());
  restore(state.dis.named_parameters(), state.dis.norm_layers());
  state.opt_gen = std::move(opt_gen);
  state.opt_dis = std::move(opt_dis);
  state.iteration = info.iteration;
  return info;
}

/// Total trainable scalar count.
template <typename T>
std::size_t parameter_count(const std::vector<Tensor<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

}  // namespace nirsfs
