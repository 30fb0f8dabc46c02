#include <cstring>
#include <fstream>
#include <stdexcept>

#include "heterofl/hetero.hpp"

// Checkpoint layout (all integers little-endian):
//   "HFLCKPT1"                       8-byte magic
//   u32  format version (1)
//   u8   scalar kind (0 = f64, 1 = f32)
//   u64  round
//   u32  parameter count
//   per parameter:  u32 name length, name bytes, u8 rank, u64 dims..., raw values
//   u32  sBN snapshot count
//   per snapshot:   u32 name length, name bytes, u64 channels, mean values, var values

namespace heterofl::agg {

namespace {

constexpr char kMagic[8] = {'H', 'F', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto len = read_pod<std::uint32_t>(is);
  if (len > (1u << 20)) throw std::runtime_error("checkpoint: implausible name length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

template <class S>
void write_tensor(std::ostream& os, const TensorT<S>& t) {
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(S)));
}

template <class S>
TensorT<S> read_tensor(std::istream& is) {
  const auto rank = read_pod<std::uint8_t>(is);
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    n *= d;
  }
  std::vector<S> values(n);
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(S)));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
  return TensorT<S>(std::move(shape), std::move(values));
}

template <class S>
constexpr ScalarKind scalar_kind_of() {
  return sizeof(S) == 8 ? ScalarKind::f64 : ScalarKind::f32;
}

void read_header(std::istream& is, ScalarKind* kind) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto k = read_pod<std::uint8_t>(is);
  if (k > 1) throw std::runtime_error("checkpoint: unknown scalar kind");
  *kind = static_cast<ScalarKind>(k);
}

}  // namespace

template <class S>
void save_checkpoint(const std::string& path, const GlobalModelT<S>& gm) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 8);
  write_pod<std::uint32_t>(os, kVersion);
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(scalar_kind_of<S>()));
  write_pod<std::uint64_t>(os, gm.round);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(gm.params.size()));
  for (const auto& [name, tensor] : gm.params) {
    write_string(os, name);
    write_tensor(os, tensor);
  }
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(gm.sbn_stats.size()));
  for (const auto& snap : gm.sbn_stats) {
    write_string(os, snap.layer);
    write_pod<std::uint64_t>(os, snap.mean.dim(0));
    os.write(reinterpret_cast<const char*>(snap.mean.data()),
             static_cast<std::streamsize>(snap.mean.size() * sizeof(S)));
    os.write(reinterpret_cast<const char*>(snap.variance.data()),
             static_cast<std::streamsize>(snap.variance.size() * sizeof(S)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ScalarKind checkpoint_scalar_kind(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  ScalarKind kind{};
  read_header(is, &kind);
  return kind;
}

template <class S>
GlobalModelT<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  ScalarKind kind{};
  read_header(is, &kind);
  if (kind != scalar_kind_of<S>()) {
    throw std::runtime_error("checkpoint: stored precision differs from the requested one");
  }
  GlobalModelT<S> gm;
  gm.round = read_pod<std::uint64_t>(is);
  const auto n_params = read_pod<std::uint32_t>(is);
  gm.params.reserve(n_params);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = read_string(is);
    gm.params.emplace_back(std::move(name), read_tensor<S>(is));
  }
  const auto n_sbn = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_sbn; ++i) {
    nn::SbnSnapshot<S> snap;
    snap.layer = read_string(is);
    const auto channels = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
    std::vector<S> mean(channels), var(channels);
    is.read(reinterpret_cast<char*>(mean.data()),
            static_cast<std::streamsize>(channels * sizeof(S)));
    is.read(reinterpret_cast<char*>(var.data()),
            static_cast<std::streamsize>(channels * sizeof(S)));
    if (!is) throw std::runtime_error("checkpoint: truncated sBN payload");
    snap.mean = TensorT<S>({channels}, std::move(mean));
    snap.variance = TensorT<S>({channels}, std::move(var));
    gm.sbn_stats.push_back(std::move(snap));
  }
  return gm;
}

template void save_checkpoint(const std::string&, const GlobalModelT<float>&);
template void save_checkpoint(const std::string&, const GlobalModelT<double>&);
template GlobalModelT<float> load_checkpoint(const std::string&);
template GlobalModelT<double> load_checkpoint(const std::string&);

}  // namespace heterofl::agg
