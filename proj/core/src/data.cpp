#include "heterofl/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace heterofl::data {

template <class S>
std::vector<std::size_t> DatasetT<S>::example_shape() const {
  std::vector<std::size_t> shape(features.shape().begin() + 1, features.shape().end());
  return shape;
}

template <class S>
TensorT<S> DatasetT<S>::gather(std::span<const std::uint32_t> idx) const {
  const std::size_t stride = features.size() / features.dim(0);
  std::vector<std::size_t> shape = features.shape();
  shape[0] = idx.size();
  TensorT<S> out(std::move(shape));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw std::out_of_range("dataset gather: index out of range");
    std::memcpy(out.data() + i * stride, features.data() + idx[i] * stride, stride * sizeof(S));
  }
  return out;
}

template <class S>
void DatasetT<S>::truncate(std::size_t n) {
  if (n == 0 || n > size()) return;
  const std::size_t stride = features.size() / features.dim(0);
  std::vector<std::size_t> shape = features.shape();
  shape[0] = n;
  std::vector<S> values(features.data(), features.data() + n * stride);
  features = TensorT<S>(std::move(shape), std::move(values));
  labels.resize(n);
}

// ---------------------------------------------------------------------------
// IDX loading
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& is, const std::string& path) {
  unsigned char raw[4];
  is.read(reinterpret_cast<char*>(raw), 4);
  if (!is) throw std::runtime_error("idx: truncated header in " + path);
  return (std::uint32_t(raw[0]) << 24) | (std::uint32_t(raw[1]) << 16) |
         (std::uint32_t(raw[2]) << 8) | std::uint32_t(raw[3]);
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t n, const std::string& path) {
  std::vector<unsigned char> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw std::runtime_error("idx: truncated payload in " + path + " (expected " +
                             std::to_string(n) + " bytes)");
  }
  return buf;
}

}  // namespace

template <class S>
DatasetT<S> load_idx(const std::string& images_path, const std::string& labels_path,
                     std::int32_t num_classes, const Normalization& norm) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("idx: cannot open " + images_path);
  if (read_be_u32(img, images_path) != kIdxImagesMagic) {
    throw std::runtime_error("idx: bad magic in " + images_path + " (expected 0x00000803)");
  }
  const std::size_t n = read_be_u32(img, images_path);
  const std::size_t rows = read_be_u32(img, images_path);
  const std::size_t cols = read_be_u32(img, images_path);
  const auto pixels = read_payload(img, n * rows * cols, images_path);

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
  if (read_be_u32(lab, labels_path) != kIdxLabelsMagic) {
    throw std::runtime_error("idx: bad magic in " + labels_path + " (expected 0x00000801)");
  }
  const std::size_t n_labels = read_be_u32(lab, labels_path);
  if (n_labels != n) {
    throw std::runtime_error("idx: image count " + std::to_string(n) + " != label count " +
                             std::to_string(n_labels));
  }
  const auto raw_labels = read_payload(lab, n, labels_path);

  DatasetT<S> ds;
  std::vector<S> values(n * rows * cols);
  const double inv_std = 1.0 / norm.stddev;
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<S>((pixels[i] / 255.0 - norm.mean) * inv_std);
  }
  ds.features = TensorT<S>({n, 1, rows, cols}, std::move(values));
  ds.labels.resize(n);
  std::int32_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<std::int32_t>(raw_labels[i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  if (max_label >= ds.num_classes) {
    throw std::runtime_error("idx: label " + std::to_string(max_label) + " exceeds num_classes " +
                             std::to_string(ds.num_classes));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

template <class S>
TrainTest<S> make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synthetic: classes must be >= 2");
  if (spec.blobs_per_class < 1) throw std::invalid_argument("synthetic: blobs_per_class >= 1");
  if (spec.features == 0) throw std::invalid_argument("synthetic: features must be >= 1");

  const std::size_t d = spec.features;
  const std::size_t blobs = static_cast<std::size_t>(spec.classes) *
                            static_cast<std::size_t>(spec.blobs_per_class);
  Rng centers_rng = Rng::stream(spec.seed, "synthetic-centers");
  std::vector<double> centers(blobs * d);
  for (auto& v : centers) v = centers_rng.normal() * spec.center_spread;

  auto fill = [&](std::size_t n, std::string_view purpose) {
    DatasetT<S> ds;
    Rng rng = Rng::stream(spec.seed, purpose);
    std::vector<S> values(n * d);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t blob = static_cast<std::size_t>(rng.uniform_int(blobs));
      ds.labels[i] = static_cast<std::int32_t>(blob % static_cast<std::size_t>(spec.classes));
      const double* c = centers.data() + blob * d;
      for (std::size_t j = 0; j < d; ++j) {
        values[i * d + j] = static_cast<S>(c[j] + rng.normal() * spec.noise);
      }
    }
    ds.features = TensorT<S>({n, d}, std::move(values));
    ds.num_classes = spec.classes;
    return ds;
  };

  return TrainTest<S>{fill(spec.train_examples, "synthetic-train"),
                      fill(spec.test_examples, "synthetic-test")};
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

namespace {

std::set<std::int32_t> labels_of(std::span<const std::int32_t> labels,
                                 const std::vector<std::uint32_t>& shard) {
  std::set<std::int32_t> out;
  for (std::uint32_t i : shard) out.insert(labels[i]);
  return out;
}

}  // namespace

Partition partition_iid(std::span<const std::int32_t> labels, std::size_t clients, Rng rng) {
  const std::size_t n = labels.size();
  if (clients == 0) throw std::invalid_argument("partition_iid: need at least one client");
  if (clients > n) {
    throw std::invalid_argument("partition_iid: more clients (" + std::to_string(clients) +
                                ") than examples (" + std::to_string(n) + ")");
  }
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  rng.shuffle(idx);

  Partition part;
  part.assignment.resize(clients);
  for (std::size_t i = 0; i < n; ++i) part.assignment[i % clients].push_back(idx[i]);
  part.label_sets.reserve(clients);
  for (const auto& shard : part.assignment) part.label_sets.push_back(labels_of(labels, shard));
  return part;
}

NonIidSplit partition_noniid_2class(std::span<const std::int32_t> train_labels,
                                    std::span<const std::int32_t> test_labels,
                                    std::int32_t num_classes, std::size_t clients, Rng rng) {
  const std::size_t n = train_labels.size();
  const std::size_t shards_needed = 2 * clients;
  if (clients == 0) throw std::invalid_argument("partition_noniid_2class: need clients >= 1");
  if (n < shards_needed) {
    throw std::invalid_argument("partition_noniid_2class: need at least 2 examples per client (" +
                                std::to_string(n) + " < " + std::to_string(shards_needed) + ")");
  }

  // Example indices per class, in stable order.
  std::vector<std::vector<std::uint32_t>> by_class(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t c = train_labels[i];
    if (c < 0 || c >= num_classes) {
      throw std::invalid_argument("partition_noniid_2class: label out of range");
    }
    by_class[c].push_back(static_cast<std::uint32_t>(i));
  }
  std::size_t classes_present = 0;
  for (const auto& g : by_class) classes_present += g.empty() ? 0 : 1;
  if (classes_present > shards_needed) {
    throw std::invalid_argument("partition_noniid_2class: more classes than shards");
  }

  // Largest common shard size that still yields 2*clients label-pure shards.
  std::size_t shard_size = n / shards_needed;
  auto shards_at = [&](std::size_t s) {
    std::size_t total = 0;
    for (const auto& g : by_class) total += g.size() / s;
    return total;
  };
  while (shard_size > 1 && shards_at(shard_size) < shards_needed) --shard_size;
  if (shards_at(shard_size) < shards_needed) {
    throw std::invalid_argument("partition_noniid_2class: cannot build enough balanced shards");
  }

  std::vector<std::size_t> shard_count(num_classes);
  std::size_t total = 0;
  for (std::int32_t c = 0; c < num_classes; ++c) {
    shard_count[c] = by_class[c].size() / shard_size;
    total += shard_count[c];
  }
  // Trim surplus shards, always from the class that currently has the most,
  // never below one shard for a class that has data.
  while (total > shards_needed) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < shard_count.size(); ++c) {
      if (shard_count[c] > shard_count[best]) best = c;
    }
    if (shard_count[best] <= 1) break;
    --shard_count[best];
    --total;
  }

  struct Shard {
    std::int32_t label;
    std::vector<std::uint32_t> train_idx;
    std::vector<std::uint32_t> test_idx;
  };
  std::vector<Shard> shards;
  shards.reserve(total);
  for (std::int32_t c = 0; c < num_classes; ++c) {
    for (std::size_t k = 0; k < shard_count[c]; ++k) {
      Shard s{c, {}, {}};
      s.train_idx.assign(by_class[c].begin() + static_cast<std::ptrdiff_t>(k * shard_size),
                         by_class[c].begin() + static_cast<std::ptrdiff_t>((k + 1) * shard_size));
      shards.push_back(std::move(s));
    }
  }

  // Test examples of each class ride along their class's shards, round-robin.
  if (!test_labels.empty()) {
    std::vector<std::vector<std::size_t>> class_shards(num_classes);
    for (std::size_t i = 0; i < shards.size(); ++i) class_shards[shards[i].label].push_back(i);
    std::vector<std::size_t> cursor(num_classes, 0);
    for (std::size_t i = 0; i < test_labels.size(); ++i) {
      const std::int32_t c = test_labels[i];
      if (c < 0 || c >= num_classes) {
        throw std::invalid_argument("partition_noniid_2class: test label out of range");
      }
      const auto& owners = class_shards[c];
      if (owners.empty()) continue;  // class lost to shard trimming: no local owner
      shards[owners[cursor[c] % owners.size()]].test_idx.push_back(static_cast<std::uint32_t>(i));
      ++cursor[c];
    }
  }

  std::vector<std::size_t> order(shards.size());
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);

  NonIidSplit split;
  split.train.assignment.resize(clients);
  split.train.label_sets.resize(clients);
  split.test.assignment.resize(clients);
  split.test.label_sets.resize(clients);
  for (std::size_t m = 0; m < clients; ++m) {
    for (std::size_t k = 0; k < 2; ++k) {
      const Shard& s = shards[order[2 * m + k]];
      auto& train_shard = split.train.assignment[m];
      train_shard.insert(train_shard.end(), s.train_idx.begin(), s.train_idx.end());
      auto& test_shard = split.test.assignment[m];
      test_shard.insert(test_shard.end(), s.test_idx.begin(), s.test_idx.end());
      split.train.label_sets[m].insert(s.label);
      if (!s.test_idx.empty()) split.test.label_sets[m].insert(s.label);
    }
    // Local evaluation predicts within the training label set.
    split.test.label_sets[m] = split.train.label_sets[m];
  }
  return split;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

namespace {

template <class S>
std::vector<Batch<S>> batches_from_order(const DatasetT<S>& ds,
                                         const std::vector<std::uint32_t>& order,
                                         std::size_t batch_size) {
  std::vector<Batch<S>> out;
  out.reserve((order.size() + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    std::span<const std::uint32_t> chunk(order.data() + start, stop - start);
    Batch<S> b;
    b.features = ds.gather(chunk);
    b.labels.reserve(chunk.size());
    for (std::uint32_t i : chunk) b.labels.push_back(ds.labels[i]);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

template <class S>
std::vector<Batch<S>> make_batches(const DatasetT<S>& ds, std::span<const std::uint32_t> shard,
                                   std::size_t batch_size, Rng rng) {
  if (shard.empty()) throw std::invalid_argument("make_batches: empty shard");
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be >= 1");
  std::vector<std::uint32_t> order(shard.begin(), shard.end());
  rng.shuffle(order);
  return batches_from_order(ds, order, batch_size);
}

template <class S>
std::vector<Batch<S>> make_batches_sequential(const DatasetT<S>& ds,
                                              std::span<const std::uint32_t> shard,
                                              std::size_t batch_size) {
  if (shard.empty()) throw std::invalid_argument("make_batches_sequential: empty shard");
  if (batch_size == 0) throw std::invalid_argument("make_batches_sequential: batch size >= 1");
  std::vector<std::uint32_t> order(shard.begin(), shard.end());
  return batches_from_order(ds, order, batch_size);
}

#define HETEROFL_DATA_INSTANTIATE(S)                                                        \
  template struct DatasetT<S>;                                                              \
  template DatasetT<S> load_idx(const std::string&, const std::string&, std::int32_t,      \
                                const Normalization&);                                      \
  template TrainTest<S> make_synthetic(const SyntheticSpec&);                               \
  template std::vector<Batch<S>> make_batches(const DatasetT<S>&,                           \
                                              std::span<const std::uint32_t>, std::size_t,  \
                                              Rng);                                         \
  template std::vector<Batch<S>> make_batches_sequential(const DatasetT<S>&,                \
                                                         std::span<const std::uint32_t>,    \
                                                         std::size_t);

HETEROFL_DATA_INSTANTIATE(float)
HETEROFL_DATA_INSTANTIATE(double)
#undef HETEROFL_DATA_INSTANTIATE

}  // namespace heterofl::data
