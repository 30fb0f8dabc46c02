#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "heterofl/rng.hpp"
#include "heterofl/tensor.hpp"

namespace heterofl::data {

template <class S>
struct DatasetT {
  TensorT<S> features;             // [n, ...example shape]
  std::vector<std::int32_t> labels;  // [n], values in [0, num_classes)
  std::int32_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> example_shape() const;
  /// Dense copy of the selected examples, first axis = idx.size().
  TensorT<S> gather(std::span<const std::uint32_t> idx) const;
  /// Keeps the first n examples (deterministic subsampling).
  void truncate(std::size_t n);
};

using Dataset = DatasetT<double>;

/// Pixel transform for image datasets: scale to [0,1], then standardize.
struct Normalization {
  double mean = 0.1307;  // the usual MNIST constants
  double stddev = 0.3081;
};

/// Loads a big-endian IDX image/label file pair (the public MNIST layout).
/// Images become [n, 1, rows, cols]; pixels are normalized exactly once.
/// Distinct errors for bad magic, truncation and count mismatch.
template <class S>
DatasetT<S> load_idx(const std::string& images_path, const std::string& labels_path,
                     std::int32_t num_classes, const Normalization& norm);

/// Gaussian-blob classification task for fast deterministic runs. Each class
/// owns `blobs_per_class` centers drawn from N(0, spread^2 I); examples are
/// center + N(0, noise^2 I). Multiple blobs per class make the task
/// non-linearly separable.
struct SyntheticSpec {
  std::size_t train_examples = 2000;
  std::size_t test_examples = 1000;
  std::size_t features = 20;
  std::int32_t classes = 10;
  std::int32_t blobs_per_class = 2;
  double center_spread = 1.0;
  double noise = 0.3;
  std::uint64_t seed = 7;
};

template <class S>
struct TrainTest {
  DatasetT<S> train;
  DatasetT<S> test;
};

template <class S>
TrainTest<S> make_synthetic(const SyntheticSpec& spec);

struct Partition {
  std::vector<std::vector<std::uint32_t>> assignment;  // client -> example indices
  std::vector<std::set<std::int32_t>> label_sets;      // client -> labels present

  std::size_t clients() const { return assignment.size(); }
};

/// Shuffles and deals indices round-robin; client sizes differ by at most 1.
Partition partition_iid(std::span<const std::int32_t> labels, std::size_t clients, Rng rng);

struct NonIidSplit {
  Partition train;
  Partition test;  // test examples dealt along the same label-shard assignment
};

/// Balanced label-skew partition: the sorted-by-label data is cut into
/// 2*clients label-pure shards of one common size, shuffled, and dealt two
/// per client, so every client sees at most two classes with equal per-class
/// counts. Per-class remainders that do not fill a shard are left out; a
/// class smaller than one shard is dropped entirely, so full label coverage
/// needs every present class to hold at least n/(2*clients) examples (true
/// for the balanced datasets this partition is meant for).
NonIidSplit partition_noniid_2class(std::span<const std::int32_t> train_labels,
                                    std::span<const std::int32_t> test_labels,
                                    std::int32_t num_classes, std::size_t clients, Rng rng);

template <class S>
struct Batch {
  TensorT<S> features;
  std::vector<std::int32_t> labels;
};

/// One epoch over the shard: seeded shuffle, batches of `batch_size`, final
/// short batch kept. Every shard example appears exactly once.
template <class S>
std::vector<Batch<S>> make_batches(const DatasetT<S>& ds, std::span<const std::uint32_t> shard,
                                   std::size_t batch_size, Rng rng);

/// Batches in stored shard order (finalization/evaluation passes).
template <class S>
std::vector<Batch<S>> make_batches_sequential(const DatasetT<S>& ds,
                                              std::span<const std::uint32_t> shard,
                                              std::size_t batch_size);

}  // namespace heterofl::data
