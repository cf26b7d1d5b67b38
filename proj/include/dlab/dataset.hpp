#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dlab/tensor.hpp"

namespace dlab {

/// Images [N, channels, H, W] in [0,1] with integer class labels.
struct Dataset {
  TensorF images{Shape{0, 0, 0, 0}};
  std::vector<std::int64_t> labels;
  std::vector<std::string> class_names;
  std::optional<TensorD> human_probs;  // [N, C]

  Index size() const { return images.dim(0); }
  Index num_classes() const { return static_cast<Index>(class_names.size()); }
  /// Per-sample image shape [channels, H, W].
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  /// Copy of sample i as a [channels, H, W] tensor.
  TensorF image(Index i) const;

  /// Subset in the given index order.
  Dataset subset(const std::vector<std::int64_t>& indices) const;

  void validate() const;
};

inline constexpr std::uint64_t kCifarRecordBytes = 3073;

std::vector<std::string> cifar10_class_names();

/// Parses one CIFAR-10 binary batch file.
Dataset load_cifar10_batch(const std::filesystem::path& file);

enum class CifarSplit { train, test };

/// Loads data_batch_1..5.bin (train) or test_batch.bin (test) from `dir`.
/// Class names come from batches.meta.txt when present.
Dataset load_cifar10_bin(const std::filesystem::path& dir, CifarSplit split = CifarSplit::test);

/// Reads an IDX3 image file and IDX1 label file into [N, 1, rows, cols].
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Attaches per-sample human label distributions from an array container
/// of shape [N, C]; rows are normalized to sum to one.
Dataset attach_human_labels(Dataset ds, const std::filesystem::path& array_path);
Dataset attach_human_labels(Dataset ds, const TensorD& counts);

struct SynthConfig {
  std::uint64_t seed = 0;
  Index n_classes = 4;
  Index per_class = 100;
  Index img_side = 12;
  Index channels = 3;
  double difficulty = 0.5;
  /// Contrast multiplier around 0.5 and additive brightness; (1, 0) is the
  /// training distribution.
  double contrast = 1.0;
  double brightness = 0.0;
  /// Distinct sample streams share the class templates of `seed`.
  std::uint64_t sample_stream = 0;
  /// Sharpness of the template-match softmax that fabricates human labels.
  double human_sharpness = 40.0;
};

/// Class templates [n_classes, channels, side, side] for `cfg.seed`.
TensorF synthetic_templates(const SynthConfig& cfg);

/// Class-conditional images from per-class templates plus noise. Samples are
/// interleaved by class (sample i has label i mod n_classes).
Dataset make_synthetic(const SynthConfig& cfg);

/// Disjoint seeded-shuffle splits of floor(f * N) samples each.
std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed);

/// Per-channel pixel mean and population std.
std::pair<std::vector<float>, std::vector<float>> channel_stats(const Dataset& ds);

}  // namespace dlab
