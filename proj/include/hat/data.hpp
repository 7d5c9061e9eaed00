#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hat/tensor.hpp"

namespace hat {

enum class Split { kTrain, kTest };

std::string_view split_name(Split split);

inline constexpr std::size_t kNumClasses = 10;
inline constexpr std::size_t kImagePixels = 28 * 28;

/// Images are N x 784 with pixels in [0, 1]; labels are class indices in [0, 10).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  Split split = Split::kTrain;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return images.rank() == 2 ? images.dim(1) : 0; }
};

/// Raw IDX image payload (magic 0x00000803).
struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image file; gzip-compressed files are detected by their
/// 0x1f 0x8b header and inflated transparently.
IdxImages load_idx_images(const std::filesystem::path& path);
/// Reads an IDX label file; every label must lie in [0, 10).
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// Writers for the same format (uncompressed), used for fixtures.
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

/// Scales pixels by 1/255.
Dataset make_dataset(const IdxImages& images, std::vector<int> labels, Split split);

/// Standard Fashion-MNIST file names, without the optional ".gz".
std::string fashion_images_file(Split split);
std::string fashion_labels_file(Split split);

/// Loads a split from `dir`, preferring uncompressed files over ".gz".
/// `limit` > 0 keeps only the first `limit` examples.
Dataset load_fashion_mnist(const std::filesystem::path& dir, Split split, std::size_t limit = 0);
bool fashion_mnist_present(const std::filesystem::path& dir);

/// 784-dimensional Gaussian blobs around 10 seeded class centroids, clipped
/// to [0, 1]. Class counts are balanced. Train and test draws share
/// centroids but use independent sample streams.
Dataset make_synthetic(std::size_t n, std::uint64_t seed, Split split = Split::kTrain);

/// First `n` examples.
Dataset take(const Dataset& data, std::size_t n);
/// Rows `indices` of the image matrix.
Tensor gather_rows(const Dataset& data, std::span<const std::size_t> indices);

/// Seeded per-epoch shuffle of [0, n) cut into batches; the last batch may
/// be short.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, std::size_t epoch);

/// Derives an independent 64-bit seed for a named stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace hat
