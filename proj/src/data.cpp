#include "hat/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>

#include "hat/errors.hpp"

namespace hat {
namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// zlib reads plain files unchanged and inflates files carrying the gzip header.
class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::kIo, "file not found: " + path.string());
    file_.reset(gzopen(path.string().c_str(), "rb"));
    if (!file_) fail(ErrorKind::kIo, "cannot open " + path.string());
  }

  void read(void* dst, std::size_t bytes, std::string_view what) {
    auto* out = static_cast<unsigned char*>(dst);
    std::size_t done = 0;
    while (done < bytes) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes - done, 1u << 30));
      const int got = gzread(file_.get(), out + done, chunk);
      if (got <= 0) {
        fail(ErrorKind::kLength, path_.string() + ": truncated while reading " + std::string(what) +
                                     " (" + std::to_string(done) + " of " + std::to_string(bytes) +
                                     " bytes)");
      }
      done += static_cast<std::size_t>(got);
    }
  }

  std::uint32_t read_be32(std::string_view what) {
    unsigned char b[4];
    read(b, 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
  }

  void expect_magic(std::uint32_t expected) {
    const std::uint32_t found = read_be32("magic");
    if (found != expected) {
      char msg[96];
      std::snprintf(msg, sizeof msg, ": bad IDX magic, expected 0x%08x, found 0x%08x", expected,
                    found);
      fail(ErrorKind::kFormat, path_.string() + msg);
    }
  }

 private:
  std::filesystem::path path_;
  GzHandle file_;
};

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

std::filesystem::path resolve(const std::filesystem::path& dir, const std::string& name) {
  const auto plain = dir / name;
  if (std::filesystem::exists(plain)) return plain;
  return dir / (name + ".gz");
}

}  // namespace

std::string_view split_name(Split split) { return split == Split::kTrain ? "train" : "test"; }

IdxImages load_idx_images(const std::filesystem::path& path) {
  IdxReader in(path);
  in.expect_magic(kIdxImageMagic);
  IdxImages images;
  images.count = in.read_be32("image count");
  images.rows = in.read_be32("row count");
  images.cols = in.read_be32("column count");
  images.pixels.resize(images.count * images.rows * images.cols);
  in.read(images.pixels.data(), images.pixels.size(), "pixels");
  return images;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  IdxReader in(path);
  in.expect_magic(kIdxLabelMagic);
  const std::size_t count = in.read_be32("label count");
  std::vector<std::uint8_t> raw(count);
  in.read(raw.data(), raw.size(), "labels");
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (raw[i] >= kNumClasses) {
      fail(ErrorKind::kData, path.string() + ": label " + std::to_string(raw[i]) + " at index " +
                                 std::to_string(i) + " is outside [0, 10)");
    }
    labels[i] = raw[i];
  }
  return labels;
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.write(reinterpret_cast<const char*>(images.pixels.data()),
            static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset make_dataset(const IdxImages& images, std::vector<int> labels, Split split) {
  if (images.count != labels.size()) {
    fail(ErrorKind::kData, std::to_string(images.count) + " images but " +
                               std::to_string(labels.size()) + " labels");
  }
  const std::size_t features = images.rows * images.cols;
  Tensor pixels({images.count, features}, 0.0);
  for (std::size_t i = 0; i < images.pixels.size(); ++i) pixels[i] = images.pixels[i] / 255.0;
  return {std::move(pixels), std::move(labels), split};
}

std::string fashion_images_file(Split split) {
  return split == Split::kTrain ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
}

std::string fashion_labels_file(Split split) {
  return split == Split::kTrain ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
}

bool fashion_mnist_present(const std::filesystem::path& dir) {
  for (Split s : {Split::kTrain, Split::kTest}) {
    for (const auto& name : {fashion_images_file(s), fashion_labels_file(s)}) {
      if (!std::filesystem::exists(resolve(dir, name))) return false;
    }
  }
  return true;
}

Dataset load_fashion_mnist(const std::filesystem::path& dir, Split split, std::size_t limit) {
  auto images = load_idx_images(resolve(dir, fashion_images_file(split)));
  auto labels = load_idx_labels(resolve(dir, fashion_labels_file(split)));
  auto data = make_dataset(images, std::move(labels), split);
  return limit > 0 && limit < data.size() ? take(data, limit) : data;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Dataset make_synthetic(std::size_t n, std::uint64_t seed, Split split) {
  if (n < kNumClasses) fail(ErrorKind::kConfig, "synthetic dataset needs n >= 10");
  std::mt19937_64 centroid_rng(derive_seed(seed, 100));
  std::uniform_real_distribution<double> level(0.2, 0.8);
  std::vector<double> centroids(kNumClasses * kImagePixels);
  for (auto& c : centroids) c = level(centroid_rng);

  std::mt19937_64 rng(derive_seed(seed, split == Split::kTrain ? 101 : 102));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> noise(0.0, 0.15);
  Tensor images({n, kImagePixels}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = centroids.data() + labels[i] * kImagePixels;
    for (std::size_t p = 0; p < kImagePixels; ++p) {
      images[i * kImagePixels + p] = std::clamp(c[p] + noise(rng), 0.0, 1.0);
    }
  }
  return {std::move(images), std::move(labels), split};
}

Dataset take(const Dataset& data, std::size_t n) {
  n = std::min(n, data.size());
  const std::size_t f = data.features();
  std::vector<double> pixels(data.images.data().begin(), data.images.data().begin() + n * f);
  return {Tensor({n, f}, std::move(pixels)),
          std::vector<int>(data.labels.begin(), data.labels.begin() + n), data.split};
}

Tensor gather_rows(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t f = data.features();
  Tensor out({indices.size(), f}, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(data.images.data().begin() + indices[r] * f, f, out.data().begin() + r * f);
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0 || batch_size > n) {
    fail(ErrorKind::kConfig, "batch size " + std::to_string(batch_size) + " invalid for " +
                                 std::to_string(n) + " examples");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 1000 + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, n);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

}  // namespace hat
