#include <gtest/gtest.h>

#include <zlib.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "hat/data.hpp"
#include "hat/errors.hpp"

using namespace hat;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("hat_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

IdxImages two_images() {
  IdxImages img{2, 28, 28, std::vector<std::uint8_t>(2 * 784)};
  for (std::size_t k = 0; k < img.pixels.size(); ++k) img.pixels[k] = static_cast<std::uint8_t>((k * 37 + 11) % 256);
  return img;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void gzip_file(const fs::path& from, const fs::path& to) {
  const auto bytes = read_bytes(from);
  gzFile gz = gzopen(to.c_str(), "wb");
  ASSERT_NE(gz, nullptr);
  gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(gz);
}

template <typename F>
ErrorKind error_kind_of(F&& f, std::string* message = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kUsage;
}

}  // namespace

TEST(Idx, ImageRoundTripExact) {
  TempDir dir;
  const IdxImages img = two_images();
  write_idx_images(dir.path() / "img", img);
  const IdxImages back = load_idx_images(dir.path() / "img");
  EXPECT_EQ(back.count, 2u);
  EXPECT_EQ(back.rows, 28u);
  EXPECT_EQ(back.cols, 28u);
  EXPECT_EQ(back.pixels, img.pixels);
  // big-endian header
  const auto bytes = read_bytes(dir.path() / "img");
  ASSERT_EQ(bytes.size(), 16u + 2 * 784);
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 8),
            (std::vector<std::uint8_t>{0, 0, 8, 3, 0, 0, 0, 2}));
}

TEST(Idx, GzipIsDetected) {
  TempDir dir;
  write_idx_images(dir.path() / "img", two_images());
  gzip_file(dir.path() / "img", dir.path() / "img.gz");
  EXPECT_EQ(read_bytes(dir.path() / "img.gz")[0], 0x1f);
  EXPECT_EQ(load_idx_images(dir.path() / "img.gz").pixels, two_images().pixels);
}

TEST(Idx, LabelRoundTripExact) {
  TempDir dir;
  const std::vector<std::uint8_t> labels{0, 9};
  write_idx_labels(dir.path() / "lab", labels);
  EXPECT_EQ(load_idx_labels(dir.path() / "lab"), (std::vector<int>{0, 9}));
}

TEST(Idx, WrongMagicNamesExpectedAndFound) {
  TempDir dir;
  const std::vector<std::uint8_t> labels{1, 2, 3};
  write_idx_labels(dir.path() / "lab", labels);
  std::string msg;
  EXPECT_EQ(error_kind_of([&] { load_idx_images(dir.path() / "lab"); }, &msg), ErrorKind::kFormat);
  EXPECT_NE(msg.find("0x00000803"), std::string::npos) << msg;
  EXPECT_NE(msg.find("0x00000801"), std::string::npos) << msg;
  write_idx_images(dir.path() / "img", two_images());
  EXPECT_EQ(error_kind_of([&] { load_idx_labels(dir.path() / "img"); }), ErrorKind::kFormat);
}

TEST(Idx, TruncationIsLengthError) {
  TempDir dir;
  write_idx_images(dir.path() / "img", two_images());
  auto bytes = read_bytes(dir.path() / "img");
  bytes.resize(bytes.size() - 100);
  write_bytes(dir.path() / "short", bytes);
  EXPECT_EQ(error_kind_of([&] { load_idx_images(dir.path() / "short"); }), ErrorKind::kLength);
  bytes.resize(10);
  write_bytes(dir.path() / "header", bytes);
  EXPECT_EQ(error_kind_of([&] { load_idx_images(dir.path() / "header"); }), ErrorKind::kLength);
  const std::vector<std::uint8_t> labels{1, 2, 3, 4};
  write_idx_labels(dir.path() / "lab", labels);
  auto lb = read_bytes(dir.path() / "lab");
  lb.pop_back();
  write_bytes(dir.path() / "lab_short", lb);
  EXPECT_EQ(error_kind_of([&] { load_idx_labels(dir.path() / "lab_short"); }), ErrorKind::kLength);
}

TEST(Idx, LabelOutOfRangeIsDataError) {
  TempDir dir;
  const std::vector<std::uint8_t> labels{3, 10};
  write_idx_labels(dir.path() / "lab", labels);
  EXPECT_EQ(error_kind_of([&] { load_idx_labels(dir.path() / "lab"); }), ErrorKind::kData);
}

TEST(Idx, MissingFileIsIoError) {
  EXPECT_EQ(error_kind_of([] { load_idx_images("/nonexistent/hat/file"); }), ErrorKind::kIo);
}

TEST(Dataset, PixelsScaledTo01) {
  IdxImages img = two_images();
  img.pixels[0] = 255;
  img.pixels[1] = 0;
  const Dataset d = make_dataset(img, {4, 7}, Split::kTest);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.features(), 784u);
  EXPECT_EQ(d.images[0], 1.0);
  EXPECT_EQ(d.images[1], 0.0);
  EXPECT_EQ(d.images[2], img.pixels[2] / 255.0);
  for (double v : d.images.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(FashionMnist, LoadsFromDirectoryFixture) {
  TempDir dir;
  write_idx_images(dir.path() / fashion_images_file(Split::kTrain), two_images());
  const std::vector<std::uint8_t> labels{5, 1};
  write_idx_labels(dir.path() / fashion_labels_file(Split::kTrain), labels);
  write_idx_images(dir.path() / "img", two_images());
  gzip_file(dir.path() / "img", dir.path() / (fashion_images_file(Split::kTest) + ".gz"));
  write_idx_labels(dir.path() / "lab", labels);
  gzip_file(dir.path() / "lab", dir.path() / (fashion_labels_file(Split::kTest) + ".gz"));
  EXPECT_TRUE(fashion_mnist_present(dir.path()));
  const Dataset train = load_fashion_mnist(dir.path(), Split::kTrain);
  const Dataset test = load_fashion_mnist(dir.path(), Split::kTest, 1);
  EXPECT_EQ(train.labels, (std::vector<int>{5, 1}));
  EXPECT_EQ(test.size(), 1u);
  EXPECT_EQ(test.split, Split::kTest);
}

TEST(FashionMnist, PublishedFileSizes) {
  const char* env = std::getenv("HAT_DATA_DIR");
  const fs::path dir = env && *env ? env : "data";
  if (!fashion_mnist_present(dir)) GTEST_SKIP() << "Fashion-MNIST not found in " << dir;
  EXPECT_EQ(load_idx_images(dir / fashion_images_file(Split::kTrain)).count, 60000u);
  EXPECT_EQ(load_fashion_mnist(dir, Split::kTest).size(), 10000u);
}

TEST(Synthetic, DeterministicBySeed) {
  const Dataset a = make_synthetic(100, 4), b = make_synthetic(100, 4), c = make_synthetic(100, 5);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images, c.images);
}

TEST(Synthetic, ClassCountsAndRange) {
  const Dataset d = make_synthetic(1000, 6);
  std::vector<int> counts(10);
  for (int y : d.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) {
    EXPECT_GE(c, 80);
    EXPECT_LE(c, 120);
  }
  for (double v : d.images.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synthetic, TooSmallIsConfigError) {
  EXPECT_EQ(error_kind_of([] { make_synthetic(9, 1); }), ErrorKind::kConfig);
}

TEST(Batches, TwoFullBatches) {
  const auto b = batches(100, 50, 1, 0);
  ASSERT_EQ(b.size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(*seen.rbegin(), 99u);
}

TEST(Batches, ShortLastBatch) {
  const auto b = batches(101, 50, 1, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[2].size(), 1u);
}

TEST(Batches, PartitionEveryEpochAndDeterministic) {
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    const auto b = batches(237, 20, 9, epoch);
    std::vector<std::size_t> all;
    for (const auto& batch : b) all.insert(all.end(), batch.begin(), batch.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_EQ(b, batches(237, 20, 9, epoch));
  }
  EXPECT_NE(batches(237, 20, 9, 0), batches(237, 20, 9, 1));
}

TEST(Batches, OversizedBatchIsConfigError) {
  EXPECT_EQ(error_kind_of([] { batches(10, 11, 1, 0); }), ErrorKind::kConfig);
}
