#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "test_support.hpp"
#include "triskelion/data.hpp"
#include "triskelion/rng.hpp"

namespace {

#include "oracles/reference_values.inc"

using namespace triskelion;
using namespace triskelion::data;
using Bytes = std::vector<std::uint8_t>;

Bytes image_header(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint32_t magic = 0x803) {
  Bytes b;
  for (std::uint32_t v : {magic, n, rows, cols}) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  }
  return b;
}

TEST(IdxImages, SingleZeroImage) {
  Bytes b{0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 0x1C, 0, 0, 0, 0x1C};
  b.resize(b.size() + 784, 0);
  const auto img = parse_idx_images(b);
  EXPECT_EQ(img.count, 1u);
  EXPECT_EQ(img.rows, 28u);
  EXPECT_EQ(img.cols, 28u);
  ASSERT_EQ(img.pixels.size(), 784u);
  EXPECT_TRUE(std::all_of(img.pixels.begin(), img.pixels.end(), [](auto v) { return v == 0; }));
}

TEST(IdxImages, LabelMagicRejected) {
  Bytes b{0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 0x1C, 0, 0, 0, 0x1C};
  b.resize(b.size() + 784, 0);
  EXPECT_KIND(parse_idx_images(b), ErrorKind::WrongMagic);
}

TEST(IdxImages, TruncatedPayload) {
  Bytes b = image_header(2, 28, 28);
  b.resize(b.size() + 784, 0);
  EXPECT_KIND(parse_idx_images(b), ErrorKind::Truncated);
}

TEST(IdxImages, TruncatedHeader) {
  Bytes b = image_header(1, 28, 28);
  b.resize(10);
  EXPECT_KIND(parse_idx_images(b), ErrorKind::Truncated);
  EXPECT_KIND(parse_idx_images(Bytes{}), ErrorKind::Truncated);
}

TEST(IdxImages, StrictDimensions) {
  Bytes b = image_header(1, 27, 28);
  b.resize(b.size() + 27 * 28, 7);
  EXPECT_KIND(parse_idx_images(b), ErrorKind::DimensionMismatch);
  const auto relaxed = parse_idx_images(b, ParseOptions{false});
  EXPECT_EQ(relaxed.rows, 27u);
  EXPECT_EQ(relaxed.pixels.size(), 27u * 28u);
}

TEST(IdxImages, RowMajorPayload) {
  Bytes b = image_header(2, 2, 3);
  for (std::uint8_t v = 0; v < 12; ++v) b.push_back(v);
  const auto img = parse_idx_images(b, ParseOptions{false});
  ASSERT_EQ(img.count, 2u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(img.pixels[i], i);
}

TEST(IdxLabels, Basic) {
  const Bytes b{0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 9};
  EXPECT_EQ(parse_idx_labels(b), (Bytes{5, 0, 9}));
}

TEST(IdxLabels, OutOfRange) {
  const Bytes b{0, 0, 8, 1, 0, 0, 0, 1, 0x0A};
  EXPECT_KIND(parse_idx_labels(b), ErrorKind::LabelOutOfRange);
}

TEST(IdxLabels, EmptyIsFine) {
  const Bytes b{0, 0, 8, 1, 0, 0, 0, 0};
  EXPECT_TRUE(parse_idx_labels(b).empty());
}

TEST(IdxLabels, Errors) {
  EXPECT_KIND(parse_idx_labels(Bytes{0, 0, 8, 3, 0, 0, 0, 0}), ErrorKind::WrongMagic);
  EXPECT_KIND(parse_idx_labels(Bytes{0, 0, 8, 1, 0, 0, 0, 4, 1, 2}), ErrorKind::Truncated);
  EXPECT_KIND(parse_idx_labels(Bytes{0, 0, 8}), ErrorKind::Truncated);
}

TEST(IdxRoundTrip, RandomFilesBitExact) {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint32_t n = gen() % 5;
    Bytes img = image_header(n, 28, 28);
    for (std::uint32_t i = 0; i < n * 784; ++i) img.push_back(static_cast<std::uint8_t>(gen()));
    Bytes lab{0, 0, 8, 1, 0, 0, 0, static_cast<std::uint8_t>(n)};
    for (std::uint32_t i = 0; i < n; ++i) lab.push_back(static_cast<std::uint8_t>(gen() % 10));
    EXPECT_EQ(encode_idx_images(parse_idx_images(img)), img);
    EXPECT_EQ(encode_idx_labels(parse_idx_labels(lab)), lab);
  }
}

TEST(IdxRoundTrip, LoadDatasetChecksCounts) {
  const auto dir = support::scratch_dir("data");
  const auto ds = support::synthetic_dataset(3, 1);
  support::write_bytes(dir / "img", encode_idx_images(ds.images));
  support::write_bytes(dir / "lab", encode_idx_labels(ds.labels));
  const auto loaded = load_dataset(dir / "img", dir / "lab");
  EXPECT_EQ(loaded.images.pixels, ds.images.pixels);
  EXPECT_EQ(loaded.labels, ds.labels);
  support::write_bytes(dir / "lab2", encode_idx_labels(Bytes{1, 2}));
  EXPECT_KIND(load_dataset(dir / "img", dir / "lab2"), ErrorKind::DimensionMismatch);
  EXPECT_KIND(load_dataset(dir / "missing", dir / "lab"), ErrorKind::IoError);
  std::filesystem::remove_all(dir);
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize(std::uint8_t{0}), 0.0f);
  EXPECT_EQ(normalize(std::uint8_t{255}), 1.0f);
  EXPECT_NEAR(normalize(std::uint8_t{128}), 0.50196078, 1e-7);
  EXPECT_EQ(normalize(std::uint8_t{128}), 128.0f / 255.0f);
}

TEST(Normalize, MonotoneInjectiveInUnitInterval) {
  std::set<float> seen;
  for (int v = 0; v < 256; ++v) {
    const float f = normalize(static_cast<std::uint8_t>(v));
    EXPECT_GE(f, 0.0f);
    EXPECT_LE(f, 1.0f);
    if (v > 0) EXPECT_GT(f, normalize(static_cast<std::uint8_t>(v - 1)));
    seen.insert(f);
  }
  EXPECT_EQ(seen.size(), 256u);
}

TEST(Rng, SplitmixReferenceStream) {
  Rng rng(0);
  for (auto expected : kSplitmixSeed0) EXPECT_EQ(rng.next_u64(), expected);
}

TEST(BatchIter, PartialFinalBatch) {
  const auto ds = support::synthetic_dataset(5, 2);
  const auto batches = batch_iter(ds, 2, 42, 0);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].labels.size(), 2u);
  EXPECT_EQ(batches[1].labels.size(), 2u);
  EXPECT_EQ(batches[2].labels.size(), 1u);
  EXPECT_EQ(batches[2].pixels.shape(), (Shape{1, 1, 28, 28}));
}

TEST(BatchIter, Deterministic) {
  EXPECT_EQ(batch_plan(1000, 128, 42, 3), batch_plan(1000, 128, 42, 3));
}

TEST(BatchIter, PermutationMatchesIndependentImplementation) {
  const auto p0 = epoch_permutation(20, 42, 0);
  const auto p1 = epoch_permutation(20, 42, 1);
  EXPECT_TRUE(std::equal(p0.begin(), p0.end(), std::begin(kPermSeed42Epoch0)));
  EXPECT_TRUE(std::equal(p1.begin(), p1.end(), std::begin(kPermSeed42Epoch1)));
  EXPECT_NE(p0, p1);
  EXPECT_NE(epoch_permutation(60000, 42, 0), epoch_permutation(60000, 42, 1));
}

TEST(BatchIter, CoversEveryIndexOnce) {
  for (std::size_t n : {1u, 7u, 128u, 1000u}) {
    for (std::size_t bs : {1u, 3u, 128u}) {
      for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
        std::vector<std::size_t> all;
        for (const auto& b : batch_plan(n, bs, 9, epoch)) {
          EXPECT_LE(b.size(), bs);
          all.insert(all.end(), b.begin(), b.end());
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(n);
        std::iota(expect.begin(), expect.end(), std::size_t{0});
        EXPECT_EQ(all, expect);
      }
    }
  }
}

TEST(BatchIter, EmptyDataset) {
  RawDataset empty;
  EXPECT_KIND(batch_iter(empty, 4, 1, 0), ErrorKind::EmptyDataset);
}

TEST(BatchIter, BatchContents) {
  const auto ds = support::synthetic_dataset(10, 3);
  const std::vector<std::size_t> idx{7, 2};
  const auto b = make_batch(ds, idx);
  EXPECT_EQ(b.indices, idx);
  EXPECT_EQ(b.labels, (Bytes{ds.labels[7], ds.labels[2]}));
  for (std::size_t p = 0; p < 784; ++p) {
    EXPECT_EQ(b.pixels[p], normalize(ds.images.pixels[7 * 784 + p]));
    EXPECT_EQ(b.pixels[784 + p], normalize(ds.images.pixels[2 * 784 + p]));
  }
}

TEST(TakePrefix, FirstSamples) {
  const auto ds = support::synthetic_dataset(10, 4);
  const auto p = take_prefix(ds, 4);
  EXPECT_EQ(p.size(), 4u);
  EXPECT_EQ(p.images.count, 4u);
  EXPECT_TRUE(std::equal(p.images.pixels.begin(), p.images.pixels.end(), ds.images.pixels.begin()));
  EXPECT_EQ(take_prefix(ds, 100).size(), 10u);
}

TEST(Mnist, RealFilesRoundTrip) {
  if (!support::mnist_available()) GTEST_SKIP() << "MNIST not found in " << support::mnist_dir();
  const auto bytes = read_file(support::mnist_dir() / "t10k-images-idx3-ubyte");
  const auto img = parse_idx_images(bytes);
  EXPECT_EQ(img.count, 10000u);
  EXPECT_EQ(encode_idx_images(img), bytes);
  const auto lbytes = read_file(support::mnist_dir() / "t10k-labels-idx1-ubyte");
  EXPECT_EQ(encode_idx_labels(parse_idx_labels(lbytes)), lbytes);
}

}  // namespace
