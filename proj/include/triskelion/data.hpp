#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "triskelion/tensor.hpp"

namespace triskelion::data {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;
inline constexpr std::size_t kSide = 28;
inline constexpr std::size_t kNumClasses = 10;

// u8 images stored row-major, count × rows × cols.
struct ImageSet {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t image_size() const { return rows * cols; }
};

struct RawDataset {
  ImageSet images;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
};

struct Batch {
  Tensor<float> pixels;  // B×1×rows×cols, values in [0,1]
  std::vector<std::uint8_t> labels;
  std::vector<std::size_t> indices;
};

struct ParseOptions {
  bool strict = true;  // require 28×28 images
};

ImageSet parse_idx_images(std::span<const std::uint8_t> bytes, ParseOptions options = {});
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_idx_images(const ImageSet& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Parses both files and checks that image and label counts agree.
RawDataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                        ParseOptions options = {});

// First `count` samples (or all if count >= size).
RawDataset take_prefix(const RawDataset& dataset, std::size_t count);

// raw / 255 in 32-bit float.
float normalize(std::uint8_t raw);
std::vector<float> normalize(std::span<const std::uint8_t> raw);

// Permutation of 0..n-1 by Fisher–Yates over a splitmix64 stream seeded
// with mix_seed(seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

// Index batches cut sequentially from the epoch permutation; the final
// partial batch is kept.
std::vector<std::vector<std::size_t>> batch_plan(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);

Batch make_batch(const RawDataset& dataset, std::span<const std::size_t> indices);

std::vector<Batch> batch_iter(const RawDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                              std::uint64_t epoch);

}  // namespace triskelion::data
