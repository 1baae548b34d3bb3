#include "triskelion/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "triskelion/error.hpp"
#include "triskelion/rng.hpp"

namespace triskelion::data {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_header_word(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) fail(ErrorKind::Truncated, "IDX header shorter than expected");
  return read_be32(bytes, offset);
}

}  // namespace

ImageSet parse_idx_images(std::span<const std::uint8_t> bytes, ParseOptions options) {
  const std::uint32_t magic = read_header_word(bytes, 0);
  if (magic != kImageMagic) fail(ErrorKind::WrongMagic, "expected image magic 0x00000803");
  ImageSet set;
  set.count = read_header_word(bytes, 4);
  set.rows = read_header_word(bytes, 8);
  set.cols = read_header_word(bytes, 12);
  if (options.strict && (set.rows != kSide || set.cols != kSide)) {
    fail(ErrorKind::DimensionMismatch,
         "images are " + std::to_string(set.rows) + "x" + std::to_string(set.cols) + ", expected 28x28");
  }
  const std::size_t payload = set.count * set.rows * set.cols;
  if (bytes.size() - 16 < payload) {
    fail(ErrorKind::Truncated, "image payload has " + std::to_string(bytes.size() - 16) + " bytes, header needs " +
                                   std::to_string(payload));
  }
  set.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return set;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_header_word(bytes, 0);
  if (magic != kLabelMagic) fail(ErrorKind::WrongMagic, "expected label magic 0x00000801");
  const std::size_t count = read_header_word(bytes, 4);
  if (bytes.size() - 8 < count) {
    fail(ErrorKind::Truncated, "label payload has " + std::to_string(bytes.size() - 8) + " bytes, header needs " +
                                   std::to_string(count));
  }
  std::vector<std::uint8_t> labels(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) {
      fail(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]) + " at index " + std::to_string(i));
    }
  }
  return labels;
}

std::vector<std::uint8_t> encode_idx_images(const ImageSet& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kImageMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count));
  write_be32(out, static_cast<std::uint32_t>(images.rows));
  write_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoError, "read failed for " + path.string());
  return bytes;
}

RawDataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                        ParseOptions options) {
  RawDataset ds;
  ds.images = parse_idx_images(read_file(images), options);
  ds.labels = parse_idx_labels(read_file(labels));
  if (ds.images.count != ds.labels.size()) {
    fail(ErrorKind::DimensionMismatch, std::to_string(ds.images.count) + " images but " +
                                           std::to_string(ds.labels.size()) + " labels");
  }
  return ds;
}

RawDataset take_prefix(const RawDataset& dataset, std::size_t count) {
  count = std::min(count, dataset.size());
  RawDataset out;
  out.images.count = count;
  out.images.rows = dataset.images.rows;
  out.images.cols = dataset.images.cols;
  const auto bytes = static_cast<std::ptrdiff_t>(count * dataset.images.image_size());
  out.images.pixels.assign(dataset.images.pixels.begin(), dataset.images.pixels.begin() + bytes);
  out.labels.assign(dataset.labels.begin(), dataset.labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

float normalize(std::uint8_t raw) { return static_cast<float>(raw) / 255.0f; }

std::vector<float> normalize(std::span<const std::uint8_t> raw) {
  std::vector<float> out(raw.size());
  std::transform(raw.begin(), raw.end(), out.begin(), [](std::uint8_t v) { return normalize(v); });
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
  if (n == 0) fail(ErrorKind::EmptyDataset, "cannot batch an empty dataset");
  if (batch_size == 0) fail(ErrorKind::InvalidArgument, "batch size must be positive");
  const auto perm = epoch_permutation(n, seed, epoch);
  std::vector<std::vector<std::size_t>> plan;
  plan.reserve((n + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    plan.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return plan;
}

Batch make_batch(const RawDataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) fail(ErrorKind::EmptyDataset, "empty batch");
  const std::size_t rows = dataset.images.rows, cols = dataset.images.cols, pixels = rows * cols;
  std::vector<float> values(indices.size() * pixels);
  Batch batch;
  batch.labels.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const std::size_t idx = indices[b];
    if (idx >= dataset.size()) fail(ErrorKind::InvalidArgument, "batch index out of range");
    const std::uint8_t* src = dataset.images.pixels.data() + idx * pixels;
    for (std::size_t p = 0; p < pixels; ++p) values[b * pixels + p] = normalize(src[p]);
    batch.labels.push_back(dataset.labels[idx]);
  }
  batch.pixels = Tensor<float>({indices.size(), 1, rows, cols}, std::move(values));
  batch.indices.assign(indices.begin(), indices.end());
  return batch;
}

std::vector<Batch> batch_iter(const RawDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                              std::uint64_t epoch) {
  std::vector<Batch> batches;
  for (const auto& idx : batch_plan(dataset.size(), batch_size, seed, epoch)) {
    batches.push_back(make_batch(dataset, idx));
  }
  return batches;
}

}  // namespace triskelion::data
