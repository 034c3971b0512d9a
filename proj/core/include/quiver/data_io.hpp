#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace quiver {

enum class Split { train, test };

/// Decoded IDX tensor. Only the unsigned-byte element type (0x08) is supported,
/// which covers the MNIST and FashionMNIST distribution files.
struct IdxTensor {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t element_count() const noexcept;
};

inline constexpr std::uint8_t kIdxTypeU8 = 0x08;

IdxTensor parse_idx(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_idx(const IdxTensor& tensor);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Flattened images with pixels in [0,1] plus class labels in [0, classes).
struct Dataset {
  std::vector<float> pixels;  // size() * dim, row-major
  std::vector<std::uint8_t> labels;
  std::size_t dim = 0;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * dim, dim};
  }
  void validate() const;
};

/// Builds a dataset from an image tensor [n, rows, cols] (or [n, d]) and a
/// label tensor [n]. Pixels are scaled by 1/255.
Dataset make_dataset(const IdxTensor& images, const IdxTensor& labels, Split split,
                     std::size_t classes = 10);

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         Split split, std::size_t classes = 10);

/// Returns a dataset holding only the listed rows, in order.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

/// Index groups drawn from a dataset. sample_per_class fills one group per
/// class label; sample_uniform fills a single group that callers regroup by
/// the network's prediction.
struct SampleSet {
  std::vector<std::vector<std::size_t>> groups;
  std::uint64_t seed = 0;

  std::size_t total() const noexcept;
  std::vector<std::size_t> flatten() const;
};

SampleSet sample_per_class(const Dataset& data, std::size_t n_per_class, std::uint64_t seed);
SampleSet sample_uniform(const Dataset& data, std::size_t n, std::uint64_t seed);

/// Regroups a flat index list by an external class assignment (e.g. the
/// model's predicted class), preserving order within each group.
SampleSet group_by(std::span<const std::size_t> indices, std::span<const std::size_t> classes,
                   std::size_t class_count, std::uint64_t seed);

}  // namespace quiver
