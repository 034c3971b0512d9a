#include "quiver/data_io.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "quiver/error.hpp"

namespace quiver {

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

// Partial Fisher-Yates: the first k entries of `pool` become a uniform draw
// without replacement.
void partial_shuffle(std::vector<std::size_t>& pool, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
}

}  // namespace

std::size_t IdxTensor::element_count() const noexcept {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

IdxTensor parse_idx(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) {
    fail(ErrorCode::BadMagic, "IDX header must start with two zero bytes");
  }
  if (bytes[2] != kIdxTypeU8) {
    fail(ErrorCode::UnsupportedTypeCode,
         "only unsigned byte tensors (0x08) are supported, got " + std::to_string(bytes[2]));
  }
  const std::size_t rank = bytes[3];
  if (rank == 0) fail(ErrorCode::BadMagic, "IDX tensor must have at least one dimension");
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) {
    fail(ErrorCode::TruncatedPayload, "file ends inside the dimension table");
  }
  IdxTensor out;
  out.dims.reserve(rank);
  for (std::size_t i = 0; i < rank; ++i) out.dims.push_back(read_be32(bytes, 4 + 4 * i));
  const std::size_t expected = out.element_count();
  const std::size_t available = bytes.size() - header;
  if (available < expected) {
    fail(ErrorCode::TruncatedPayload, "expected " + std::to_string(expected) + " data bytes, found " +
                                          std::to_string(available));
  }
  if (available > expected) {
    fail(ErrorCode::ShapeMismatch, std::to_string(available - expected) + " trailing bytes after payload");
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx(const IdxTensor& tensor) {
  if (tensor.dims.empty() || tensor.dims.size() > 255) {
    fail(ErrorCode::ShapeMismatch, "IDX rank must be in [1, 255]");
  }
  if (tensor.element_count() != tensor.data.size()) {
    fail(ErrorCode::ShapeMismatch, "dims do not match data length");
  }
  std::vector<std::uint8_t> out{0, 0, kIdxTypeU8, static_cast<std::uint8_t>(tensor.dims.size())};
  out.reserve(4 + 4 * tensor.dims.size() + tensor.data.size());
  for (auto d : tensor.dims) write_be32(out, d);
  out.insert(out.end(), tensor.data.begin(), tensor.data.end());
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    fail(ErrorCode::Io, "short read on " + path.string());
  }
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "short write on " + path.string());
}

void Dataset::validate() const {
  if (pixels.size() != labels.size() * dim) {
    fail(ErrorCode::ShapeMismatch, "pixel buffer does not match size * dim");
  }
  for (float p : pixels) {
    if (!(p >= 0.0f && p <= 1.0f)) fail(ErrorCode::InvalidArgument, "pixel outside [0,1]");
  }
  for (auto l : labels) {
    if (l >= classes) fail(ErrorCode::InvalidArgument, "label out of range");
  }
}

Dataset make_dataset(const IdxTensor& images, const IdxTensor& labels, Split split, std::size_t classes) {
  if (images.dims.empty() || labels.dims.size() != 1) {
    fail(ErrorCode::ShapeMismatch, "expected images [n, ...] and labels [n]");
  }
  const std::size_t n = images.dims[0];
  if (labels.dims[0] != n) fail(ErrorCode::ShapeMismatch, "image and label counts differ");
  Dataset ds;
  ds.split = split;
  ds.classes = classes;
  ds.dim = n == 0 ? 0 : images.element_count() / n;
  ds.pixels.resize(images.data.size());
  std::transform(images.data.begin(), images.data.end(), ds.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v / 255.0); });
  ds.labels = labels.data;
  for (auto l : ds.labels) {
    if (l >= classes) fail(ErrorCode::InvalidArgument, "label " + std::to_string(l) + " >= classes");
  }
  return ds;
}

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                         Split split, std::size_t classes) {
  return make_dataset(parse_idx(read_file(images)), parse_idx(read_file(labels)), split, classes);
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.dim = data.dim;
  out.classes = data.classes;
  out.split = data.split;
  out.pixels.reserve(indices.size() * data.dim);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    if (i >= data.size()) fail(ErrorCode::InvalidArgument, "subset index out of range");
    auto img = data.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

std::size_t SampleSet::total() const noexcept {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.size();
  return n;
}

std::vector<std::size_t> SampleSet::flatten() const {
  std::vector<std::size_t> out;
  out.reserve(total());
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

SampleSet sample_per_class(const Dataset& data, std::size_t n_per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> members(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) members[data.labels[i]].push_back(i);
  SampleSet out;
  out.seed = seed;
  out.groups.resize(data.classes);
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < data.classes; ++c) {
    if (members[c].size() < n_per_class) {
      fail(ErrorCode::InsufficientClassMembers,
           "class " + std::to_string(c) + " has " + std::to_string(members[c].size()) + " members, need " +
               std::to_string(n_per_class));
    }
    partial_shuffle(members[c], n_per_class, rng);
    out.groups[c] = std::move(members[c]);
  }
  return out;
}

SampleSet sample_uniform(const Dataset& data, std::size_t n, std::uint64_t seed) {
  if (n > data.size()) {
    fail(ErrorCode::SampleTooLarge,
         "requested " + std::to_string(n) + " of " + std::to_string(data.size()) + " samples");
  }
  std::vector<std::size_t> pool(data.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  partial_shuffle(pool, n, rng);
  SampleSet out;
  out.seed = seed;
  out.groups.push_back(std::move(pool));
  return out;
}

SampleSet group_by(std::span<const std::size_t> indices, std::span<const std::size_t> classes,
                   std::size_t class_count, std::uint64_t seed) {
  if (indices.size() != classes.size()) fail(ErrorCode::ShapeMismatch, "one class per index required");
  SampleSet out;
  out.seed = seed;
  out.groups.resize(class_count);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (classes[i] >= class_count) fail(ErrorCode::InvalidArgument, "class out of range");
    out.groups[classes[i]].push_back(indices[i]);
  }
  return out;
}

}  // namespace quiver
