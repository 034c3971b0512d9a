#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace quiver {

// On-disk container shared by matrix archives, class statistics, detectors and
// model checkpoints: `<stem>.manifest.json` plus `<stem>.f32bin`, the latter a
// flat little-endian float32 payload.

std::vector<std::uint8_t> encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path payload_path(const std::filesystem::path& stem);

struct Blob {
  nlohmann::json manifest;
  std::vector<float> payload;
};

void write_blob(const std::filesystem::path& stem, const Blob& blob);
Blob read_blob(const std::filesystem::path& stem);

inline constexpr const char* kMatrixArchiveFormat = "quiver-matrix-archive/1";
inline constexpr std::int32_t kNoLabel = -1;

struct ArchiveManifest {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t count = 0;
  std::vector<std::int32_t> class_labels;
  std::vector<std::int32_t> predicted_labels;  // kNoLabel marks the tie region
  std::string run_id;
  nlohmann::json meta = nlohmann::json::object();

  nlohmann::json to_json() const;
  static ArchiveManifest from_json(const nlohmann::json& j);
  std::size_t matrix_size() const noexcept { return rows * cols; }
};

/// A set of equally shaped matrices stored row-major, back to back.
struct MatrixArchive {
  ArchiveManifest manifest;
  std::vector<float> payload;

  MatrixArchive() = default;
  MatrixArchive(std::size_t rows, std::size_t cols, std::string run_id = {});

  void append(const Eigen::MatrixXd& m, std::int32_t class_label, std::int32_t predicted_label);
  Eigen::MatrixXd matrix(std::size_t i) const;
  std::size_t size() const noexcept { return manifest.count; }
};

struct ArchiveBytes {
  std::string manifest;
  std::vector<std::uint8_t> payload;
};

ArchiveBytes save_archive(const MatrixArchive& archive);
MatrixArchive load_archive(std::string_view manifest_text, std::span<const std::uint8_t> payload);

void save_archive(const std::filesystem::path& stem, const MatrixArchive& archive);
MatrixArchive load_archive(const std::filesystem::path& stem);

/// Streams matrices to disk without holding the payload in memory. The
/// manifest is written by finish(); an unfinished archive has no manifest.
class ArchiveWriter {
 public:
  ArchiveWriter(const std::filesystem::path& stem, std::size_t rows, std::size_t cols,
                std::string run_id = {}, nlohmann::json meta = nlohmann::json::object());
  ArchiveWriter(const ArchiveWriter&) = delete;
  ArchiveWriter& operator=(const ArchiveWriter&) = delete;

  void append(const Eigen::MatrixXd& m, std::int32_t class_label, std::int32_t predicted_label);
  void finish();
  std::size_t count() const noexcept { return manifest_.count; }

 private:
  std::filesystem::path stem_;
  ArchiveManifest manifest_;
  std::ofstream out_;
  bool finished_ = false;
};

/// Random-access reader over an archive on disk; loads one matrix at a time.
class ArchiveReader {
 public:
  explicit ArchiveReader(const std::filesystem::path& stem);

  const ArchiveManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return manifest_.count; }
  Eigen::MatrixXd matrix(std::size_t i);

 private:
  ArchiveManifest manifest_;
  std::ifstream in_;
  std::vector<std::uint8_t> buffer_;
};

}  // namespace quiver
