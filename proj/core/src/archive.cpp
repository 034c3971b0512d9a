#include "quiver/archive.hpp"

#include <bit>
#include <cstring>

#include "quiver/data_io.hpp"
#include "quiver/error.hpp"

namespace quiver {

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

void put_matrix(const Eigen::MatrixXd& m, std::vector<float>& out) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
  }
}

Eigen::MatrixXd take_matrix(const float* data, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = data[r * cols + c];
  }
  return m;
}

void check_payload_length(const ArchiveManifest& m, std::size_t floats) {
  if (floats != m.count * m.matrix_size()) {
    fail(ErrorCode::ShapeMismatch, "payload holds " + std::to_string(floats) + " floats, manifest expects " +
                                       std::to_string(m.count * m.matrix_size()));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_f32_le(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(out.data() + 4 * i, &bits, 4);
  }
  return out;
}

std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 4 != 0) fail(ErrorCode::ShapeMismatch, "payload length is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_le(bits));
  }
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".manifest.json");
}

std::filesystem::path payload_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".f32bin");
}

void write_blob(const std::filesystem::path& stem, const Blob& blob) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const std::string text = blob.manifest.dump(2) + "\n";
  write_file(manifest_path(stem), {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  write_file(payload_path(stem), encode_f32_le(blob.payload));
}

Blob read_blob(const std::filesystem::path& stem) {
  Blob blob;
  const auto text = read_file(manifest_path(stem));
  try {
    blob.manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("unparseable manifest: ") + e.what());
  }
  blob.payload = decode_f32_le(read_file(payload_path(stem)));
  return blob;
}

nlohmann::json ArchiveManifest::to_json() const {
  return {{"format", kMatrixArchiveFormat},
          {"dtype", "float32-le"},
          {"layout", "row-major"},
          {"shape", {rows, cols}},
          {"count", count},
          {"class_labels", class_labels},
          {"predicted_labels", predicted_labels},
          {"run_id", run_id},
          {"meta", meta}};
}

ArchiveManifest ArchiveManifest::from_json(const nlohmann::json& j) {
  ArchiveManifest m;
  try {
    if (j.at("format").get<std::string>() != kMatrixArchiveFormat) {
      fail(ErrorCode::ManifestMismatch, "unknown archive format");
    }
    const auto& shape = j.at("shape");
    if (!shape.is_array() || shape.size() != 2) fail(ErrorCode::ManifestMismatch, "shape must be [rows, cols]");
    m.rows = shape[0].get<std::size_t>();
    m.cols = shape[1].get<std::size_t>();
    m.count = j.at("count").get<std::size_t>();
    m.class_labels = j.at("class_labels").get<std::vector<std::int32_t>>();
    m.predicted_labels = j.at("predicted_labels").get<std::vector<std::int32_t>>();
    m.run_id = j.value("run_id", std::string{});
    m.meta = j.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("malformed manifest: ") + e.what());
  }
  if (m.class_labels.size() != m.count || m.predicted_labels.size() != m.count) {
    fail(ErrorCode::ManifestMismatch, "label arrays must have one entry per matrix");
  }
  return m;
}

MatrixArchive::MatrixArchive(std::size_t rows, std::size_t cols, std::string run_id) {
  manifest.rows = rows;
  manifest.cols = cols;
  manifest.run_id = std::move(run_id);
}

void MatrixArchive::append(const Eigen::MatrixXd& m, std::int32_t class_label, std::int32_t predicted_label) {
  if (static_cast<std::size_t>(m.rows()) != manifest.rows || static_cast<std::size_t>(m.cols()) != manifest.cols) {
    fail(ErrorCode::ShapeMismatch, "matrix shape differs from archive shape");
  }
  put_matrix(m, payload);
  manifest.class_labels.push_back(class_label);
  manifest.predicted_labels.push_back(predicted_label);
  ++manifest.count;
}

Eigen::MatrixXd MatrixArchive::matrix(std::size_t i) const {
  if (i >= manifest.count) fail(ErrorCode::InvalidArgument, "archive index out of range");
  return take_matrix(payload.data() + i * manifest.matrix_size(), manifest.rows, manifest.cols);
}

ArchiveBytes save_archive(const MatrixArchive& archive) {
  check_payload_length(archive.manifest, archive.payload.size());
  return {archive.manifest.to_json().dump(2) + "\n", encode_f32_le(archive.payload)};
}

MatrixArchive load_archive(std::string_view manifest_text, std::span<const std::uint8_t> payload) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("unparseable manifest: ") + e.what());
  }
  MatrixArchive out;
  out.manifest = ArchiveManifest::from_json(j);
  if (payload.size() != out.manifest.count * out.manifest.matrix_size() * 4) {
    fail(ErrorCode::ShapeMismatch, "payload is " + std::to_string(payload.size()) + " bytes, manifest expects " +
                                       std::to_string(out.manifest.count * out.manifest.matrix_size() * 4));
  }
  out.payload = decode_f32_le(payload);
  return out;
}

void save_archive(const std::filesystem::path& stem, const MatrixArchive& archive) {
  const auto bytes = save_archive(archive);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  write_file(manifest_path(stem), {reinterpret_cast<const std::uint8_t*>(bytes.manifest.data()), bytes.manifest.size()});
  write_file(payload_path(stem), bytes.payload);
}

MatrixArchive load_archive(const std::filesystem::path& stem) {
  const auto text = read_file(manifest_path(stem));
  return load_archive(std::string_view(reinterpret_cast<const char*>(text.data()), text.size()),
                      read_file(payload_path(stem)));
}

ArchiveWriter::ArchiveWriter(const std::filesystem::path& stem, std::size_t rows, std::size_t cols,
                             std::string run_id, nlohmann::json meta)
    : stem_(stem) {
  manifest_.rows = rows;
  manifest_.cols = cols;
  manifest_.run_id = std::move(run_id);
  manifest_.meta = std::move(meta);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  out_.open(payload_path(stem), std::ios::binary | std::ios::trunc);
  if (!out_) fail(ErrorCode::Io, "cannot create " + payload_path(stem).string());
}

void ArchiveWriter::append(const Eigen::MatrixXd& m, std::int32_t class_label, std::int32_t predicted_label) {
  if (finished_) fail(ErrorCode::InvalidArgument, "archive already finished");
  if (static_cast<std::size_t>(m.rows()) != manifest_.rows || static_cast<std::size_t>(m.cols()) != manifest_.cols) {
    fail(ErrorCode::ShapeMismatch, "matrix shape differs from archive shape");
  }
  std::vector<float> flat;
  flat.reserve(manifest_.matrix_size());
  put_matrix(m, flat);
  const auto bytes = encode_f32_le(flat);
  out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out_) fail(ErrorCode::Io, "short write on " + payload_path(stem_).string());
  manifest_.class_labels.push_back(class_label);
  manifest_.predicted_labels.push_back(predicted_label);
  ++manifest_.count;
}

void ArchiveWriter::finish() {
  if (finished_) return;
  out_.close();
  const std::string text = manifest_.to_json().dump(2) + "\n";
  write_file(manifest_path(stem_), {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  finished_ = true;
}

ArchiveReader::ArchiveReader(const std::filesystem::path& stem) {
  const auto text = read_file(manifest_path(stem));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ManifestMismatch, std::string("unparseable manifest: ") + e.what());
  }
  manifest_ = ArchiveManifest::from_json(j);
  in_.open(payload_path(stem), std::ios::binary);
  if (!in_) fail(ErrorCode::Io, "cannot open " + payload_path(stem).string());
  const auto bytes = std::filesystem::file_size(payload_path(stem));
  if (bytes != manifest_.count * manifest_.matrix_size() * 4) {
    fail(ErrorCode::ShapeMismatch, "payload size does not match manifest");
  }
  buffer_.resize(manifest_.matrix_size() * 4);
}

Eigen::MatrixXd ArchiveReader::matrix(std::size_t i) {
  if (i >= manifest_.count) fail(ErrorCode::InvalidArgument, "archive index out of range");
  in_.seekg(static_cast<std::streamoff>(i * buffer_.size()));
  if (!in_.read(reinterpret_cast<char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()))) {
    fail(ErrorCode::Io, "short read in archive payload");
  }
  const auto values = decode_f32_le(buffer_);
  return take_matrix(values.data(), manifest_.rows, manifest_.cols);
}

}  // namespace quiver
