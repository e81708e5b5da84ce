#include "cmcr/embed_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <sstream>

#include "cmcr/error.hpp"

namespace cmcr {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
  }
}

std::uint32_t get_u32(std::span<const std::byte> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  }
  return v;
}

std::vector<std::string> index_ids(std::size_t rows) {
  std::vector<std::string> ids;
  ids.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    ids.push_back(std::to_string(i));
  }
  return ids;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                                 std::vector<std::string> ids, bool normalized)
    : rows_(rows), dim_(dim), data_(std::move(data)), ids_(std::move(ids)), normalized_(normalized) {
  if (dim_ < 2) {
    throw Error(ErrorCode::InvalidMatrix, "dim must be >= 2, got " + std::to_string(dim_));
  }
  if (data_.size() != rows_ * dim_) {
    throw Error(ErrorCode::InvalidMatrix, "payload size " + std::to_string(data_.size()) +
                                              " != rows*dim " + std::to_string(rows_ * dim_));
  }
  if (ids_.empty()) {
    ids_ = index_ids(rows_);
  } else if (ids_.size() != rows_) {
    throw Error(ErrorCode::InvalidMatrix, "ids count " + std::to_string(ids_.size()) +
                                              " != rows " + std::to_string(rows_));
  }
  for (std::size_t k = 0; k < data_.size(); ++k) {
    if (!std::isfinite(data_[k])) {
      throw Error(ErrorCode::NonFiniteValue, "row " + std::to_string(k / dim_) + " col " +
                                                 std::to_string(k % dim_));
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::gather(std::span<const std::size_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * dim_);
  std::vector<std::string> out_ids;
  out_ids.reserve(indices.size());
  for (const std::size_t i : indices) {
    if (i >= rows_) {
      throw Error(ErrorCode::ShapeMismatch, "gather index " + std::to_string(i) + " out of range");
    }
    const auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
    out_ids.push_back(ids_[i]);
  }
  EmbeddingMatrix m;
  m.rows_ = indices.size();
  m.dim_ = dim_;
  m.data_ = std::move(out);
  m.ids_ = std::move(out_ids);
  m.normalized_ = normalized_;
  return m;
}

Matrix EmbeddingMatrix::to_matrix() const {
  Matrix m(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(dim_));
  for (std::size_t k = 0; k < data_.size(); ++k) {
    m.data()[k] = static_cast<double>(data_[k]);
  }
  return m;
}

EmbeddingMatrix EmbeddingMatrix::from_matrix(const Matrix& m, bool normalized,
                                             std::vector<std::string> ids) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    data[static_cast<std::size_t>(k)] = static_cast<float>(m.data()[k]);
  }
  return EmbeddingMatrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                         std::move(data), std::move(ids), normalized);
}

EmbeddingMatrix EmbeddingMatrix::empty_of_dim(std::size_t dim) {
  return EmbeddingMatrix(0, dim, {}, {}, true);
}

bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.rows_ != b.rows_ || a.dim_ != b.dim_ || a.normalized_ != b.normalized_ || a.ids_ != b.ids_) {
    return false;
  }
  // Bitwise, so -0.0 != 0.0 and the comparison is exact.
  return a.data_.empty() ||
         std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

PairedCorpus::PairedCorpus(EmbeddingMatrix l, EmbeddingMatrix r) : left(std::move(l)), right(std::move(r)) {
  if (left.rows() != right.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "paired corpus sides have " + std::to_string(left.rows()) +
                                              " and " + std::to_string(right.rows()) + " rows");
  }
}

EmbeddingMatrix normalize(const EmbeddingMatrix& m) {
  std::vector<float> out(m.data().begin(), m.data().end());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    double sq = 0.0;
    for (const float v : r) {
      sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      throw Error(ErrorCode::ZeroRow, "row " + std::to_string(i));
    }
    if (std::abs(norm - 1.0) <= EmbeddingMatrix::kUnitTolerance) {
      continue;
    }
    for (std::size_t j = 0; j < m.dim(); ++j) {
      out[i * m.dim() + j] = static_cast<float>(static_cast<double>(r[j]) / norm);
    }
  }
  return EmbeddingMatrix(m.rows(), m.dim(), std::move(out), m.ids(), true);
}

void require_normalized(const EmbeddingMatrix& m, const char* what) {
  if (!m.normalized()) {
    throw Error(ErrorCode::NotNormalized, std::string(what) + " must be L2-normalized");
  }
}

std::vector<std::byte> encode(const EmbeddingMatrix& m) {
  if (m.rows() == 0) {
    throw Error(ErrorCode::InvalidMatrix, "cannot store a matrix with zero rows");
  }
  std::vector<std::byte> out;
  out.reserve(kEmbHeaderBytes + m.data().size() * 4);
  for (const char c : kEmbMagic) {
    out.push_back(static_cast<std::byte>(c));
  }
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.dim()));
  out.push_back(static_cast<std::byte>(m.normalized() ? 1 : 0));
  out.insert(out.end(), 3, std::byte{0});
  for (const float v : m.data()) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

EmbeddingMatrix decode(std::span<const std::byte> bytes) {
  if (bytes.size() < sizeof(kEmbMagic) ||
      std::memcmp(bytes.data(), kEmbMagic, sizeof(kEmbMagic)) != 0) {
    throw Error(ErrorCode::MagicMismatch, "not a CMCR-EMB v1 file");
  }
  if (bytes.size() < kEmbHeaderBytes) {
    throw Error(ErrorCode::TruncatedFile, "header is " + std::to_string(bytes.size()) + " bytes");
  }
  const std::uint32_t rows = get_u32(bytes, 8);
  const std::uint32_t dim = get_u32(bytes, 12);
  const auto flag = static_cast<std::uint8_t>(bytes[16]);
  if (flag > 1) {
    throw Error(ErrorCode::InvalidMatrix, "normalized flag byte is " + std::to_string(flag));
  }
  const std::uint64_t count = static_cast<std::uint64_t>(rows) * dim;
  const std::uint64_t expected = kEmbHeaderBytes + count * 4;
  if (bytes.size() < expected) {
    throw Error(ErrorCode::TruncatedFile, "expected " + std::to_string(expected) + " bytes, found " +
                                              std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::InvalidMatrix, "trailing bytes after payload");
  }
  if (rows == 0) {
    throw Error(ErrorCode::InvalidMatrix, "rows must be >= 1");
  }
  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t k = 0; k < data.size(); ++k) {
    data[k] = std::bit_cast<float>(get_u32(bytes, kEmbHeaderBytes + 4 * k));
  }
  return EmbeddingMatrix(rows, dim, std::move(data), {}, flag == 1);
}

std::filesystem::path ids_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".ids");
}

void save(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  const auto bytes = encode(m);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
    }
  }
  std::ofstream ids(ids_path(path), std::ios::binary | std::ios::trunc);
  if (!ids) {
    throw Error(ErrorCode::IoFailure, "cannot open " + ids_path(path).string() + " for writing");
  }
  for (const auto& id : m.ids()) {
    ids << id << '\n';
  }
  if (!ids) {
    throw Error(ErrorCode::IoFailure, "write failed for " + ids_path(path).string());
  }
}

EmbeddingMatrix load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EmbeddingMatrix m = decode(std::as_bytes(std::span(raw)));

  std::ifstream ids_in(ids_path(path), std::ios::binary);
  if (!ids_in) {
    return m;
  }
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(ids_in, line)) {
    ids.push_back(line);
  }
  std::vector<float> data(m.data().begin(), m.data().end());
  return EmbeddingMatrix(m.rows(), m.dim(), std::move(data), std::move(ids), m.normalized());
}

EmbeddingMatrix parse_text_matrix(std::istream& in) {
  std::vector<float> data;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::size_t count = 0;
    std::string tok;
    while (ss >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) {
        throw Error(ErrorCode::InvalidMatrix, "line " + std::to_string(rows + 1) + ": bad number '" + tok + "'");
      }
      data.push_back(static_cast<float>(v));
      ++count;
    }
    if (count == 0) {
      continue;
    }
    if (rows == 0) {
      dim = count;
    } else if (count != dim) {
      throw Error(ErrorCode::InvalidMatrix, "row " + std::to_string(rows) + " has " + std::to_string(count) +
                                                " values, expected " + std::to_string(dim));
    }
    ++rows;
  }
  if (rows == 0) {
    throw Error(ErrorCode::InvalidMatrix, "no rows in text matrix");
  }
  return EmbeddingMatrix(rows, dim, std::move(data));
}

}  // namespace cmcr
