#pragma once

// Reader and writer for the NDM1 dense-matrix container.
//
// Layout (little-endian):
//   "NDM1" | u32 rows | u32 cols | rows*cols float32, row-major
//   | rows newline-terminated UTF-8 row identifiers
//   | optional single-line JSON metadata trailer, newline-terminated
//
// Files without a trailer are plain matrices. The trailer carries column ids,
// feature provenance, or decoder parameters; readers that only need the matrix
// may ignore it.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace neurodec {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MatrixFile {
  MatrixF values;
  std::vector<std::string> row_ids;
  nlohmann::json meta;  // null when the file has no trailer
};

void write_matrix_file(const std::filesystem::path& path, const MatrixFile& file);
MatrixFile read_matrix_file(const std::filesystem::path& path);

std::string encode_matrix_file(const MatrixFile& file);
MatrixFile decode_matrix_file(std::string_view bytes);

}  // namespace neurodec
