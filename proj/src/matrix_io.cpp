#include "neurodec/matrix_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "neurodec/error.hpp"

namespace neurodec {
namespace {

constexpr char kMagic[4] = {'N', 'D', 'M', '1'};
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_matrix_file(const MatrixFile& file) {
  const auto rows = static_cast<std::size_t>(file.values.rows());
  const auto cols = static_cast<std::size_t>(file.values.cols());
  if (rows > std::numeric_limits<std::uint32_t>::max() || cols > std::numeric_limits<std::uint32_t>::max())
    throw Error(ErrorCode::FormatError, "matrix too large for NDM1");
  if (file.row_ids.size() != rows)
    throw Error(ErrorCode::ShapeMismatch, "row id count " + std::to_string(file.row_ids.size()) +
                                              " != rows " + std::to_string(rows));

  std::string out;
  out.reserve(kHeaderBytes + rows * cols * 4 + rows * 16);
  out.append(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      put_u32(out, std::bit_cast<std::uint32_t>(file.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))));
  for (const auto& id : file.row_ids) {
    if (id.find('\n') != std::string::npos)
      throw Error(ErrorCode::FormatError, "row id contains a newline");
    out += id;
    out.push_back('\n');
  }
  if (!file.meta.is_null()) {
    out += file.meta.dump();
    out.push_back('\n');
  }
  return out;
}

MatrixFile decode_matrix_file(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::FormatError, "missing NDM1 magic");
  const std::uint32_t rows = get_u32(bytes, 4);
  const std::uint32_t cols = get_u32(bytes, 8);
  const std::size_t payload = static_cast<std::size_t>(rows) * cols * 4;
  if (bytes.size() < kHeaderBytes + payload)
    throw Error(ErrorCode::FormatError, "truncated payload");

  MatrixFile file;
  file.values.resize(rows, cols);
  std::size_t at = kHeaderBytes;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c, at += 4)
      file.values(r, c) = std::bit_cast<float>(get_u32(bytes, at));

  file.row_ids.reserve(rows);
  for (std::uint32_t r = 0; r < rows; ++r) {
    const auto nl = bytes.find('\n', at);
    if (nl == std::string_view::npos)
      throw Error(ErrorCode::FormatError, "id block has fewer than " + std::to_string(rows) + " entries");
    file.row_ids.emplace_back(bytes.substr(at, nl - at));
    at = nl + 1;
  }

  std::string_view rest = bytes.substr(at);
  while (!rest.empty() && (rest.back() == '\n' || rest.back() == '\r')) rest.remove_suffix(1);
  if (!rest.empty()) {
    file.meta = nlohmann::json::parse(rest, nullptr, false);
    if (file.meta.is_discarded() || !file.meta.is_object())
      throw Error(ErrorCode::FormatError, "trailing bytes are not a JSON metadata object");
  }
  return file;
}

void write_matrix_file(const std::filesystem::path& path, const MatrixFile& file) {
  const std::string bytes = encode_matrix_file(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

MatrixFile read_matrix_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return decode_matrix_file(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace neurodec
