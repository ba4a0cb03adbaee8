#include <cstring>
#include <fstream>

#include "helpers.hpp"
#include "neurodec/matrix_io.hpp"

using namespace neurodec;

namespace {

MatrixFile sample_file() {
  MatrixFile f;
  f.values.resize(2, 3);
  f.values << 1.0f, -2.5f, 3.25f, 0.0f, 1e-7f, -1e30f;
  f.row_ids = {"a", "stim 2"};
  return f;
}

// Byte-level reader written against the layout, independent of the library.
struct RawMatrix {
  std::uint32_t rows = 0, cols = 0;
  std::vector<float> payload;
  std::vector<std::string> ids;
  std::string tail;
};

RawMatrix raw_decode(const std::string& b) {
  RawMatrix m;
  REQUIRE(b.size() >= 12);
  REQUIRE(b.compare(0, 4, "NDM1") == 0);
  auto u32 = [&](std::size_t at) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
  };
  m.rows = u32(4);
  m.cols = u32(8);
  std::size_t at = 12;
  for (std::size_t i = 0; i < std::size_t{m.rows} * m.cols; ++i, at += 4) {
    const std::uint32_t bits = u32(at);
    float f;
    std::memcpy(&f, &bits, 4);
    m.payload.push_back(f);
  }
  for (std::uint32_t r = 0; r < m.rows; ++r) {
    const auto nl = b.find('\n', at);
    REQUIRE(nl != std::string::npos);
    m.ids.push_back(b.substr(at, nl - at));
    at = nl + 1;
  }
  m.tail = b.substr(at);
  return m;
}

}  // namespace

TEST_CASE("encoded bytes follow the little-endian layout") {
  const MatrixFile f = sample_file();
  const std::string bytes = encode_matrix_file(f);
  const RawMatrix raw = raw_decode(bytes);
  CHECK(raw.rows == 2);
  CHECK(raw.cols == 3);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) CHECK(raw.payload[static_cast<std::size_t>(r * 3 + c)] == f.values(r, c));
  CHECK(raw.ids == f.row_ids);
  CHECK(raw.tail.empty());
  // 12-byte header, 24 payload bytes, "a\n" and "stim 2\n".
  CHECK(bytes.size() == 12 + 24 + 2 + 7);
  CHECK(static_cast<unsigned char>(bytes[4]) == 2);
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);
}

TEST_CASE("decode inverts encode, including the metadata trailer") {
  MatrixFile f = sample_file();
  f.meta = {{"model_name", "m"}, {"col_ids", {5, 6, 7}}};
  const std::string bytes = encode_matrix_file(f);
  const MatrixFile back = decode_matrix_file(bytes);
  CHECK(back.values == f.values);
  CHECK(back.row_ids == f.row_ids);
  CHECK(back.meta == f.meta);
  CHECK(encode_matrix_file(back) == bytes);
}

TEST_CASE("a file without trailer decodes with null metadata") {
  const MatrixFile back = decode_matrix_file(encode_matrix_file(sample_file()));
  CHECK(back.meta.is_null());
}

TEST_CASE("bit patterns survive the round trip") {
  MatrixFile f;
  f.values.resize(1, 4);
  f.values << -0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(), 0.1f;
  f.row_ids = {"x"};
  const MatrixFile back = decode_matrix_file(encode_matrix_file(f));
  for (int c = 0; c < 4; ++c) CHECK(std::memcmp(&back.values(0, c), &f.values(0, c), 4) == 0);
}

TEST_CASE("empty matrix round trips") {
  MatrixFile f;
  f.values.resize(0, 5);
  const MatrixFile back = decode_matrix_file(encode_matrix_file(f));
  CHECK(back.values.rows() == 0);
  CHECK(back.values.cols() == 5);
}

TEST_CASE("malformed inputs are rejected") {
  const std::string good = encode_matrix_file(sample_file());
  SUBCASE("bad magic") {
    std::string b = good;
    b[3] = '2';
    CHECK_THROWS_CODE(decode_matrix_file(b), ErrorCode::FormatError);
  }
  SUBCASE("short header") { CHECK_THROWS_CODE(decode_matrix_file("NDM1\x01"), ErrorCode::FormatError); }
  SUBCASE("truncated payload") { CHECK_THROWS_CODE(decode_matrix_file(good.substr(0, 30)), ErrorCode::FormatError); }
  SUBCASE("missing ids") { CHECK_THROWS_CODE(decode_matrix_file(good.substr(0, 12 + 24 + 2)), ErrorCode::FormatError); }
  SUBCASE("garbage after ids") { CHECK_THROWS_CODE(decode_matrix_file(good + "not json\n"), ErrorCode::FormatError); }
  SUBCASE("trailer that is not an object") { CHECK_THROWS_CODE(decode_matrix_file(good + "[1,2]\n"), ErrorCode::FormatError); }
}

TEST_CASE("encoder rejects inconsistent id blocks") {
  MatrixFile f = sample_file();
  f.row_ids.pop_back();
  CHECK_THROWS_CODE(encode_matrix_file(f), ErrorCode::ShapeMismatch);
  f = sample_file();
  f.row_ids[0] = "two\nlines";
  CHECK_THROWS_CODE(encode_matrix_file(f), ErrorCode::FormatError);
}

TEST_CASE("files on disk round trip byte for byte") {
  const auto dir = testing::scratch_dir("matrix_io");
  MatrixFile f = sample_file();
  f.meta = {{"k", 1}};
  write_matrix_file(dir / "m.ndm", f);
  std::ifstream in(dir / "m.ndm", std::ios::binary);
  const std::string on_disk{std::istreambuf_iterator<char>(in), {}};
  CHECK(on_disk == encode_matrix_file(f));
  const MatrixFile back = read_matrix_file(dir / "m.ndm");
  CHECK(back.values == f.values);
  CHECK(back.meta == f.meta);
  CHECK_THROWS_CODE(read_matrix_file(dir / "missing.ndm"), ErrorCode::IoError);
}
