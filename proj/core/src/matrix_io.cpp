#include "entropic/matrix_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace entropic {
namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw std::runtime_error("truncated matrix stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

nlohmann::json to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DimensionError("matrix JSON must be an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j.front().size() : 0;
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) throw DimensionError("ragged matrix JSON");
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  return Matrix(rows, cols, std::move(data));
}

void write_binary(std::ostream& os, const Matrix& m) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) put_le<double>(os, v);
}

Matrix read_binary(std::istream& is) {
  const auto rows = get_le<std::uint32_t>(is);
  const auto cols = get_le<std::uint32_t>(is);
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& v : data) v = get_le<double>(is);
  return Matrix(rows, cols, std::move(data));
}

void write_matrices(const std::filesystem::path& path, const std::vector<Matrix>& ms) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ms.size()));
  for (const auto& m : ms) write_binary(os, m);
}

std::vector<Matrix> read_matrices(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const auto n = get_le<std::uint32_t>(is);
  std::vector<Matrix> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(read_binary(is));
  return out;
}

}  // namespace entropic
