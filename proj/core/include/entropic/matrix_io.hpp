#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <nlohmann/json.hpp>

#include "entropic/matrix.hpp"

namespace entropic {

// JSON: array of rows.
nlohmann::json to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

// Binary: rows u32, cols u32, then rows*cols little-endian f64.
void write_binary(std::ostream& os, const Matrix& m);
Matrix read_binary(std::istream& is);

void write_matrices(const std::filesystem::path& path, const std::vector<Matrix>& ms);
std::vector<Matrix> read_matrices(const std::filesystem::path& path);

}  // namespace entropic
