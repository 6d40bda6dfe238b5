#pragma once

// LGDM matrix files. Layout, all little-endian:
//   bytes 0..3   magic "LGDM"
//   bytes 4..5   u16 format version (1)
//   bytes 6..7   u16 dtype (1 = f32, 2 = f64)
//   bytes 8..15  u64 rows
//   bytes 16..23 u64 cols
//   payload      rows*cols values, row-major

#include "lgdml/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace lgdml {

enum class Dtype : std::uint16_t { f32 = 1, f64 = 2 };

inline constexpr std::uint16_t kMatrixFormatVersion = 1;

struct StoredMatrix {
    Dtype dtype = Dtype::f64;
    MatD values;
};

void write_matrix(std::ostream& os, const MatD& m, Dtype dtype);
StoredMatrix read_matrix(std::istream& is);

void write_matrix(const std::filesystem::path& path, const MatD& m, Dtype dtype = Dtype::f64);
void write_matrix(const std::filesystem::path& path, const MatF& m);
StoredMatrix read_matrix(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer,
                  bool binary = false);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

Labels read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const Labels& labels);

}  // namespace lgdml
