#pragma once

#include "vip/tensor.hpp"

#include <filesystem>
#include <string>

namespace vip {

// Decimal with 17 significant digits; round-trips any finite double exactly.
std::string format_double(double v);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Sample dump: header `x,y`, one row per sample.
std::string samples_csv(const Matrix& samples);
void save_samples_csv(const Matrix& samples, const std::filesystem::path& path);
Matrix load_samples_csv(const std::filesystem::path& path);

}  // namespace vip
