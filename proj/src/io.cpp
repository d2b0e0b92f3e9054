#include "vip/io.hpp"

#include "vip/error.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace vip {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string samples_csv(const Matrix& samples) {
  if (samples.cols() != 2) throw ShapeError("cols", "sample dump expects 2 columns");
  std::string out = "x,y\n";
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    out += format_double(samples(i, 0)) + "," + format_double(samples(i, 1)) + "\n";
  return out;
}

void save_samples_csv(const Matrix& samples, const std::filesystem::path& path) {
  write_text_file(path, samples_csv(samples));
}

Matrix load_samples_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "x,y") throw FormatError(1, "expected header 'x,y'");
  std::vector<std::pair<double, double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(lineno, "missing comma");
    try {
      std::size_t used = 0;
      const double x = std::stod(line.substr(0, comma), &used);
      const double y = std::stod(line.substr(comma + 1));
      rows.emplace_back(x, y);
    } catch (const std::logic_error&) {
      throw FormatError(lineno, "malformed number");
    }
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = rows[i].first;
    m(static_cast<Eigen::Index>(i), 1) = rows[i].second;
  }
  return m;
}

}  // namespace vip
