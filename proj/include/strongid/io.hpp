#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace strongid::io {

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;

  Eigen::Index column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Eigen::Index>(i);
    throw std::invalid_argument("csv: no column named '" + name + "'");
  }
};

// Strictly numeric CSV with a mandatory header row. Decimal floating point
// only; no quoting.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.header.push_back(cell);
  }
  std::vector<double> data;
  Eigen::Index rows = 0;
  const std::size_t ncol = t.header.size();
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t start = 0, col = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string_view cell(line.data() + start,
                                  (comma == std::string::npos ? line.size() : comma) - start);
      double v;
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size())
        throw std::runtime_error(path + ": bad numeric cell '" + std::string(cell) + "' at row " +
                                 std::to_string(rows + 2));
      data.push_back(v);
      ++col;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (col != ncol)
      throw std::runtime_error(path + ": row " + std::to_string(rows + 2) + " has " +
                               std::to_string(col) + " cells, expected " + std::to_string(ncol));
    ++rows;
  }
  t.values.resize(rows, static_cast<Eigen::Index>(ncol));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < t.values.cols(); ++j)
      t.values(i, j) = data[static_cast<std::size_t>(i) * ncol + static_cast<std::size_t>(j)];
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << contents;
}

}  // namespace strongid::io
