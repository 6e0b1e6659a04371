#include "cli/csv_io.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "dfacto/errors.hpp"

namespace dfacto::cli {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void write_dense_csv(const std::string& path, const Matrix& m) {
  auto out = open_out(path);
  char buf[64];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      auto res = std::to_chars(buf, buf + sizeof(buf), m(i, j));
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

Matrix read_dense_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    for (;;) {
      const auto comma = line.find(',', pos);
      const auto end = comma == std::string::npos ? line.size() : comma;
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + end, v);
      if (ec != std::errc() || ptr != line.data() + end) throw ParseError(line_no, "bad number in " + path);
      row.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw ParseError(line_no, "ragged row in " + path);
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void write_model(const std::string& dir, const FactorModel& m) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_dense_csv((d / "A.csv").string(), m.A);
  write_dense_csv((d / "B.csv").string(), m.B);
  write_dense_csv((d / "C.csv").string(), m.C);
  write_dense_csv((d / "weights.csv").string(), m.weights);
}

FactorModel read_model(const std::string& dir) {
  const std::filesystem::path d(dir);
  FactorModel m;
  m.A = read_dense_csv((d / "A.csv").string());
  m.B = read_dense_csv((d / "B.csv").string());
  m.C = read_dense_csv((d / "C.csv").string());
  m.weights = read_dense_csv((d / "weights.csv").string()).col(0);
  return m;
}

}  // namespace dfacto::cli
