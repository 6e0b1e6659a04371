#pragma once

#include <string>

#include "dfacto/cp_solver.hpp"

namespace dfacto::cli {

/// One row per matrix row, comma separated, shortest round-trip doubles.
void write_dense_csv(const std::string& path, const Matrix& m);
Matrix read_dense_csv(const std::string& path);

/// <dir>/A.csv, B.csv, C.csv and weights.csv (one weight per line).
void write_model(const std::string& dir, const FactorModel& m);
FactorModel read_model(const std::string& dir);

}  // namespace dfacto::cli
