#pragma once

#include <cstdint>
#include <utility>

#include "dfacto/cp_solver.hpp"
#include "dfacto/sparse_tensor.hpp"

namespace dfacto {

enum class ValueDistribution { Constant, Uniform };

struct GenSpec {
  Dims dims;
  std::size_t nnz = 0;
  std::uint64_t seed = 1;
  ValueDistribution values = ValueDistribution::Constant;
  // Planted mode only.
  Index rank = 1;
  double noise = 0.0;

  /// Throws std::invalid_argument if nnz exceeds I*J*K or noise is negative.
  void validate() const;
};

/// Preferential attachment: each new nonzero lands at (i, j, k) with
/// probability proportional to count_i * count_j * count_k, where every count
/// starts at one and grows each time the index is used. A triple that is
/// already present is redrawn, so the result has exactly spec.nnz entries.
/// Refuses (std::invalid_argument) when nnz is within 10% of I*J*K.
SparseTensor gen_preferential(const GenSpec& spec);

/// Planted CP tensor: A*, B*, C* with uniform(0,1) entries, spec.nnz index
/// triples sampled uniformly without replacement, each value set to the model
/// value plus N(0, noise^2).
std::pair<SparseTensor, FactorModel> gen_planted(const GenSpec& spec);

/// Count of stored entries per index of `mode`.
std::vector<std::size_t> marginal_counts(const SparseTensor& t, int mode);

/// Gini coefficient of a vector of non-negative counts (0 = perfectly even).
double gini(std::vector<std::size_t> counts);

}  // namespace dfacto
