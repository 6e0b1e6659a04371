#include "dfacto/datagen.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace dfacto {

namespace {

struct TripleHash {
  std::size_t operator()(const std::array<Index, 3>& t) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (Index v : t) {
      std::uint64_t x = static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      x ^= x >> 30;
      x *= 0xbf58476d1ce4e5b9ULL;
      x ^= x >> 27;
      x *= 0x94d049bb133111ebULL;
      x ^= x >> 31;
      h ^= x;
    }
    return static_cast<std::size_t>(h);
  }
};

unsigned __int128 cell_count(const Dims& d) {
  return static_cast<unsigned __int128>(d.i) * static_cast<unsigned __int128>(d.j) *
         static_cast<unsigned __int128>(d.k);
}

}  // namespace

void GenSpec::validate() const {
  if (dims.i <= 0 || dims.j <= 0 || dims.k <= 0) throw std::invalid_argument("dims must be positive");
  if (static_cast<unsigned __int128>(nnz) > cell_count(dims)) {
    throw std::invalid_argument("target nnz exceeds I*J*K");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("noise must be >= 0");
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
}

SparseTensor gen_preferential(const GenSpec& spec) {
  spec.validate();
  const auto cells = cell_count(spec.dims);
  if (static_cast<unsigned __int128>(spec.nnz) * 10 > cells * 9) {
    throw std::invalid_argument(
        "target nnz is within 10% of I*J*K; redraw-on-duplicate would thrash, use a dense generator instead");
  }

  std::mt19937_64 rng(spec.seed);
  // Urn per mode: index x appears count_x times, so a uniform draw from the
  // urn picks x with probability proportional to its count. Each index starts
  // with one ball.
  std::array<std::vector<Index>, 3> urns;
  for (int m = 0; m < 3; ++m) {
    const Index d = spec.dims[m + 1];
    urns[m].reserve(d + spec.nnz);
    for (Index x = 0; x < d; ++x) urns[m].push_back(x);
  }
  auto draw = [&](int m) {
    std::uniform_int_distribution<std::size_t> pick(0, urns[m].size() - 1);
    return urns[m][pick(rng)];
  };
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::unordered_set<std::array<Index, 3>, TripleHash> seen;
  seen.reserve(spec.nnz * 2);
  std::vector<Entry> entries;
  entries.reserve(spec.nnz);
  while (entries.size() < spec.nnz) {
    const std::array<Index, 3> key{draw(0), draw(1), draw(2)};
    if (!seen.insert(key).second) continue;
    for (int m = 0; m < 3; ++m) urns[m].push_back(key[m]);
    const double value = spec.values == ValueDistribution::Constant ? 1.0 : 1.0 - unif(rng);
    entries.push_back({key[0], key[1], key[2], value});
  }
  return SparseTensor::from_entries(spec.dims, std::move(entries));
}

std::pair<SparseTensor, FactorModel> gen_planted(const GenSpec& spec) {
  spec.validate();
  const auto cells = cell_count(spec.dims);
  if (cells > static_cast<unsigned __int128>(std::numeric_limits<std::uint64_t>::max())) {
    throw std::invalid_argument("gen_planted: I*J*K does not fit in 64 bits");
  }
  const auto total = static_cast<std::uint64_t>(cells);

  FactorModel truth = random_model(spec.dims, spec.rank, spec.seed);
  std::mt19937_64 rng(spec.seed ^ 0x5deece66dULL);

  // Floyd's sampling of nnz distinct linear indices out of [0, total).
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(spec.nnz * 2);
  std::vector<std::uint64_t> order;
  order.reserve(spec.nnz);
  for (std::uint64_t j = total - spec.nnz; j < total; ++j) {
    std::uniform_int_distribution<std::uint64_t> pick(0, j);
    const std::uint64_t t = pick(rng);
    const std::uint64_t v = chosen.insert(t).second ? t : j;
    if (v == j) chosen.insert(j);
    order.push_back(v);
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto JK = static_cast<std::uint64_t>(spec.dims.j) * static_cast<std::uint64_t>(spec.dims.k);
  std::vector<Entry> entries;
  entries.reserve(order.size());
  for (std::uint64_t lin : order) {
    const auto i = static_cast<Index>(lin / JK);
    const auto rem = lin % JK;
    const auto j = static_cast<Index>(rem / spec.dims.k);
    const auto k = static_cast<Index>(rem % spec.dims.k);
    double value = 0.0;
    for (Index r = 0; r < spec.rank; ++r) value += truth.A(i, r) * truth.B(j, r) * truth.C(k, r);
    if (spec.noise > 0.0) value += spec.noise * gauss(rng);
    entries.push_back({i, j, k, value});
  }
  return {SparseTensor::from_entries(spec.dims, std::move(entries)), std::move(truth)};
}

std::vector<std::size_t> marginal_counts(const SparseTensor& t, int mode) {
  std::vector<std::size_t> counts(t.dims()[mode], 0);
  for (const auto& e : t.entries()) ++counts[mode == 1 ? e.i : (mode == 2 ? e.j : e.k)];
  return counts;
}

double gini(std::vector<std::size_t> counts) {
  if (counts.empty()) return 0.0;
  std::sort(counts.begin(), counts.end());
  double weighted = 0.0, total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    weighted += static_cast<double>(i + 1) * static_cast<double>(counts[i]);
    total += static_cast<double>(counts[i]);
  }
  if (total == 0.0) return 0.0;
  const double n = static_cast<double>(counts.size());
  return 2.0 * weighted / (n * total) - (n + 1.0) / n;
}

}  // namespace dfacto
