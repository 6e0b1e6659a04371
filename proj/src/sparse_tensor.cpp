#include "dfacto/sparse_tensor.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>

#include "dfacto/errors.hpp"
#include "text_fields.hpp"

namespace dfacto {

namespace {

using text::parse_number;
using text::split_fields;
using text::trim;

bool index_less(const Entry& a, const Entry& b) {
  if (a.i != b.i) return a.i < b.i;
  if (a.j != b.j) return a.j < b.j;
  return a.k < b.k;
}

bool same_index(const Entry& a, const Entry& b) { return a.i == b.i && a.j == b.j && a.k == b.k; }

}  // namespace

SparseTensor SparseTensor::from_entries(Dims dims, std::vector<Entry> entries,
                                        std::size_t* merged_duplicates) {
  for (const auto& e : entries) {
    if (e.i < 0 || e.j < 0 || e.k < 0 || e.i >= dims.i || e.j >= dims.j || e.k >= dims.k) {
      throw RangeError("entry (" + std::to_string(e.i) + "," + std::to_string(e.j) + "," +
                       std::to_string(e.k) + ") outside dims " + std::to_string(dims.i) + "x" +
                       std::to_string(dims.j) + "x" + std::to_string(dims.k));
    }
  }
  std::stable_sort(entries.begin(), entries.end(), index_less);

  std::size_t merged = 0;
  std::size_t out = 0;
  for (std::size_t t = 0; t < entries.size(); ++t) {
    if (out > 0 && same_index(entries[out - 1], entries[t])) {
      entries[out - 1].value += entries[t].value;
      ++merged;
    } else {
      entries[out++] = entries[t];
    }
  }
  entries.resize(out);
  if (merged_duplicates) *merged_duplicates = merged;

  SparseTensor t;
  t.dims_ = dims;
  t.entries_ = std::move(entries);
  return t;
}

double SparseTensor::norm_squared() const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.value * e.value;
  return s;
}

ParseResult parse_tensor(std::istream& in, int index_base) {
  if (index_base != 0 && index_base != 1) {
    throw std::invalid_argument("index base must be 0 or 1");
  }
  std::vector<Entry> entries;
  Dims header_dims;
  bool have_header = false;
  Dims seen{0, 0, 0};

  std::string line;
  std::size_t line_no = 0;
  std::string_view fields[5];
  while (std::getline(in, line)) {
    ++line_no;
    const auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;

    if (s.front() == '%') {
      const auto n = split_fields(s, fields, 4);
      if (n != 4 || fields[0] != "%dims") throw ParseError(line_no, "bad header, expected '%dims I J K'");
      Index d[3];
      for (int m = 0; m < 3; ++m) {
        if (!parse_number(fields[m + 1], d[m]) || d[m] <= 0) {
          throw ParseError(line_no, "dimension must be a positive integer");
        }
      }
      header_dims = {d[0], d[1], d[2]};
      have_header = true;
      continue;
    }

    const auto n = split_fields(s, fields, 4);
    if (n != 4) throw ParseError(line_no, "expected 'i j k value'");
    Index idx[3];
    for (int m = 0; m < 3; ++m) {
      if (!parse_number(fields[m], idx[m])) throw ParseError(line_no, "index is not an integer");
      idx[m] -= index_base;
      if (idx[m] < 0) {
        throw RangeError("line " + std::to_string(line_no) + ": negative index after base adjustment");
      }
    }
    double value = 0.0;
    if (!parse_number(fields[3], value)) throw ParseError(line_no, "value is not a number");

    seen.i = std::max(seen.i, idx[0] + 1);
    seen.j = std::max(seen.j, idx[1] + 1);
    seen.k = std::max(seen.k, idx[2] + 1);
    entries.push_back({idx[0], idx[1], idx[2], value});
  }

  if (entries.empty()) throw EmptyInputError("tensor input has no entries");

  ParseResult result;
  result.dims_from_header = have_header;
  result.tensor = SparseTensor::from_entries(have_header ? header_dims : seen, std::move(entries),
                                             &result.merged_duplicates);
  return result;
}

ParseResult read_tensor_file(const std::string& path, int index_base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tensor file: " + path);
  return parse_tensor(in, index_base);
}

void write_tensor(std::ostream& out, const SparseTensor& t, int index_base) {
  const auto& d = t.dims();
  out << "%dims " << d.i << ' ' << d.j << ' ' << d.k << '\n';
  char buf[64];
  for (const auto& e : t.entries()) {
    auto res = std::to_chars(buf, buf + sizeof(buf), e.value);
    out << (e.i + index_base) << ' ' << (e.j + index_base) << ' ' << (e.k + index_base) << ' '
        << std::string_view(buf, res.ptr - buf) << '\n';
  }
}

void write_tensor_file(const std::string& path, const SparseTensor& t, int index_base) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tensor file: " + path);
  write_tensor(out, t, index_base);
}

}  // namespace dfacto
