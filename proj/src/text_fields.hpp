#pragma once

#include <charconv>
#include <cstddef>
#include <string_view>

namespace dfacto::text {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Splits on spaces/tabs into at most `max_fields` views; returns the count found.
inline std::size_t split_fields(std::string_view s, std::string_view* out, std::size_t max_fields) {
  std::size_t n = 0;
  std::size_t pos = 0;
  while (pos < s.size()) {
    pos = s.find_first_not_of(" \t\r", pos);
    if (pos == std::string_view::npos) break;
    auto end = s.find_first_of(" \t\r", pos);
    if (end == std::string_view::npos) end = s.size();
    if (n == max_fields) return max_fields + 1;
    out[n++] = s.substr(pos, end - pos);
    pos = end;
  }
  return n;
}

template <typename T>
inline bool parse_number(std::string_view field, T& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace dfacto::text
