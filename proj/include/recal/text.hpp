#pragma once

#include <array>
#include <charconv>
#include <string>

namespace recal {

// Shortest round-trip decimal form; used everywhere a double lands in a
// file so that reruns are byte-identical.
inline std::string format_double(double value) {
  std::array<char, 32> buffer;
  auto [end, ec] =
      std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  (void)ec;
  return std::string(buffer.data(), end);
}

}  // namespace recal
