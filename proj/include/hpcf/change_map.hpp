#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace hpcf {

/// Per-pixel binary label grid; 1 = changed, 0 = unchanged.
struct ChangeMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> labels;  // row-major, h*w entries

  std::size_t count_changed() const {
    std::size_t n = 0;
    for (auto v : labels) n += v != 0;
    return n;
  }
  std::size_t count_unchanged() const { return labels.size() - count_changed(); }

  bool operator==(const ChangeMap&) const = default;
};

}  // namespace hpcf
