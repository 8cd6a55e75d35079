#pragma once

#include "entropic/matrix.hpp"

namespace entropic {

// One sample per row.
struct Batch {
  Matrix x;
  Matrix y;

  std::size_t size() const { return x.rows(); }
  Batch slice(std::size_t begin, std::size_t end) const;
  Batch sample(std::size_t i) const { return slice(i, i + 1); }
};

}  // namespace entropic
