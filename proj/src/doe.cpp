#include "dego/doe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dego {

Matrix lhs(int n, int d, Rng& rng) {
  if (n < 1 || d < 1) {
    throw std::invalid_argument("lhs: n and d must be >= 1");
  }
  Matrix points(n, d);
  std::vector<int> strata(n);
  for (int j = 0; j < d; ++j) {
    std::iota(strata.begin(), strata.end(), 0);
    // Fisher-Yates driven by our own stream so designs replay across platforms.
    for (int i = n - 1; i > 0; --i) {
      std::swap(strata[i], strata[rng.index(static_cast<std::size_t>(i) + 1)]);
    }
    for (int i = 0; i < n; ++i) {
      const double u = (strata[i] + rng.uniform()) / n;
      points(i, j) = std::min(u, std::nextafter((strata[i] + 1.0) / n, 0.0));
    }
  }
  return points;
}

}  // namespace dego
