#pragma once

#include "dego/numerics.hpp"

namespace dego {

/// Stochastic Latin hypercube on the unit box: every dimension has exactly
/// one point in each of the n equal-width strata, with a uniform offset
/// inside the stratum. Result is n x d.
Matrix lhs(int n, int d, Rng& rng);

}  // namespace dego
