#pragma once

#include <cstdint>
#include <vector>

#include "xdc/error.hpp"

namespace xdc {

// Max-weight perfect matching on an n x n weight matrix (row-major), via the
// Hungarian algorithm on negated costs. Returns col index matched to each row.
std::vector<int> hungarian_max_weight(const std::vector<std::int64_t>& weights, int n);

// Contingency counts between two aligned label arrays, (k_a x k_b) row-major.
std::vector<std::int64_t> contingency(const std::vector<int>& a, const std::vector<int>& b,
                                      int k_a, int k_b);

// Fraction of samples that agree after optimally permuting b's label ids onto
// a's (permutation-matched agreement). Label values must lie in [0, k).
double matched_agreement(const std::vector<int>& a, const std::vector<int>& b, int k);

}  // namespace xdc
