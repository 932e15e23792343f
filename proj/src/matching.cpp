#include "xdc/matching.hpp"

#include <limits>

namespace xdc {

std::vector<int> hungarian_max_weight(const std::vector<std::int64_t>& weights, int n) {
  if (n < 1) throw ConfigError("hungarian: n must be >= 1");
  if (weights.size() != static_cast<std::size_t>(n) * n) {
    throw ConfigError("hungarian: weight matrix must be n x n");
  }
  // Minimize negated weights with the potentials method (1-indexed scratch).
  auto cost = [&](int i, int j) -> std::int64_t {
    return -weights[static_cast<std::size_t>(i - 1) * n + (j - 1)];
  };
  const std::int64_t inf = std::numeric_limits<std::int64_t>::max() / 4;
  std::vector<std::int64_t> u(n + 1, 0), v(n + 1, 0), minv(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      std::int64_t delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const std::int64_t cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

std::vector<std::int64_t> contingency(const std::vector<int>& a, const std::vector<int>& b,
                                      int k_a, int k_b) {
  if (a.size() != b.size()) throw DataError("contingency: misaligned label arrays");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k_a) * k_b, 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || a[i] >= k_a || b[i] < 0 || b[i] >= k_b) {
      throw DataError("contingency: label outside [0, k) at row " + std::to_string(i));
    }
    ++counts[static_cast<std::size_t>(a[i]) * k_b + b[i]];
  }
  return counts;
}

double matched_agreement(const std::vector<int>& a, const std::vector<int>& b, int k) {
  if (a.empty()) throw DataError("matched_agreement: empty label arrays");
  const auto counts = contingency(a, b, k, k);
  const auto perm = hungarian_max_weight(counts, k);
  std::int64_t agree = 0;
  for (int r = 0; r < k; ++r) agree += counts[static_cast<std::size_t>(r) * k + perm[r]];
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

}  // namespace xdc
