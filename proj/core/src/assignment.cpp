#include "tsep/assignment.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace tsep {

Assignment min_cost_assignment(const Eigen::MatrixXd& cost) {
  const bool transpose = cost.rows() > cost.cols();
  const Eigen::MatrixXd a = transpose ? Eigen::MatrixXd(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(cost.rows()), -1);
  if (n == 0 || m == 0) return out;

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
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
    } while (j0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1, c = j - 1;
    if (transpose) out.row_to_col[static_cast<std::size_t>(c)] = r;
    else out.row_to_col[static_cast<std::size_t>(r)] = c;
    out.cost += a(r, c);
  }
  return out;
}

Assignment min_cost_assignment_exhaustive(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows()), cols = static_cast<int>(cost.cols());
  Assignment best;
  best.row_to_col.assign(static_cast<std::size_t>(rows), -1);
  if (rows == 0 || cols == 0) return best;
  best.cost = std::numeric_limits<double>::infinity();
  // Permute the longer side; the first min(rows, cols) entries define the match.
  const int n = std::max(rows, cols);
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  do {
    double c = 0.0;
    std::vector<int> r2c(static_cast<std::size_t>(rows), -1);
    if (rows <= cols) {
      for (int r = 0; r < rows; ++r) {
        c += cost(r, perm[r]);
        r2c[r] = perm[r];
      }
    } else {
      for (int col = 0; col < cols; ++col) {
        c += cost(perm[col], col);
        r2c[perm[col]] = col;
      }
    }
    if (c < best.cost) {
      best.cost = c;
      best.row_to_col = r2c;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace tsep
