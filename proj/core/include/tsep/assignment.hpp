// Minimum-cost one-to-one assignment on a rectangular cost matrix
// (Hungarian / Kuhn-Munkres with potentials, O(n^2 m)).

#ifndef TSEP_ASSIGNMENT_HPP_
#define TSEP_ASSIGNMENT_HPP_

#include <vector>

#include <Eigen/Dense>

namespace tsep {

struct Assignment {
  std::vector<int> row_to_col;  // -1 for unassigned rows (rows > cols)
  double cost = 0.0;
};

Assignment min_cost_assignment(const Eigen::MatrixXd& cost);

// Same problem solved by enumerating every injection; for testing and for
// small problems where exhaustive search is cheap.
Assignment min_cost_assignment_exhaustive(const Eigen::MatrixXd& cost);

}  // namespace tsep

#endif  // TSEP_ASSIGNMENT_HPP_
