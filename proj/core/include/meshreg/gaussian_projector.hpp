#pragma once

#include <Eigen/Core>

#include "meshreg/random.hpp"

namespace meshreg {

/// Orthogonal projector W W^+ onto the column span of an n x k matrix W with
/// i.i.d. standard normal entries. Dense; meant for 1 <= k < n <= 256.
Eigen::MatrixXd gaussian_subspace_projector(int n, int k, Seed seed);

}  // namespace meshreg
