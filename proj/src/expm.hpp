#pragma once

#include <Eigen/Dense>

#include "graph.hpp"

namespace cfasl {

/// exp(A) for a square real matrix, computed by scaling-and-squaring around a
/// fixed-order Taylor core (order 12, scaling threshold 0.25). Max-entry
/// error against the convergent series is far below 1e-8 for norms up to ~10.
/// Throws invalid-argument for non-square or non-finite input.
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a);

/// Same algorithm expressed in autodiff primitives; gradients are exact for
/// the computed approximation. Input is a rank-2 square Var.
Var graph_expm(Var a);

/// Invertible group element together with the algebra it was generated from.
struct GroupElement {
  Eigen::MatrixXd matrix;          // exp(source_algebra)
  Eigen::MatrixXd source_algebra;
};

GroupElement make_group_element(const Eigen::MatrixXd& algebra);

/// Inverse via exp(-algebra); never forms a numerical matrix inverse.
GroupElement inverse_symmetry(const GroupElement& g);

/// Group action: matrix multiplication on the latent space.
Eigen::VectorXd apply_symmetry(const GroupElement& g, const Eigen::VectorXd& z);

}  // namespace cfasl
