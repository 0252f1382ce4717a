#include "expm.hpp"

#include <cmath>

#include "common.hpp"

namespace cfasl {

namespace {

constexpr int kTaylorOrder = 12;
constexpr double kScaleThreshold = 0.25;

int scaling_steps(double norm1) {
  if (!(norm1 > kScaleThreshold)) return 0;
  return static_cast<int>(std::ceil(std::log2(norm1 / kScaleThreshold)));
}

}  // namespace

Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a) {
  CFASL_CHECK_ARG(a.rows() == a.cols(), "matrix_exponential: non-square input");
  CFASL_CHECK_ARG(a.allFinite(), "matrix_exponential: non-finite input");
  const auto n = a.rows();
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  const int s = scaling_steps(norm1);
  Eigen::MatrixXd b = a / std::ldexp(1.0, s);
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd p = id;
  for (int k = kTaylorOrder; k >= 1; --k) p = id + (b * p) / static_cast<double>(k);
  for (int i = 0; i < s; ++i) p = p * p;
  return p;
}

Var graph_expm(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() == 2 && av.dim(0) == av.dim(1),
                  "graph_expm: square rank-2 input required");
  CFASL_CHECK_ARG(av.all_finite(), "graph_expm: non-finite input");
  const int64_t n = av.dim(0);
  double norm1 = 0;
  for (int64_t c = 0; c < n; ++c) {
    double colsum = 0;
    for (int64_t r = 0; r < n; ++r) colsum += std::abs(av[r * n + c]);
    norm1 = std::max(norm1, colsum);
  }
  const int s = scaling_steps(norm1);

  Tensor id({n, n});
  for (int64_t i = 0; i < n; ++i) id[i * n + i] = 1.0;
  Var idv = g.constant(id);

  Var b = mul_scalar(a, 1.0 / std::ldexp(1.0, s));
  Var p = idv;
  for (int k = kTaylorOrder; k >= 1; --k)
    p = add(idv, mul_scalar(matmul(b, p), 1.0 / static_cast<double>(k)));
  for (int i = 0; i < s; ++i) p = matmul(p, p);
  return p;
}

GroupElement make_group_element(const Eigen::MatrixXd& algebra) {
  return GroupElement{matrix_exponential(algebra), algebra};
}

GroupElement inverse_symmetry(const GroupElement& g) {
  return make_group_element(Eigen::MatrixXd(-g.source_algebra));
}

Eigen::VectorXd apply_symmetry(const GroupElement& g, const Eigen::VectorXd& z) {
  CFASL_CHECK_ARG(g.matrix.cols() == z.size(),
                  "apply_symmetry: dimension mismatch");
  return g.matrix * z;
}

}  // namespace cfasl
