#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "hsimamba/data.hpp"
#include "hsimamba/errors.hpp"

namespace hsimamba::data {

ReducedCube pca_reduce(const HsiCube& cube, std::size_t components) {
  cube.validate();
  const std::size_t n = cube.pixels(), v = cube.bands;
  if (components == 0 || components > v) {
    throw ValidationError("PCA dimension " + std::to_string(components) + " must be in [1, " + std::to_string(v) +
                          "]");
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(v));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t b = 0; b < v; ++b) x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(b)) = cube.radiance[p * v + b];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("PCA eigendecomposition failed");
  const Eigen::VectorXd& evals = solver.eigenvalues();
  const Eigen::MatrixXd& evecs = solver.eigenvectors();

  std::vector<Eigen::Index> order(v);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return evals(a) > evals(b); });

  const double top = std::max(evals.maxCoeff(), 0.0);
  const double tol = 1e-12 * std::max(top, cov.diagonal().sum()) + 1e-300;

  ReducedCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.components = components;
  out.mean.assign(mean.data(), mean.data() + v);
  out.eigenvalues.resize(v);
  for (std::size_t i = 0; i < v; ++i) {
    const double e = evals(order[i]);
    out.eigenvalues[i] = e > tol ? e : 0.0;
  }

  out.basis = Tensor({v, components});
  for (std::size_t j = 0; j < components; ++j) {
    Eigen::VectorXd col = evecs.col(order[j]);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < col.size(); ++i) {
      if (std::abs(col(i)) > std::abs(col(arg))) arg = i;
    }
    if (col(arg) < 0) col = -col;
    for (std::size_t i = 0; i < v; ++i) out.basis[i * components + j] = col(static_cast<Eigen::Index>(i));
  }

  out.scores = Tensor({cube.height, cube.width, components});
  for (std::size_t j = 0; j < components; ++j) {
    if (out.eigenvalues[j] == 0.0) {
      out.rank_deficient = true;
      continue;  // beyond rank: scores stay zero
    }
    for (std::size_t p = 0; p < n; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < v; ++i) s += x(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) * out.basis[i * components + j];
      out.scores[p * components + j] = s;
    }
  }
  return out;
}

}  // namespace hsimamba::data
