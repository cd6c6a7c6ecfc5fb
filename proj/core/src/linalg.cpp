#include "kvlad/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "kvlad/errors.hpp"

namespace kvlad {

namespace {

// Sum of squared off-diagonal entries, the quantity driven to zero.
double off_diag_sq(const Eigen::MatrixXd& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) s += 2.0 * a(i, j) * a(i, j);
  return s;
}

}  // namespace

SymmetricEigen jacobi_eigen_sym(const Eigen::MatrixXd& a, int max_sweeps) {
  if (a.rows() != a.cols())
    throw NumericalError("jacobi_eigen_sym: matrix is not square");
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd m = 0.5 * (a + a.transpose());  // enforce exact symmetry
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double stop = 1e-28 * scale * scale * static_cast<double>(n * n);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    if (off_diag_sq(m) <= stop) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= 1e-18 * scale) continue;
        const double app = m(p, p);
        const double aqq = m(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        // smaller-angle rotation root, stable form
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (Eigen::Index k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return m(i, i) > m(j, j);
  });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.values(k) = m(src, src);
    out.vectors.col(k) = v.col(src);
    Eigen::Index imax = 0;
    out.vectors.col(k).cwiseAbs().maxCoeff(&imax);
    if (out.vectors(imax, k) < 0.0) out.vectors.col(k) = -out.vectors.col(k);
  }
  return out;
}

double cholesky_logdet(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError("cholesky_logdet: matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

bool cholesky_succeeds(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  return llt.info() == Eigen::Success;
}

Eigen::MatrixXd mgs_orthonormalize(const Eigen::MatrixXd& a, double rank_tol) {
  Eigen::MatrixXd q = a;
  const Eigen::Index p = q.cols();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double original = a.col(j).norm();
    for (Eigen::Index i = 0; i < j; ++i) {
      q.col(j) -= q.col(i).dot(q.col(j)) * q.col(i);
    }
    const double norm = q.col(j).norm();
    if (norm <= rank_tol * std::max(original, 1.0))
      throw NumericalError("mgs_orthonormalize: rank-deficient input");
    q.col(j) /= norm;
  }
  return q;
}

double max_asymmetry(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

}  // namespace kvlad
