#pragma once

// Small wrapper around Eigen's MINPACK port used by the fitting routines.

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include <cmath>
#include <functional>

namespace kerrcool::detail {

using Residuals = std::function<void(const Eigen::VectorXd& p, Eigen::VectorXd& r)>;

struct LsqResult {
  Eigen::VectorXd p;
  Eigen::MatrixXd covariance; // (J^T J)^-1 s^2 with s^2 = rss / (m - n)
  double rss = 0.0;
  int status = 0;
  bool converged = false;
};

struct LsqFunctor {
  using Scalar = double;
  Residuals f;
  int n;
  int m;

  int inputs() const { return n; }
  int values() const { return m; }

  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& r) const
  {
    f(p, r);
    return 0;
  }

  // central differences with a step relative to the (pre-scaled) parameter
  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& jac) const
  {
    Eigen::VectorXd q = p;
    Eigen::VectorXd rp(m);
    Eigen::VectorXd rm(m);
    for (int j = 0; j < n; ++j) {
      const double h = 1e-6 * std::max(1.0, std::abs(p[j]));
      q[j] = p[j] + h;
      f(q, rp);
      q[j] = p[j] - h;
      f(q, rm);
      q[j] = p[j];
      jac.col(j) = (rp - rm) / (2.0 * h);
    }
    return 0;
  }
};

inline LsqResult least_squares(const Residuals& f, Eigen::VectorXd p0, int m, int max_fev = 2000)
{
  LsqFunctor functor{f, static_cast<int>(p0.size()), m};
  Eigen::LevenbergMarquardt<LsqFunctor> lm(functor);
  lm.parameters.maxfev = max_fev;
  lm.parameters.xtol = 1e-14;
  lm.parameters.ftol = 1e-14;
  const auto status = lm.minimize(p0);

  LsqResult out;
  out.p = p0;
  out.status = static_cast<int>(status);
  out.converged = status >= 1 && status <= 4;
  // xtol/ftol "too small" means no further progress is possible at machine precision
  out.converged = out.converged || status == Eigen::LevenbergMarquardtSpace::FtolTooSmall ||
                  status == Eigen::LevenbergMarquardtSpace::XtolTooSmall;

  Eigen::VectorXd r(m);
  f(out.p, r);
  out.rss = r.squaredNorm();
  Eigen::MatrixXd jac(m, p0.size());
  functor.df(out.p, jac);
  const double dof = std::max(1, m - static_cast<int>(p0.size()));
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  out.covariance = jtj.completeOrthogonalDecomposition().pseudoInverse() * (out.rss / dof);
  return out;
}

} // namespace kerrcool::detail
