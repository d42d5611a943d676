#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace nvnmr {

struct LmOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-12;
  double step_tolerance = 1e-10;   // relative to |x|
  double relative_step = 1e-6;     // numeric Jacobian
  double absolute_step = 1e-6;
  double initial_lambda = 1e-3;
};

template <typename Scalar>
struct LmResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> params;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> jacobian;
  Scalar cost = std::numeric_limits<Scalar>::infinity();  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

// Forward-difference Jacobian of a residual functor.
template <typename Functor, typename Vec>
Eigen::Matrix<typename Vec::Scalar, Eigen::Dynamic, Eigen::Dynamic> numeric_jacobian(
    Functor&& residual, const Vec& x, const Vec& r0, const LmOptions& options) {
  using Scalar = typename Vec::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> j(r0.size(), x.size());
  Vec xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const Scalar h = std::max<Scalar>(options.absolute_step, options.relative_step * std::abs(x[k]));
    xp[k] = x[k] + h;
    j.col(k) = (residual(xp) - r0) / h;
    xp[k] = x[k];
  }
  return j;
}

// Box-constrained Levenberg-Marquardt with a numeric Jacobian. `residual`
// maps a parameter vector to a residual vector of fixed length; parameters
// are clamped to [lower, upper] after every step.
template <typename Functor, typename Scalar = double>
LmResult<Scalar> levenberg_marquardt(Functor&& residual,
                                     Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x,
                                     const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& lower,
                                     const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& upper,
                                     const LmOptions& options = {}) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  auto clamp = [&](Vec& v) { v = v.cwiseMax(lower).cwiseMin(upper); };
  clamp(x);
  Vec r = residual(x);
  Scalar cost = r.squaredNorm();
  Scalar lambda = options.initial_lambda;
  LmResult<Scalar> out;
  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    const Mat j = numeric_jacobian(residual, x, r, options);
    const Mat jtj = j.transpose() * j;
    const Vec g = j.transpose() * r;
    if (g.template lpNorm<Eigen::Infinity>() < options.gradient_tolerance) {
      out.converged = true;
      break;
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Mat a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(Scalar(1e-12));
      Vec step = a.ldlt().solve(-g);
      Vec trial = x + step;
      clamp(trial);
      const Vec rt = residual(trial);
      const Scalar ct = rt.squaredNorm();
      if (std::isfinite(ct) && ct < cost) {
        const Scalar moved = (trial - x).norm();
        x = trial;
        r = rt;
        const Scalar drop = cost - ct;
        cost = ct;
        lambda = std::max<Scalar>(lambda / 3, Scalar(1e-12));
        improved = true;
        if (moved <= options.step_tolerance * (x.norm() + options.step_tolerance) ||
            drop <= Scalar(1e-15) * (cost + Scalar(1e-300))) {
          out.converged = true;
        }
        break;
      }
      lambda *= 4;
    }
    if (!improved) {
      // No descent direction left at any damping: a (local) minimum.
      out.converged = true;
      break;
    }
    if (out.converged) break;
  }
  out.params = x;
  out.cost = cost;
  out.jacobian = numeric_jacobian(residual, x, r, options);
  return out;
}

}  // namespace nvnmr
