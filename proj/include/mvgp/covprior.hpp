#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mvgp/common.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Separation-strategy covariance prior: Sigma = diag(tau) Omega diag(tau),
// with Omega parameterized by partial correlations in a regular vine and tau
// given half-Cauchy priors through an exact gamma mixture.
// ---------------------------------------------------------------------------

/// Partial correlations phi_b in (-1,1), stored row-major over the strict
/// upper triangle: b runs over (i,j), i < j, with i the slowest index.
struct VineAngles {
  Eigen::VectorXd phi;  // B = d(d-1)/2 values in (-1,1)
  Eigen::VectorXd psi;  // matching beta shape parameters
  int dim = 0;

  int n_pairs() const { return dim * (dim - 1) / 2; }

  /// Flat index of the (i,j) entry, 0-based, i < j.
  int pair_index(int i, int j) const {
    // row-major over the strict upper triangle
    return i * dim - i * (i + 1) / 2 + (j - i - 1);
  }

  void validate() const {
    if (dim < 2) throw Error("vine needs dimension >= 2");
    if (phi.size() != n_pairs() || psi.size() != n_pairs())
      throw Error("vine parameter length mismatch");
    for (int b = 0; b < phi.size(); ++b) {
      if (!(std::abs(phi(b)) < 1.0)) throw Error("partial correlation out of (-1,1)");
      if (!(psi(b) > 0.0)) throw Error("beta shape psi must be > 0");
    }
  }

  /// The LKJ(eta) shape schedule: a partial correlation in row i (1-based)
  /// gets psi = eta + (d - 1 - i)/2. With eta = 1 the implied distribution
  /// over correlation matrices is uniform.
  static VineAngles lkj(int d, double eta = 1.0) {
    VineAngles v;
    v.dim = d;
    v.phi = Eigen::VectorXd::Zero(d * (d - 1) / 2);
    v.psi = Eigen::VectorXd::Zero(v.phi.size());
    for (int i = 0; i < d - 1; ++i)
      for (int j = i + 1; j < d; ++j)
        v.psi(v.pair_index(i, j)) = eta + 0.5 * static_cast<double>(d - 2 - i);
    return v;
  }

  /// Prior draw phi_b ~ 2 Beta(psi_b, psi_b) - 1.
  void sample_prior(Rng& rng) {
    for (int b = 0; b < phi.size(); ++b) phi(b) = 2.0 * rng.beta(psi(b), psi(b)) - 1.0;
  }
};

/// tau2 with its gamma mixing rates: tau_j^2 ~ Gamma(1/2, rate lambda_j),
/// lambda_j ~ Gamma(1/2, rate s_j^2) marginalizes to tau_j ~ half-Cauchy(0, s_j).
struct ScaleMixture {
  Eigen::VectorXd tau2;
  Eigen::VectorXd lambda;
  Eigen::VectorXd s;

  static ScaleMixture unit(int d, double s_scale) {
    ScaleMixture sm;
    sm.tau2 = Eigen::VectorXd::Ones(d);
    sm.lambda = Eigen::VectorXd::Ones(d);
    sm.s = Eigen::VectorXd::Constant(d, s_scale);
    return sm;
  }

  Eigen::VectorXd tau() const { return tau2.array().sqrt(); }

  void validate() const {
    for (int j = 0; j < tau2.size(); ++j)
      if (!(tau2(j) > 0.0 && lambda(j) > 0.0 && s(j) > 0.0))
        throw Error("scale mixture entries must be strictly positive");
  }
};

/// Upper-triangular factors: R_omega'R_omega = Omega (unit diagonal),
/// R'R = diag(tau) Omega diag(tau) = Sigma.
struct CovFactor {
  Eigen::MatrixXd R_omega;
  Eigen::MatrixXd R;

  Eigen::MatrixXd omega() const { return R_omega.transpose() * R_omega; }
  Eigen::MatrixXd sigma() const { return R.transpose() * R; }
};

/// The recursion turning vine partial correlations into the upper Cholesky
/// factor of the correlation matrix. Columns have unit norm by construction.
inline Eigen::MatrixXd vine_to_cholesky_upper(const VineAngles& v) {
  v.validate();
  const int d = v.dim;
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(d, d);
  u(0, 0) = 1.0;
  for (int j = 1; j < d; ++j) {
    u(0, j) = v.phi(v.pair_index(0, j));
    double rem = 1.0 - u(0, j) * u(0, j);  // prod of (1 - phi^2) above row i
    for (int i = 1; i < j; ++i) {
      const double p = v.phi(v.pair_index(i, j));
      u(i, j) = p * std::sqrt(rem);
      rem *= 1.0 - p * p;
    }
    u(j, j) = std::sqrt(rem);
  }
  return u;
}

inline CovFactor vine_to_cholesky(const VineAngles& v) {
  CovFactor cf;
  cf.R_omega = vine_to_cholesky_upper(v);
  cf.R = cf.R_omega;
  return cf;
}

/// Inverse map: extract vine partial correlations from an upper Cholesky
/// factor with unit-norm columns.
inline Eigen::VectorXd cholesky_to_vine(const Eigen::MatrixXd& u) {
  const int d = static_cast<int>(u.rows());
  VineAngles idx;
  idx.dim = d;
  Eigen::VectorXd phi(d * (d - 1) / 2);
  for (int j = 1; j < d; ++j) {
    double rem = 1.0;
    for (int i = 0; i < j; ++i) {
      const double p = u(i, j) / std::sqrt(rem);
      phi(idx.pair_index(i, j)) = p;
      rem *= 1.0 - p * p;
    }
  }
  return phi;
}

/// log density of the scaled-beta prior on phi: phi_b ~ 2 Beta(psi_b, psi_b) - 1,
/// including the 1/2 Jacobian of the affine map.
inline double log_prior_phi(const VineAngles& v) {
  double lp = 0.0;
  for (int b = 0; b < v.phi.size(); ++b) {
    const double p = v.phi(b);
    if (!(std::abs(p) < 1.0)) return -std::numeric_limits<double>::infinity();
    const double a = v.psi(b);
    const double x = 0.5 * (p + 1.0);
    const double log_beta_norm = 2.0 * std::lgamma(a) - std::lgamma(2.0 * a);
    lp += (a - 1.0) * (std::log(x) + std::log1p(-x)) - log_beta_norm + std::log(0.5);
  }
  return lp;
}

/// Gamma(shape, rate) log density.
inline double gamma_log_pdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

/// Joint log prior of the scale mixture: [tau2 | lambda][lambda].
inline double log_prior_scale_mixture(const ScaleMixture& sm) {
  double lp = 0.0;
  for (int j = 0; j < sm.tau2.size(); ++j) {
    lp += gamma_log_pdf(sm.tau2(j), 0.5, sm.lambda(j));
    lp += gamma_log_pdf(sm.lambda(j), 0.5, sm.s(j) * sm.s(j));
  }
  return lp;
}

/// Exact conjugate update: lambda_j | tau_j^2 ~ Gamma(1, rate s_j^2 + tau_j^2).
inline void sample_lambda_given_tau2(ScaleMixture& sm, Rng& rng) {
  for (int j = 0; j < sm.lambda.size(); ++j)
    sm.lambda(j) = rng.gamma(1.0, sm.s(j) * sm.s(j) + sm.tau2(j));
}

/// R = R_omega diag(tau), so R'R = diag(tau) Omega diag(tau).
inline CovFactor assemble_R(const CovFactor& cf, const ScaleMixture& sm) {
  CovFactor out;
  out.R_omega = cf.R_omega;
  out.R = cf.R_omega * sm.tau().asDiagonal();
  return out;
}

}  // namespace mvgp
