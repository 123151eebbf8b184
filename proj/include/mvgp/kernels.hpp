#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/dataio.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Correlation kernels
// ---------------------------------------------------------------------------

enum class KernelFamily { exponential, matern };

/// Stationary correlation function over scalar covariates. Matern uses the
/// standard normalization c(0) = 1 with argument sqrt(2*nu)*delta/rho, so
/// nu = 0.5 reproduces the exponential kernel exactly.
struct CorrelationKernel {
  KernelFamily family = KernelFamily::exponential;
  double rho = 1.0;
  double nu = 0.5;

  static CorrelationKernel exponential(double rho) {
    CorrelationKernel k;
    k.family = KernelFamily::exponential;
    k.rho = rho;
    k.validate();
    return k;
  }

  static CorrelationKernel matern(double rho, double nu) {
    CorrelationKernel k;
    k.family = KernelFamily::matern;
    k.rho = rho;
    k.nu = nu;
    k.validate();
    return k;
  }

  void validate() const {
    if (!(rho > 0.0)) throw Error("kernel length-scale rho must be > 0");
    if (family == KernelFamily::matern && !(nu > 0.0))
      throw Error("Matern smoothness nu must be > 0");
  }

  double at_distance(double delta) const {
    delta = std::abs(delta);
    if (delta == 0.0) return 1.0;
    if (family == KernelFamily::exponential) return std::exp(-delta / rho);
    const double t = std::sqrt(2.0 * nu) * delta / rho;
    if (nu == 0.5) return std::exp(-t);
    if (nu == 1.5) return (1.0 + t) * std::exp(-t);
    if (nu == 2.5) return (1.0 + t + t * t / 3.0) * std::exp(-t);
    const double c = std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(t, nu) *
                     std::cyl_bessel_k(nu, t);
    // Bessel underflow at large t; the limit is 0.
    return std::isfinite(c) ? std::min(c, 1.0) : 0.0;
  }

  double operator()(double x, double x2) const { return at_distance(x - x2); }
};

inline double correlation(double x, double x2, const CorrelationKernel& k) {
  return k(x, x2);
}

// ---------------------------------------------------------------------------
// Knot placement
// ---------------------------------------------------------------------------

struct KnotGrid {
  Eigen::VectorXd locations;  // strictly increasing, working scale

  int size() const { return static_cast<int>(locations.size()); }

  void validate() const {
    if (size() < 2) throw Error("knot grid needs at least 2 knots");
    for (int i = 1; i < size(); ++i)
      if (!(locations(i) > locations(i - 1)))
        throw Error("knot locations must be strictly increasing");
  }

  std::vector<std::string> csv_lines() const {
    std::vector<std::string> lines{"knot"};
    for (int i = 0; i < size(); ++i) lines.push_back(fmt_double(locations(i)));
    return lines;
  }
};

/// ell evenly spaced knots covering the observed covariate range extended by
/// `extend` standard deviations on each side.
inline KnotGrid make_knots(const CovariateSet& cs, int ell, double extend) {
  if (ell < 2) throw Error("knot count must be >= 2");
  const auto vals = cs.observed_values();
  if (vals.size() < 2) throw Error("knot placement needs at least two observed covariates");
  const double sd = sample_sd(vals);
  if (!(sd > 0.0)) throw Error("knot placement needs nonconstant covariates");
  const double lo = *std::min_element(vals.begin(), vals.end()) - extend * sd;
  const double hi = *std::max_element(vals.begin(), vals.end()) + extend * sd;
  KnotGrid g;
  g.locations = Eigen::VectorXd::LinSpaced(ell, lo, hi);
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Predictive-process basis
//
// Caches the Cholesky factor of C*(X*, X*) once; every basis row is two
// triangular solves against it, O(ell^2), so replacing one covariate never
// triggers a refactorization. The solves are written out by hand and count
// their multiply-adds: the complexity tests regress these counters against
// ell and N.
// ---------------------------------------------------------------------------

class LowRankBasis {
 public:
  LowRankBasis() = default;

  static LowRankBasis build(const Eigen::VectorXd& x_all, const KnotGrid& knots,
                            const CorrelationKernel& kernel, double jitter = 1e-10) {
    kernel.validate();
    knots.validate();
    LowRankBasis b;
    b.kernel_ = kernel;
    b.knots_ = knots;
    b.factorize(jitter);
    b.z_rows_.resize(x_all.size(), knots.size());
    b.x_cached_ = x_all;
    for (int i = 0; i < x_all.size(); ++i) b.z_rows_.row(i) = b.basis_row(x_all(i)).transpose();
    return b;
  }

  int n_basis() const { return knots_.size(); }
  int n_rows() const { return static_cast<int>(z_rows_.rows()); }
  const KnotGrid& knots() const { return knots_; }
  const CorrelationKernel& kernel() const { return kernel_; }
  const Eigen::MatrixXd& rows() const { return z_rows_; }
  double x_at(int i) const { return x_cached_(i); }
  double jitter() const { return jitter_; }
  std::uint64_t version() const { return version_; }

  static constexpr bool has_lengthscale = true;

  /// Upper-triangular factor U with U'U = C* (+ jitter).
  Eigen::MatrixXd knot_chol_upper() const { return chol_lower_.transpose(); }

  /// z = c*(x, X*) C*^{-1} via two triangular solves against the cached
  /// factor. O(ell^2), no refactorization.
  Eigen::VectorXd basis_row(double x) const {
    const int ell = n_basis();
    Eigen::VectorXd c(ell);
    for (int m = 0; m < ell; ++m) c(m) = kernel_.at_distance(x - knots_.locations(m));
    // forward solve L w = c
    Eigen::VectorXd w(ell);
    std::uint64_t ops = static_cast<std::uint64_t>(ell);  // kernel evaluations
    for (int i = 0; i < ell; ++i) {
      double s = c(i);
      for (int k = 0; k < i; ++k) s -= chol_lower_(i, k) * w(k);
      w(i) = s / chol_lower_(i, i);
      ops += static_cast<std::uint64_t>(i) + 1;
    }
    // backward solve L' z = w
    Eigen::VectorXd z(ell);
    for (int i = ell - 1; i >= 0; --i) {
      double s = w(i);
      for (int k = i + 1; k < ell; ++k) s -= chol_lower_(k, i) * z(k);
      z(i) = s / chol_lower_(i, i);
      ops += static_cast<std::uint64_t>(ell - i);
    }
    op_count_ += ops;
    return z;
  }

  /// Replace one row in place; all other rows are untouched.
  void set_row(int i, double x) {
    z_rows_.row(i) = basis_row(x).transpose();
    x_cached_(i) = x;
    ++version_;
  }

  /// Rebuild every row for a new length-scale. One O(ell^3) factorization
  /// plus O(N ell^2) row solves.
  void set_lengthscale(double rho) {
    kernel_.rho = rho;
    kernel_.validate();
    factorize(jitter_base_);
    for (int i = 0; i < n_rows(); ++i) z_rows_.row(i) = basis_row(x_cached_(i)).transpose();
    ++version_;
  }

  /// Rebuild all rows from cached covariates without changing parameters.
  /// Used by the locality equivalence test.
  void rebuild_all_rows() {
    for (int i = 0; i < n_rows(); ++i) z_rows_.row(i) = basis_row(x_cached_(i)).transpose();
  }

  /// log N(coeffs; 0, C*) using the cached factor.
  double log_prior_coeffs(const Eigen::VectorXd& coeffs) const {
    const int ell = n_basis();
    // forward solve L w = coeffs, quadform = |w|^2
    Eigen::VectorXd w(ell);
    for (int i = 0; i < ell; ++i) {
      double s = coeffs(i);
      for (int k = 0; k < i; ++k) s -= chol_lower_(i, k) * w(k);
      w(i) = s / chol_lower_(i, i);
    }
    op_count_ += static_cast<std::uint64_t>(ell) * static_cast<std::uint64_t>(ell) / 2;
    static const double log2pi = std::log(2.0 * M_PI);
    return -0.5 * (w.squaredNorm() + logdet_ + ell * log2pi);
  }

  /// Draw coeffs ~ N(0, C*) as L z.
  Eigen::VectorXd sample_prior_coeffs(Rng& rng) const {
    const int ell = n_basis();
    Eigen::VectorXd z(ell);
    for (int i = 0; i < ell; ++i) z(i) = rng.normal();
    op_count_ += static_cast<std::uint64_t>(ell) * static_cast<std::uint64_t>(ell) / 2;
    return chol_lower_.template triangularView<Eigen::Lower>() * z;
  }

  std::uint64_t op_count() const { return op_count_; }
  void reset_op_count() const { op_count_ = 0; }

 private:
  void factorize(double jitter) {
    const int ell = knots_.size();
    Eigen::MatrixXd c_star(ell, ell);
    for (int i = 0; i < ell; ++i)
      for (int j = 0; j < ell; ++j)
        c_star(i, j) = kernel_.at_distance(knots_.locations(i) - knots_.locations(j));
    jitter_base_ = jitter;
    double j = jitter;
    for (int attempt = 0; attempt < 4; ++attempt, j *= 100.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(c_star + j * Eigen::MatrixXd::Identity(ell, ell));
      if (llt.info() == Eigen::Success) {
        chol_lower_ = llt.matrixL();
        jitter_ = j;
        logdet_ = 0.0;
        for (int i = 0; i < ell; ++i) logdet_ += 2.0 * std::log(chol_lower_(i, i));
        return;
      }
    }
    throw Error("knot correlation matrix numerically non-positive-definite after jitter");
  }

  CorrelationKernel kernel_;
  KnotGrid knots_;
  Eigen::MatrixXd chol_lower_;
  Eigen::MatrixXd z_rows_;
  Eigen::VectorXd x_cached_;
  double logdet_ = 0.0;
  double jitter_ = 0.0;
  double jitter_base_ = 1e-10;
  std::uint64_t version_ = 0;
  mutable std::uint64_t op_count_ = 0;
};

// ---------------------------------------------------------------------------
// B-spline basis (GAM variant)
//
// Exposes the same row interface as LowRankBasis so the model machinery is
// shared. Coefficients get independent standard-normal priors.
// ---------------------------------------------------------------------------

class BsplineBasis {
 public:
  BsplineBasis() = default;

  static BsplineBasis build(const Eigen::VectorXd& x_all, const KnotGrid& knots, int degree) {
    if (degree < 1) throw Error("B-spline degree must be >= 1");
    knots.validate();
    if (knots.size() < degree + 1) throw Error("not enough knots for the requested degree");
    BsplineBasis b;
    b.grid_ = knots;
    b.degree_ = degree;
    const int ell = knots.size();
    // clamped knot vector: endpoints repeated degree+1 times
    b.tvec_.resize(ell + 2 * degree);
    for (int i = 0; i < degree; ++i) b.tvec_(i) = knots.locations(0);
    for (int i = 0; i < ell; ++i) b.tvec_(degree + i) = knots.locations(i);
    for (int i = 0; i < degree; ++i) b.tvec_(degree + ell + i) = knots.locations(ell - 1);
    b.n_basis_ = ell + degree - 1;
    b.z_rows_.resize(x_all.size(), b.n_basis_);
    b.x_cached_ = x_all;
    for (int i = 0; i < x_all.size(); ++i) b.z_rows_.row(i) = b.row_clamped(x_all(i)).transpose();
    return b;
  }

  int n_basis() const { return n_basis_; }
  int n_rows() const { return static_cast<int>(z_rows_.rows()); }
  const KnotGrid& knots() const { return grid_; }
  int degree() const { return degree_; }
  const Eigen::MatrixXd& rows() const { return z_rows_; }
  double x_at(int i) const { return x_cached_(i); }
  std::uint64_t version() const { return version_; }

  static constexpr bool has_lengthscale = false;
  void set_lengthscale(double) { throw Error("B-spline basis has no length-scale"); }

  double span_lo() const { return grid_.locations(0); }
  double span_hi() const { return grid_.locations(grid_.size() - 1); }

  /// Strict evaluation: errors outside the knot span.
  Eigen::VectorXd basis_row(double x) const {
    if (x < span_lo() || x > span_hi())
      throw Error("B-spline evaluation outside knot span: x = " + fmt_double(x));
    return row_clamped(x);
  }

  /// Clamped evaluation used during sampling, where covariate proposals may
  /// wander beyond the span; the response then freezes at the boundary value.
  Eigen::VectorXd row_clamped(double x) const {
    x = std::min(std::max(x, span_lo()), span_hi());
    const int p = degree_;
    const int nk = static_cast<int>(tvec_.size());
    // find span index s with t[s] <= x < t[s+1]
    int s = p;
    const int smax = nk - p - 2;
    while (s < smax && x >= tvec_(s + 1)) ++s;
    // Cox-de Boor: the p+1 nonzero functions at x
    Eigen::VectorXd nvals = Eigen::VectorXd::Zero(p + 1);
    nvals(0) = 1.0;
    Eigen::VectorXd left(p + 1), right(p + 1);
    for (int j = 1; j <= p; ++j) {
      left(j) = x - tvec_(s + 1 - j);
      right(j) = tvec_(s + j) - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double denom = right(r + 1) + left(j - r);
        const double temp = denom != 0.0 ? nvals(r) / denom : 0.0;
        nvals(r) = saved + right(r + 1) * temp;
        saved = left(j - r) * temp;
      }
      nvals(j) = saved;
    }
    op_count_ += static_cast<std::uint64_t>(p) * static_cast<std::uint64_t>(p);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n_basis_);
    for (int r = 0; r <= p; ++r) z(s - p + r) = nvals(r);
    return z;
  }

  void set_row(int i, double x) {
    z_rows_.row(i) = row_clamped(x).transpose();
    x_cached_(i) = x;
    ++version_;
  }

  void rebuild_all_rows() {
    for (int i = 0; i < n_rows(); ++i) z_rows_.row(i) = row_clamped(x_cached_(i)).transpose();
  }

  double log_prior_coeffs(const Eigen::VectorXd& coeffs) const {
    static const double log2pi = std::log(2.0 * M_PI);
    return -0.5 * (coeffs.squaredNorm() + coeffs.size() * log2pi);
  }

  Eigen::VectorXd sample_prior_coeffs(Rng& rng) const {
    Eigen::VectorXd z(n_basis_);
    for (int i = 0; i < n_basis_; ++i) z(i) = rng.normal();
    return z;
  }

  std::uint64_t op_count() const { return op_count_; }
  void reset_op_count() const { op_count_ = 0; }

 private:
  KnotGrid grid_;
  int degree_ = 3;
  int n_basis_ = 0;
  Eigen::VectorXd tvec_;
  Eigen::MatrixXd z_rows_;
  Eigen::VectorXd x_cached_;
  std::uint64_t version_ = 0;
  mutable std::uint64_t op_count_ = 0;
};

/// Per-row B-spline design matrix; strict about the knot span.
inline Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x_all, const KnotGrid& knots,
                                     int degree) {
  BsplineBasis b = BsplineBasis::build(Eigen::VectorXd::Zero(0), knots, degree);
  Eigen::MatrixXd out(x_all.size(), b.n_basis());
  for (int i = 0; i < x_all.size(); ++i) out.row(i) = b.basis_row(x_all(i)).transpose();
  return out;
}

}  // namespace mvgp
