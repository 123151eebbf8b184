#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/dataio.hpp"
#include "mvgp/model.hpp"
#include "mvgp/sampler.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Weighted averaging (WA)
// ---------------------------------------------------------------------------

enum class DeshrinkKind { linear, spline };

/// Deshrinking regression of true x on raw weighted-average predictions.
/// Linear is the default inverse regression; the spline option is a natural
/// cubic with 4 degrees of freedom (boundary + two interior knots).
struct Deshrink {
  DeshrinkKind kind = DeshrinkKind::linear;
  Eigen::VectorXd coef;
  Eigen::VectorXd knots;  // spline only

  static Eigen::VectorXd natural_cubic_row(double x, const Eigen::VectorXd& knots) {
    const int nk = static_cast<int>(knots.size());
    auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    auto dk = [&](int k, double xx) {
      return (cube(xx - knots(k)) - cube(xx - knots(nk - 1))) / (knots(nk - 1) - knots(k));
    };
    Eigen::VectorXd row(nk);
    row(0) = 1.0;
    row(1) = x;
    for (int k = 0; k < nk - 2; ++k) row(k + 2) = dk(k, x) - dk(nk - 2, x);
    return row;
  }

  static Deshrink fit(const std::vector<double>& xhat, const std::vector<double>& x,
                      DeshrinkKind kind) {
    if (xhat.size() < 2) throw Error("deshrinking needs at least two prediction pairs");
    const double sd = sample_sd(std::vector<double>(xhat));
    if (!(sd > 1e-10)) throw Error("degenerate deshrinking regression: constant raw predictions");
    Deshrink d;
    d.kind = kind;
    const auto n = static_cast<long>(xhat.size());
    if (kind == DeshrinkKind::linear) {
      Eigen::MatrixXd a(n, 2);
      Eigen::VectorXd b(n);
      for (long i = 0; i < n; ++i) {
        a(i, 0) = 1.0;
        a(i, 1) = xhat[static_cast<std::size_t>(i)];
        b(i) = x[static_cast<std::size_t>(i)];
      }
      d.coef = a.colPivHouseholderQr().solve(b);
    } else {
      std::vector<double> sorted(xhat);
      std::sort(sorted.begin(), sorted.end());
      d.knots = Eigen::VectorXd(4);
      for (int k = 0; k < 4; ++k) d.knots(k) = quantile(sorted, k / 3.0);
      for (int k = 1; k < 4; ++k)
        if (!(d.knots(k) > d.knots(k - 1))) throw Error("degenerate spline deshrinking knots");
      Eigen::MatrixXd a(n, 4);
      Eigen::VectorXd b(n);
      for (long i = 0; i < n; ++i) {
        a.row(i) = natural_cubic_row(xhat[static_cast<std::size_t>(i)], d.knots).transpose();
        b(i) = x[static_cast<std::size_t>(i)];
      }
      d.coef = a.colPivHouseholderQr().solve(b);
    }
    return d;
  }

  double apply(double xhat) const {
    if (kind == DeshrinkKind::linear) return coef(0) + coef(1) * xhat;
    return natural_cubic_row(xhat, knots).dot(coef);
  }
};

struct WaFit {
  Eigen::VectorXd optima;     // full-data optima; NaN for dropped species
  std::vector<bool> active;   // species with nonzero total abundance
  Deshrink deshrink;
  Eigen::MatrixXd boot_optima;  // B x d, NaN where a species vanished in a replicate
  double rmse_boot = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

/// Raw weighted-average prediction: composition-weighted mean of optima over
/// the species that have finite optima and nonzero weight.
inline double wa_raw_prediction(const Eigen::VectorXd& props, const Eigen::VectorXd& optima) {
  double num = 0.0;
  double den = 0.0;
  for (int j = 0; j < props.size(); ++j) {
    if (!std::isfinite(optima(j)) || props(j) <= 0.0) continue;
    num += props(j) * optima(j);
    den += props(j);
  }
  if (den <= 0.0) throw Error("weighted-average prediction has no usable species");
  return num / den;
}

inline Eigen::VectorXd wa_optima(const Eigen::MatrixXd& props, const Eigen::VectorXd& x,
                                 const std::vector<int>& rows) {
  const int d = static_cast<int>(props.cols());
  Eigen::VectorXd num = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(d);
  for (int i : rows) {
    for (int j = 0; j < d; ++j) {
      num(j) += props(i, j) * x(i);
      den(j) += props(i, j);
    }
  }
  Eigen::VectorXd opt(d);
  for (int j = 0; j < d; ++j)
    opt(j) = den(j) > 0.0 ? num(j) / den(j) : std::numeric_limits<double>::quiet_NaN();
  return opt;
}

}  // namespace detail

/// Bootstrap WA calibration: per-replicate optima, out-of-bootstrap raw
/// predictions, a deshrinking regression fitted to the pooled out-of-sample
/// pairs, and the average out-of-sample prediction error.
inline WaFit wa_fit(const Eigen::MatrixXd& props, const Eigen::VectorXd& x, int boot,
                    DeshrinkKind deshrink_kind, Rng& rng) {
  if (boot < 1) throw Error("bootstrap count must be >= 1");
  const int n = static_cast<int>(props.rows());
  const int d = static_cast<int>(props.cols());
  for (int i = 0; i < n; ++i)
    if (std::abs(props.row(i).sum() - 1.0) > 1e-8)
      throw Error("wa_fit expects row-normalized proportions");

  WaFit fit;
  fit.active.assign(static_cast<std::size_t>(d), true);
  std::vector<int> all_rows(static_cast<std::size_t>(n));
  std::iota(all_rows.begin(), all_rows.end(), 0);
  fit.optima = detail::wa_optima(props, x, all_rows);
  for (int j = 0; j < d; ++j) {
    if (!std::isfinite(fit.optima(j))) {
      fit.active[static_cast<std::size_t>(j)] = false;
      fit.warnings.push_back("species " + std::to_string(j) +
                             " has zero total abundance and was dropped");
    }
  }

  fit.boot_optima.resize(boot, d);
  std::vector<double> oob_xhat, oob_x;
  std::vector<double> sq_err;
  for (int b = 0; b < boot; ++b) {
    std::vector<int> in_rows;
    std::vector<bool> in_bag(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      const int r = static_cast<int>(rng.uniform_int(n));
      in_rows.push_back(r);
      in_bag[static_cast<std::size_t>(r)] = true;
    }
    const Eigen::VectorXd opt_b = detail::wa_optima(props, x, in_rows);
    fit.boot_optima.row(b) = opt_b.transpose();
    for (int i = 0; i < n; ++i) {
      if (in_bag[static_cast<std::size_t>(i)]) continue;
      const double raw = detail::wa_raw_prediction(props.row(i).transpose(), opt_b);
      oob_xhat.push_back(raw);
      oob_x.push_back(x(i));
    }
  }
  if (oob_xhat.size() < 2) throw Error("too few out-of-bootstrap pairs; increase boot");
  fit.deshrink = Deshrink::fit(oob_xhat, oob_x, deshrink_kind);
  for (std::size_t i = 0; i < oob_xhat.size(); ++i) {
    const double e = fit.deshrink.apply(oob_xhat[i]) - oob_x[i];
    sq_err.push_back(e * e);
  }
  fit.rmse_boot = std::sqrt(mean_of(sq_err));
  return fit;
}

struct IntervalPrediction {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Deshrunk point estimate with a normal-approximation interval combining
/// the per-sample bootstrap variance and the average prediction error. The
/// second term dominates, making interval widths nearly composition-free.
inline IntervalPrediction wa_predict(const WaFit& fit, const Eigen::VectorXd& y_new_props) {
  if (y_new_props.sum() <= 0.0) throw Error("wa_predict: all-zero composition");
  const double raw = detail::wa_raw_prediction(y_new_props, fit.optima);
  IntervalPrediction out;
  out.point = fit.deshrink.apply(raw);
  std::vector<double> reps;
  for (int b = 0; b < fit.boot_optima.rows(); ++b) {
    const Eigen::VectorXd opt_b = fit.boot_optima.row(b).transpose();
    bool usable = false;
    for (int j = 0; j < opt_b.size(); ++j)
      if (std::isfinite(opt_b(j)) && y_new_props(j) > 0.0) usable = true;
    if (!usable) continue;
    reps.push_back(fit.deshrink.apply(detail::wa_raw_prediction(y_new_props, opt_b)));
  }
  const double var_boot = reps.size() >= 2 ? sample_variance(reps) : 0.0;
  const double half = 1.96 * std::sqrt(var_boot + fit.rmse_boot * fit.rmse_boot);
  out.lower = out.point - half;
  out.upper = out.point + half;
  return out;
}

// ---------------------------------------------------------------------------
// Modern analog technique (k nearest neighbors, squared chord distance)
// ---------------------------------------------------------------------------

/// d(p, q) = sum_j (sqrt p_j - sqrt q_j)^2; a metric on the simplex with
/// range [0, 2].
inline double squared_chord_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw Error("squared chord distance: dimension mismatch");
  double s = 0.0;
  for (int j = 0; j < p.size(); ++j) {
    const double t = std::sqrt(p(j)) - std::sqrt(q(j));
    s += t * t;
  }
  return s;
}

enum class MatWeighting { uniform, inverse_distance };

struct MatFit {
  Eigen::MatrixXd calib_props;
  Eigen::VectorXd calib_x;
  int k = 5;
  MatWeighting weighting = MatWeighting::uniform;
  std::vector<std::vector<int>> boot_rows;  // bootstrap index sets
  double rmse_oob = 0.0;
};

namespace detail {

inline double knn_prediction(const Eigen::VectorXd& query, const Eigen::MatrixXd& props,
                             const Eigen::VectorXd& x, const std::vector<int>& rows, int k,
                             MatWeighting weighting) {
  std::vector<std::pair<double, int>> dist;
  dist.reserve(rows.size());
  for (int r : rows) dist.emplace_back(squared_chord_distance(query, props.row(r).transpose()), r);
  const int kk = std::min<int>(k, static_cast<int>(dist.size()));
  std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());
  if (weighting == MatWeighting::uniform) {
    double s = 0.0;
    for (int i = 0; i < kk; ++i) s += x(dist[static_cast<std::size_t>(i)].second);
    return s / kk;
  }
  // exact analogs take over when present
  double num = 0.0, den = 0.0;
  bool exact = false;
  double exact_sum = 0.0;
  int exact_n = 0;
  for (int i = 0; i < kk; ++i) {
    const double dd = dist[static_cast<std::size_t>(i)].first;
    const double xv = x(dist[static_cast<std::size_t>(i)].second);
    if (dd < 1e-12) {
      exact = true;
      exact_sum += xv;
      ++exact_n;
    } else {
      num += xv / dd;
      den += 1.0 / dd;
    }
  }
  if (exact) return exact_sum / exact_n;
  return num / den;
}

}  // namespace detail

inline MatFit mat_fit(const Eigen::MatrixXd& calib_props, const Eigen::VectorXd& calib_x, int k,
                      MatWeighting weighting, int boot, Rng& rng) {
  const int n = static_cast<int>(calib_props.rows());
  if (k < 1 || k > n) throw Error("neighbor count k must satisfy 1 <= k <= N");
  MatFit fit;
  fit.calib_props = calib_props;
  fit.calib_x = calib_x;
  fit.k = k;
  fit.weighting = weighting;
  std::vector<double> sq_err;
  for (int b = 0; b < boot; ++b) {
    std::vector<int> rows;
    std::vector<bool> in_bag(static_cast<std::size_t>(n), false);
    for (int i = 0; i < n; ++i) {
      const int r = static_cast<int>(rng.uniform_int(n));
      rows.push_back(r);
      in_bag[static_cast<std::size_t>(r)] = true;
    }
    fit.boot_rows.push_back(rows);
    for (int i = 0; i < n; ++i) {
      if (in_bag[static_cast<std::size_t>(i)]) continue;
      const double pred = detail::knn_prediction(calib_props.row(i).transpose(), calib_props,
                                                 calib_x, rows, k, weighting);
      const double e = pred - calib_x(i);
      sq_err.push_back(e * e);
    }
  }
  fit.rmse_oob = sq_err.empty() ? 0.0 : std::sqrt(mean_of(sq_err));
  return fit;
}

inline IntervalPrediction mat_predict(const MatFit& fit, const Eigen::VectorXd& y_new_props) {
  std::vector<int> all_rows(static_cast<std::size_t>(fit.calib_props.rows()));
  std::iota(all_rows.begin(), all_rows.end(), 0);
  IntervalPrediction out;
  out.point = detail::knn_prediction(y_new_props, fit.calib_props, fit.calib_x, all_rows, fit.k,
                                     fit.weighting);
  std::vector<double> reps;
  reps.reserve(fit.boot_rows.size());
  for (const auto& rows : fit.boot_rows)
    reps.push_back(detail::knn_prediction(y_new_props, fit.calib_props, fit.calib_x, rows, fit.k,
                                          fit.weighting));
  const double var_boot = reps.size() >= 2 ? sample_variance(reps) : 0.0;
  const double half = 1.96 * std::sqrt(var_boot + fit.rmse_oob * fit.rmse_oob);
  out.lower = out.point - half;
  out.upper = out.point + half;
  return out;
}

/// One-shot form matching the k-nearest-neighbor description.
inline IntervalPrediction mat_predict(const Eigen::VectorXd& y_new_props,
                                      const Eigen::MatrixXd& calib_props,
                                      const Eigen::VectorXd& calib_x, int k,
                                      MatWeighting weighting, int boot, Rng& rng) {
  return mat_predict(mat_fit(calib_props, calib_x, k, weighting, boot, rng), y_new_props);
}

// ---------------------------------------------------------------------------
// Maximum-likelihood response curves (MLRC)
// ---------------------------------------------------------------------------

/// Per-species Gaussian-logit presence curves
/// logit(pi_j(x)) = b0 + b1 x + b2 x^2, inverted at prediction time by a
/// profile-likelihood grid search over the covariate range.
struct MlrcFit {
  Eigen::MatrixXd beta;        // d x 3
  std::vector<bool> usable;    // converged species
  double grid_lo = 0.0;
  double grid_hi = 0.0;
  int grid_n = 500;
  std::vector<std::string> warnings;

  double prob(int j, double x) const {
    const double eta = beta(j, 0) + beta(j, 1) * x + beta(j, 2) * x * x;
    const double p = 1.0 / (1.0 + std::exp(-eta));
    return std::min(std::max(p, 1e-12), 1.0 - 1e-12);
  }
};

namespace detail {

/// Newton fit of the quadratic-logit Bernoulli model; returns false on
/// non-convergence (including separation blow-ups).
inline bool logistic_quad_fit(const Eigen::VectorXd& x, const std::vector<bool>& present,
                              Eigen::Vector3d& beta_out) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd design(n, 3);
  for (int i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = x(i);
    design(i, 2) = x(i) * x(i);
  }
  Eigen::Vector3d beta = Eigen::Vector3d::Zero();
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd pi(n), w(n), resid(n);
    for (int i = 0; i < n; ++i) {
      pi(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = pi(i) * (1.0 - pi(i));
      resid(i) = (present[static_cast<std::size_t>(i)] ? 1.0 : 0.0) - pi(i);
    }
    const Eigen::Matrix3d h =
        design.transpose() * w.asDiagonal() * design + 1e-10 * Eigen::Matrix3d::Identity();
    const Eigen::Vector3d g = design.transpose() * resid;
    const Eigen::Vector3d step = h.ldlt().solve(g);
    beta += step;
    if (!beta.allFinite() || beta.cwiseAbs().maxCoeff() > 50.0) return false;
    if (step.cwiseAbs().maxCoeff() < 1e-8) {
      beta_out = beta;
      return true;
    }
  }
  return false;
}

}  // namespace detail

inline MlrcFit mlrc_fit(const CompositionMatrix& data, const Eigen::VectorXd& x,
                        const std::vector<int>& rows, double extend = 1.5) {
  const int d = data.d();
  MlrcFit fit;
  fit.beta = Eigen::MatrixXd::Zero(d, 3);
  fit.usable.assign(static_cast<std::size_t>(d), false);
  Eigen::VectorXd xr(static_cast<long>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) xr(static_cast<long>(i)) = x(rows[i]);
  std::vector<double> xv(xr.data(), xr.data() + xr.size());
  const double sd = sample_sd(xv);
  fit.grid_lo = *std::min_element(xv.begin(), xv.end()) - extend * sd;
  fit.grid_hi = *std::max_element(xv.begin(), xv.end()) + extend * sd;
  for (int j = 0; j < d; ++j) {
    std::vector<bool> present;
    int n_present = 0;
    for (int i : rows) {
      const bool p = data.counts(i, j) > 0;
      present.push_back(p);
      n_present += p ? 1 : 0;
    }
    if (n_present < 3) {
      fit.warnings.push_back("species " + std::to_string(j) + " present in fewer than 3 samples");
      continue;
    }
    Eigen::Vector3d beta;
    if (detail::logistic_quad_fit(xr, present, beta)) {
      fit.beta.row(j) = beta.transpose();
      fit.usable[static_cast<std::size_t>(j)] = true;
    } else {
      fit.warnings.push_back("species " + std::to_string(j) + " response fit did not converge");
    }
  }
  bool any = false;
  for (bool u : fit.usable) any = any || u;
  if (!any) throw Error("mlrc_fit: no species response curve converged");
  return fit;
}

struct MlrcPrediction : IntervalPrediction {
  bool flat_profile = false;
};

inline MlrcPrediction mlrc_predict(const MlrcFit& fit, const Eigen::VectorXi& y_new) {
  double m = 0.0;
  for (int j = 0; j < y_new.size(); ++j)
    if (fit.usable[static_cast<std::size_t>(j)]) m += y_new(j);
  if (m <= 0.0) throw Error("mlrc_predict: zero counts for all fitted species");
  const int g = fit.grid_n;
  Eigen::VectorXd score(g);
  for (int t = 0; t < g; ++t) {
    const double x = fit.grid_lo + (fit.grid_hi - fit.grid_lo) * t / (g - 1.0);
    double s = 0.0;
    for (int j = 0; j < y_new.size(); ++j) {
      if (!fit.usable[static_cast<std::size_t>(j)]) continue;
      const double pi = fit.prob(j, x);
      s += y_new(j) * std::log(pi) + (m - y_new(j)) * std::log(1.0 - pi);
    }
    score(t) = s;
  }
  int best = 0;
  score.maxCoeff(&best);
  MlrcPrediction out;
  out.point = fit.grid_lo + (fit.grid_hi - fit.grid_lo) * best / (g - 1.0);
  // profile interval: drop of 1.92 log-likelihood units
  int lo = best, hi = best;
  const double cut = score(best) - 1.92;
  while (lo > 0 && score(lo - 1) >= cut) --lo;
  while (hi < g - 1 && score(hi + 1) >= cut) ++hi;
  out.lower = fit.grid_lo + (fit.grid_hi - fit.grid_lo) * lo / (g - 1.0);
  out.upper = fit.grid_lo + (fit.grid_hi - fit.grid_lo) * hi / (g - 1.0);
  out.flat_profile = lo == 0 && hi == g - 1 && score.maxCoeff() - score.minCoeff() < 1.92;
  return out;
}

// ---------------------------------------------------------------------------
// BUMMER: Dirichlet-multinomial with Gaussian-kernel responses
//   log(alpha_ij) = exp(a_j - (b_j - x_i)^2 / (2 c_j^2))
// ---------------------------------------------------------------------------

struct BummerParams {
  Eigen::VectorXd a;   // offsets
  Eigen::VectorXd b;   // optima
  Eigen::VectorXd c2;  // spreads, > 0
};

struct BummerPriors {
  double a_sd = 5.0;
  double b_var_factor = 4.0;  // b_j ~ N(mu_X, factor * Sigma_X)
  double log_c2_sd = 2.0;
};

class BummerModel {
 public:
  BummerModel(const CompositionMatrix& data, const CovariateSet& cs, XPrior xprior,
              BummerPriors priors, int chain_index, std::uint64_t init_seed)
      : y_(data.counts_real()),
        row_totals_(data.row_totals.cast<double>()),
        missing_rows_(cs.missing_rows()),
        xprior_(xprior),
        priors_(priors) {
    n_ = static_cast<int>(y_.rows());
    d_ = static_cast<int>(y_.cols());
    x_ = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < n_; ++i)
      if (cs.observed[static_cast<std::size_t>(i)]) x_(i) = cs.values(i);
    Rng rng(init_seed);
    params_.a = Eigen::VectorXd::Zero(d_);
    params_.b = Eigen::VectorXd::Zero(d_);
    params_.c2 = Eigen::VectorXd::Ones(d_);
    for (int j = 0; j < d_; ++j) {
      params_.a(j) = 0.5 + 0.1 * rng.normal();
      params_.b(j) = xprior_.mean + std::sqrt(xprior_.variance) * rng.normal();
      params_.c2(j) = std::exp(0.5 * rng.normal());
    }
    const double sd_x = std::sqrt(xprior_.variance / 1.5);
    const int step = (chain_index + 1) / 2;
    const double sign = chain_index % 2 == 1 ? 1.0 : -1.0;
    const double offset = chain_index == 0 ? 0.0 : sign * 0.5 * sd_x * static_cast<double>(step);
    x_missing_ = Eigen::VectorXd::Constant(static_cast<long>(missing_rows_.size()),
                                           xprior_.mean + offset);
    for (std::size_t t = 0; t < missing_rows_.size(); ++t)
      x_(missing_rows_[t]) = x_missing_(static_cast<long>(t));
    a_adapt_ = AdaptState::for_dim(d_);
    b_adapt_ = AdaptState::for_dim(d_);
    c2_adapt_ = AdaptState::for_dim(d_);
  }

  int n_missing() const { return static_cast<int>(missing_rows_.size()); }
  const BummerParams& params() const { return params_; }

  double loglik_row(int i, const BummerParams& p, double xi) const {
    double sum_alpha = 0.0;
    double lp = 0.0;
    for (int j = 0; j < d_; ++j) {
      const double dev = p.b(j) - xi;
      const double la = std::exp(p.a(j) - dev * dev / (2.0 * p.c2(j)));
      const double alpha = std::exp(std::min(la, kLogAlphaClamp));
      sum_alpha += alpha;
      if (y_(i, j) > 0.0) lp += std::lgamma(y_(i, j) + alpha) - std::lgamma(alpha);
    }
    return lp + std::lgamma(sum_alpha) - std::lgamma(row_totals_(i) + sum_alpha);
  }

  double loglik_total(const BummerParams& p) const {
    double ll = 0.0;
    for (int i = 0; i < n_; ++i) ll += loglik_row(i, p, x_(i));
    return ll;
  }

  double log_prior(const BummerParams& p) const {
    double lp = 0.0;
    for (int j = 0; j < d_; ++j) {
      lp += -0.5 * p.a(j) * p.a(j) / (priors_.a_sd * priors_.a_sd);
      const double bdev = p.b(j) - xprior_.mean;
      const double bvar = priors_.b_var_factor * xprior_.variance / 1.5;
      lp += -0.5 * bdev * bdev / bvar;
      const double lc = std::log(p.c2(j));
      lp += -0.5 * lc * lc / (priors_.log_c2_sd * priors_.log_c2_sd);
    }
    return lp;
  }

  double log_joint() const {
    double lp = loglik_total(params_) + log_prior(params_);
    for (int t = 0; t < n_missing(); ++t) lp += xprior_.log_pdf(x_missing_(t));
    return lp;
  }

  void sweep(Rng& rng, bool adapting) {
    auto block_target = [&](const BummerParams& p) { return loglik_total(p) + log_prior(p); };
    params_.a = arwm_step(
        params_.a,
        [&](const Eigen::VectorXd& a) {
          BummerParams p = params_;
          p.a = a;
          return block_target(p);
        },
        a_adapt_, ProposalTransform::identity, rng, adapting);
    params_.b = arwm_step(
        params_.b,
        [&](const Eigen::VectorXd& b) {
          BummerParams p = params_;
          p.b = b;
          return block_target(p);
        },
        b_adapt_, ProposalTransform::identity, rng, adapting);
    params_.c2 = arwm_step(
        params_.c2,
        [&](const Eigen::VectorXd& c2) {
          for (int j = 0; j < c2.size(); ++j)
            if (!(c2(j) > 0.0)) return -std::numeric_limits<double>::infinity();
          BummerParams p = params_;
          p.c2 = c2;
          return block_target(p);
        },
        c2_adapt_, ProposalTransform::log_scale, rng, adapting);
    const double prior_sd = xprior_.sd();
    for (int t = 0; t < n_missing(); ++t) {
      const int row = missing_rows_[static_cast<std::size_t>(t)];
      auto loglik = [&](double centered) {
        return loglik_row(row, params_, centered + xprior_.mean);
      };
      const double c_new = ess_step_scalar(x_missing_(t) - xprior_.mean, prior_sd, loglik, rng);
      x_missing_(t) = c_new + xprior_.mean;
      x_(row) = x_missing_(t);
    }
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (int j = 0; j < d_; ++j) names.push_back("a[" + std::to_string(j) + "]");
    for (int j = 0; j < d_; ++j) names.push_back("b[" + std::to_string(j) + "]");
    for (int j = 0; j < d_; ++j) names.push_back("c2[" + std::to_string(j) + "]");
    for (std::size_t t = 0; t < missing_rows_.size(); ++t)
      names.push_back("x_missing[" + std::to_string(missing_rows_[t]) + "]");
    names.push_back("log_joint");
    return names;
  }

  Eigen::VectorXd snapshot() const {
    Eigen::VectorXd v(3 * d_ + n_missing() + 1);
    long p = 0;
    for (int j = 0; j < d_; ++j) v(p++) = params_.a(j);
    for (int j = 0; j < d_; ++j) v(p++) = params_.b(j);
    for (int j = 0; j < d_; ++j) v(p++) = params_.c2(j);
    for (int t = 0; t < n_missing(); ++t) v(p++) = x_missing_(t);
    v(p) = log_joint();
    return v;
  }

 private:
  Eigen::MatrixXd y_;
  Eigen::VectorXd row_totals_;
  std::vector<int> missing_rows_;
  XPrior xprior_;
  BummerPriors priors_;
  int n_ = 0;
  int d_ = 0;
  Eigen::VectorXd x_;
  Eigen::VectorXd x_missing_;
  BummerParams params_;
  AdaptState a_adapt_, b_adapt_, c2_adapt_;
};

/// Joint fit over calibration and reconstruction rows; reconstruction
/// covariates are sampled alongside the kernel parameters, exactly as the
/// GP model treats them.
inline PosteriorSamples bummer_fit(const CompositionMatrix& data, const CovariateSet& cs,
                                   const ChainConfig& cfg, BummerPriors priors = {}) {
  const XPrior xp = x_prior_from_data(cs);
  auto factory = [&](int chain) {
    return BummerModel(data, cs, xp, priors, chain, cfg.seed + 7919u * (chain + 1u));
  };
  return run_chains(factory, cfg);
}

}  // namespace mvgp
