#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/covprior.hpp"
#include "mvgp/dataio.hpp"
#include "mvgp/kernels.hpp"
#include "mvgp/sampler.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Dirichlet-multinomial likelihood
// ---------------------------------------------------------------------------

/// log DM(y | M, alpha) = log Gamma(sum a) - log Gamma(M + sum a)
///                        + sum_j [log Gamma(y_j + a_j) - log Gamma(a_j)].
/// Zero-count terms vanish and are skipped.
inline double dm_log_pmf(const Eigen::VectorXd& y, const Eigen::VectorXd& alpha) {
  if (y.size() != alpha.size()) throw Error("dm_log_pmf: dimension mismatch");
  double sum_alpha = 0.0;
  double m = 0.0;
  double lp = 0.0;
  for (int j = 0; j < y.size(); ++j) {
    const double a = alpha(j);
    if (!(a > 0.0) || !std::isfinite(a)) throw Error("dm_log_pmf: alpha must be finite and > 0");
    if (y(j) < 0.0) throw Error("dm_log_pmf: negative count");
    sum_alpha += a;
    m += y(j);
    if (y(j) > 0.0) lp += std::lgamma(y(j) + a) - std::lgamma(a);
  }
  if (m < 1.0) throw Error("dm_log_pmf: row total must be >= 1");
  return lp + std::lgamma(sum_alpha) - std::lgamma(m + sum_alpha);
}

inline double dm_log_pmf(const Eigen::VectorXi& y, const Eigen::VectorXd& alpha) {
  return dm_log_pmf(y.cast<double>().eval(), alpha);
}

// ---------------------------------------------------------------------------
// Prior on the missing covariates
// ---------------------------------------------------------------------------

/// x_missing ~ N(mean, variance), with moments taken from the observed
/// covariates inflated by 1.5.
struct XPrior {
  double mean = 0.0;
  double variance = 1.5;

  double sd() const { return std::sqrt(variance); }

  double log_pdf(double x) const {
    static const double log2pi = std::log(2.0 * M_PI);
    const double z = x - mean;
    return -0.5 * (z * z / variance + std::log(variance) + log2pi);
  }
};

inline XPrior x_prior_from_data(const CovariateSet& cs) {
  const auto vals = cs.observed_values();
  if (vals.size() < 2) throw Error("x prior needs at least two observed covariates");
  const double var = sample_variance(vals);
  if (!(var > 0.0)) throw Error("x prior needs nonconstant observed covariates");
  XPrior p;
  p.mean = mean_of(vals);
  p.variance = 1.5 * var;
  return p;
}

// ---------------------------------------------------------------------------
// Model state and priors
// ---------------------------------------------------------------------------

struct OverdispBlock {
  VineAngles vine;
  ScaleMixture scales;
  Eigen::MatrixXd eps;  // N_total x d residuals
};

/// One full point in parameter space.
struct MvgpState {
  Eigen::VectorXd mu;        // d species intercepts
  Eigen::MatrixXd eta_star;  // ell x d latent knot values
  VineAngles vine;           // partial correlations for Sigma
  ScaleMixture scales;       // tau2/lambda/s for Sigma
  double rho = 1.0;
  std::optional<OverdispBlock> overdisp;
  Eigen::VectorXd x_missing;  // working scale, one per reconstruction row
  std::uint64_t x_version = 0;
};

struct MvgpPriors {
  double mu_sd = 5.0;
  double rho_min = 0.01;  // log-uniform support, working scale
  double rho_max = 10.0;
  double s_species = 2.5;   // half-Cauchy scale for Sigma
  double s_overdisp = 1.0;  // half-Cauchy scale for Sigma_eps
  double lkj_eta = 1.0;

  double log_prior_rho(double rho) const {
    if (rho < rho_min || rho > rho_max) return -std::numeric_limits<double>::infinity();
    return -std::log(rho);
  }

  double log_prior_mu(const Eigen::VectorXd& mu) const {
    static const double log2pi = std::log(2.0 * M_PI);
    double lp = 0.0;
    for (int j = 0; j < mu.size(); ++j)
      lp += -0.5 * (mu(j) * mu(j) / (mu_sd * mu_sd) + 2.0 * std::log(mu_sd) + log2pi);
    return lp;
  }
};

/// log alpha entries are clamped to this band before exponentiation; clamp
/// events are counted and surface in run manifests (zero in healthy runs).
constexpr double kLogAlphaClamp = 30.0;

// ---------------------------------------------------------------------------
// The bound MVGP model
//
// Holds the data, the low-rank basis, the current state, and the caches that
// make the Gibbs sweep cheap:
//   zeta  = Z eta*            (N_total x d)
//   zetar = zeta R            (N_total x d),  log alpha = mu' + zetar + eps
// Rows of both caches are recomputed with the identical row expressions used
// by the full rebuild, so single-row and full rebuilds agree bit for bit.
// ---------------------------------------------------------------------------

template <class Basis>
class MvgpModel {
 public:
  MvgpModel(const CompositionMatrix& data, const CovariateSet& cs, Basis basis, XPrior xprior,
            MvgpPriors priors, bool overdispersion, int chain_index, std::uint64_t init_seed)
      : y_(data.counts_real()),
        row_totals_(data.row_totals.cast<double>()),
        cs_(cs),
        missing_rows_(cs.missing_rows()),
        basis_(std::move(basis)),
        xprior_(xprior),
        priors_(priors) {
    n_ = static_cast<int>(y_.rows());
    d_ = static_cast<int>(y_.cols());
    if (basis_.n_rows() != n_) throw Error("basis row count does not match data");
    init_state(overdispersion, chain_index, init_seed);
    phi_adapt_ = AdaptState::for_dim(state_.vine.n_pairs());
    tau2_adapt_ = AdaptState::for_dim(d_);
    rho_adapt_ = AdaptState::for_dim(1);
    if (overdispersion) {
      phi_eps_adapt_ = AdaptState::for_dim(state_.vine.n_pairs());
      tau2_eps_adapt_ = AdaptState::for_dim(d_);
    }
    refresh_factors();
    recompute_zeta();
    recompute_zetar();
  }

  int n_rows() const { return n_; }
  int n_species() const { return d_; }
  int n_missing() const { return static_cast<int>(missing_rows_.size()); }
  const MvgpState& state() const { return state_; }
  const Basis& basis() const { return basis_; }
  const XPrior& xprior() const { return xprior_; }
  const MvgpPriors& priors() const { return priors_; }
  long clamp_count() const { return clamp_count_; }
  const AdaptState& phi_adapt() const { return phi_adapt_; }
  const AdaptState& tau2_adapt() const { return tau2_adapt_; }
  const AdaptState& rho_adapt() const { return rho_adapt_; }

  /// Test hook: forces the stale-basis guard to fire.
  void debug_desync_x_version() { ++state_.x_version; }

  /// Test hook: rebuild every basis row after each x commit instead of only
  /// the changed row. Must leave chains bit-identical.
  void debug_rebuild_all_rows_on_x_update(bool on) { rebuild_all_on_x_ = on; }

  // -- likelihood ------------------------------------------------------------

  /// alpha_i = exp(mu + R'(z_i eta*)' + eps_i) for one row.
  Eigen::VectorXd latent_alpha(int row) const {
    Eigen::VectorXd la = state_.mu + zetar_.row(row).transpose();
    if (state_.overdisp) la += state_.overdisp->eps.row(row).transpose();
    for (int j = 0; j < d_; ++j) la(j) = clamp_log_alpha(la(j));
    return la.array().exp();
  }

  double loglik_row(int row) const { return dm_row_term(row, zetar_.row(row)); }

  double loglik_total() const {
    double ll = 0.0;
    for (int i = 0; i < n_; ++i) ll += dm_row_term(i, zetar_.row(i));
    return ll;
  }

  /// Unnormalized joint log posterior of Section "model": data model, latent
  /// GP prior through the cached factor, covariance and scale priors, rho,
  /// mu, the missing-covariate prior, and overdispersion terms when enabled.
  double log_joint() const {
    if (state_.x_version != basis_x_version_)
      throw Error("log_joint: basis rows are stale relative to x_missing (version mismatch)");
    double lp = loglik_total();
    for (int j = 0; j < d_; ++j) lp += basis_.log_prior_coeffs(state_.eta_star.col(j));
    lp += log_prior_phi(state_.vine);
    lp += log_prior_scale_mixture(state_.scales);
    if constexpr (Basis::has_lengthscale) lp += priors_.log_prior_rho(state_.rho);
    lp += priors_.log_prior_mu(state_.mu);
    for (int t = 0; t < n_missing(); ++t) lp += xprior_.log_pdf(state_.x_missing(t));
    if (state_.overdisp) {
      const auto& od = *state_.overdisp;
      const Eigen::MatrixXd r_eps = assemble_R(vine_to_cholesky(od.vine), od.scales).R;
      for (int i = 0; i < n_; ++i) lp += mvn_log_pdf_upper(od.eps.row(i).transpose(), r_eps);
      lp += log_prior_phi(od.vine);
      lp += log_prior_scale_mixture(od.scales);
    }
    return lp;
  }

  // -- Gibbs sweep -----------------------------------------------------------

  /// One full-conditional scan in fixed order: eta* columns (ESS), mu (ESS),
  /// phi (joint ARWM, atanh scale), tau2 (ARWM, log scale), lambda (exact
  /// gamma), rho (ARWM, log scale; full basis rebuild), each missing x (ESS,
  /// one basis row rebuilt), then the overdispersion blocks.
  void sweep(Rng& rng, bool adapting) {
    update_eta_star(rng);
    update_mu(rng);
    update_phi(rng, adapting);
    update_tau2(rng, adapting);
    sample_lambda_given_tau2(state_.scales, rng);
    if constexpr (Basis::has_lengthscale) update_rho(rng, adapting);
    update_x_missing(rng);
    if (state_.overdisp) update_overdispersion(rng, adapting);
    const double check = loglik_total();
    if (!std::isfinite(check))
      throw Error("sweep produced non-finite log likelihood; state dump: " + dump_state());
  }

  /// Counted basis arithmetic attributable to the missing-covariate stage of
  /// the most recent sweep.
  std::uint64_t last_x_stage_ops() const { return x_stage_ops_; }

  // -- snapshots ---------------------------------------------------------------

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (int j = 0; j < d_; ++j) names.push_back("mu[" + std::to_string(j) + "]");
    for (int j = 0; j < d_; ++j)
      for (int m = 0; m < basis_.n_basis(); ++m)
        names.push_back("eta_star[" + std::to_string(m) + "," + std::to_string(j) + "]");
    for (int i = 0; i < d_ - 1; ++i)
      for (int j = i + 1; j < d_; ++j)
        names.push_back("phi[" + std::to_string(i) + "," + std::to_string(j) + "]");
    for (int j = 0; j < d_; ++j) names.push_back("tau2[" + std::to_string(j) + "]");
    for (int j = 0; j < d_; ++j) names.push_back("lambda[" + std::to_string(j) + "]");
    if constexpr (Basis::has_lengthscale) names.push_back("rho");
    for (int t = 0; t < n_missing(); ++t)
      names.push_back("x_missing[" + std::to_string(missing_rows_[static_cast<std::size_t>(t)]) + "]");
    for (int i = 0; i < d_ - 1; ++i)
      for (int j = i + 1; j < d_; ++j)
        names.push_back("omega[" + std::to_string(i) + "," + std::to_string(j) + "]");
    if (state_.overdisp) {
      for (int i = 0; i < d_ - 1; ++i)
        for (int j = i + 1; j < d_; ++j)
          names.push_back("phi_eps[" + std::to_string(i) + "," + std::to_string(j) + "]");
      for (int j = 0; j < d_; ++j) names.push_back("tau2_eps[" + std::to_string(j) + "]");
    }
    names.push_back("log_joint");
    return names;
  }

  Eigen::VectorXd snapshot() const {
    std::vector<double> v;
    for (int j = 0; j < d_; ++j) v.push_back(state_.mu(j));
    for (int j = 0; j < d_; ++j)
      for (int m = 0; m < basis_.n_basis(); ++m) v.push_back(state_.eta_star(m, j));
    for (int b = 0; b < state_.vine.n_pairs(); ++b) v.push_back(state_.vine.phi(b));
    for (int j = 0; j < d_; ++j) v.push_back(state_.scales.tau2(j));
    for (int j = 0; j < d_; ++j) v.push_back(state_.scales.lambda(j));
    if constexpr (Basis::has_lengthscale) v.push_back(state_.rho);
    for (int t = 0; t < n_missing(); ++t) v.push_back(state_.x_missing(t));
    const Eigen::MatrixXd omega = r_omega_.transpose() * r_omega_;
    for (int i = 0; i < d_ - 1; ++i)
      for (int j = i + 1; j < d_; ++j) v.push_back(omega(i, j));
    if (state_.overdisp) {
      for (int b = 0; b < state_.overdisp->vine.n_pairs(); ++b)
        v.push_back(state_.overdisp->vine.phi(b));
      for (int j = 0; j < d_; ++j) v.push_back(state_.overdisp->scales.tau2(j));
    }
    v.push_back(log_joint());
    return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<long>(v.size()));
  }

  /// Set one missing covariate and refresh exactly its basis row and caches.
  void set_missing_covariate(int slot, double x) {
    const int row = missing_rows_[static_cast<std::size_t>(slot)];
    state_.x_missing(slot) = x;
    ++state_.x_version;
    basis_.set_row(row, x);
    if (rebuild_all_on_x_) {
      basis_.rebuild_all_rows();
      recompute_zeta();
      recompute_zetar();
    } else {
      recompute_zeta_row(row);
      recompute_zetar_row(row);
    }
    ++basis_x_version_;
  }

 private:
  // -- construction ------------------------------------------------------------

  void init_state(bool overdispersion, int chain_index, std::uint64_t init_seed) {
    Rng rng(init_seed);
    state_.mu = Eigen::VectorXd::Zero(d_);
    for (int j = 0; j < d_; ++j) {
      double pbar = 0.0;
      for (int i = 0; i < n_; ++i) pbar += y_(i, j) / row_totals_(i);
      pbar /= static_cast<double>(n_);
      state_.mu(j) = std::log(std::max(pbar, 1e-6));
    }
    state_.eta_star = Eigen::MatrixXd::Zero(basis_.n_basis(), d_);
    for (int m = 0; m < basis_.n_basis(); ++m)
      for (int j = 0; j < d_; ++j) state_.eta_star(m, j) = 0.1 * rng.normal();
    state_.vine = VineAngles::lkj(d_, priors_.lkj_eta);
    state_.scales = ScaleMixture::unit(d_, priors_.s_species);
    state_.rho = 1.0;

    // overdispersed starts: chain k sits at mu_X +/- ceil(k/2) * 0.5 sd
    const double sd_x = std::sqrt(xprior_.variance / 1.5);
    const int step = (chain_index + 1) / 2;
    const double sign = chain_index % 2 == 1 ? 1.0 : -1.0;
    const double offset = chain_index == 0 ? 0.0 : sign * 0.5 * sd_x * static_cast<double>(step);
    state_.x_missing = Eigen::VectorXd::Zero(n_missing());
    for (int t = 0; t < n_missing(); ++t) {
      state_.x_missing(t) = xprior_.mean + offset;
      basis_.set_row(missing_rows_[static_cast<std::size_t>(t)], state_.x_missing(t));
    }
    state_.x_version = 0;
    basis_x_version_ = 0;

    if (overdispersion) {
      OverdispBlock od;
      od.vine = VineAngles::lkj(d_, priors_.lkj_eta);
      od.scales = ScaleMixture::unit(d_, priors_.s_overdisp);
      od.scales.tau2.setConstant(0.01);
      od.eps = Eigen::MatrixXd::Zero(n_, d_);
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < d_; ++j) od.eps(i, j) = 0.01 * rng.normal();
      state_.overdisp = std::move(od);
    }
  }

  // -- caches ------------------------------------------------------------------

  void refresh_factors() {
    r_omega_ = vine_to_cholesky_upper(state_.vine);
    r_ = r_omega_ * state_.scales.tau().asDiagonal();
    if (state_.overdisp)
      r_eps_ = assemble_R(vine_to_cholesky(state_.overdisp->vine), state_.overdisp->scales).R;
  }

  void recompute_zeta() {
    zeta_.resize(n_, d_);
    for (int i = 0; i < n_; ++i) recompute_zeta_row(i);
  }

  void recompute_zeta_row(int i) { zeta_.row(i) = basis_.rows().row(i) * state_.eta_star; }

  void recompute_zetar() {
    zetar_.resize(n_, d_);
    for (int i = 0; i < n_; ++i) recompute_zetar_row(i);
  }

  void recompute_zetar_row(int i) { zetar_.row(i) = zeta_.row(i) * r_; }

  double clamp_log_alpha(double la) const {
    if (la > kLogAlphaClamp) {
      ++clamp_count_;
      return kLogAlphaClamp;
    }
    if (la < -kLogAlphaClamp) {
      ++clamp_count_;
      return -kLogAlphaClamp;
    }
    return la;
  }

  /// DM term of one row given its zeta*R row; mu and eps are read from state.
  template <class RowExpr>
  double dm_row_term(int i, const RowExpr& zr_row) const {
    double sum_alpha = 0.0;
    double lp = 0.0;
    const bool od = state_.overdisp.has_value();
    for (int j = 0; j < d_; ++j) {
      double la = state_.mu(j) + zr_row(j);
      if (od) la += state_.overdisp->eps(i, j);
      la = clamp_log_alpha(la);
      const double a = std::exp(la);
      sum_alpha += a;
      if (y_(i, j) > 0.0) lp += std::lgamma(y_(i, j) + a) - std::lgamma(a);
    }
    return lp + std::lgamma(sum_alpha) - std::lgamma(row_totals_(i) + sum_alpha);
  }

  double dm_total_with_zetar(const Eigen::MatrixXd& zr) const {
    double ll = 0.0;
    for (int i = 0; i < n_; ++i) ll += dm_row_term(i, zr.row(i));
    return ll;
  }

  static double mvn_log_pdf_upper(const Eigen::VectorXd& v, const Eigen::MatrixXd& r_upper) {
    // Sigma = R'R, so the quadratic form is |w|^2 with R' w = v
    const Eigen::MatrixXd rt = r_upper.transpose();
    const Eigen::VectorXd w = rt.triangularView<Eigen::Lower>().solve(v);
    double logdet = 0.0;
    for (int j = 0; j < r_upper.cols(); ++j) logdet += 2.0 * std::log(r_upper(j, j));
    static const double log2pi = std::log(2.0 * M_PI);
    return -0.5 * (w.squaredNorm() + logdet + static_cast<double>(v.size()) * log2pi);
  }

  std::string dump_state() const {
    std::string s = "rho=" + fmt_double(state_.rho) + " tau2=(";
    for (int j = 0; j < d_; ++j) s += (j ? "," : "") + fmt_double(state_.scales.tau2(j));
    s += ") mu=(";
    for (int j = 0; j < d_; ++j) s += (j ? "," : "") + fmt_double(state_.mu(j));
    return s + ")";
  }

  // -- sweep stages ------------------------------------------------------------

  void update_eta_star(Rng& rng) {
    const Eigen::MatrixXd prior_upper = prior_upper_for_eta();
    Eigen::MatrixXd zr_tmp;
    for (int j = 0; j < d_; ++j) {
      auto loglik = [&](const Eigen::VectorXd& f) {
        Eigen::VectorXd col(n_);
        for (int i = 0; i < n_; ++i) col(i) = basis_.rows().row(i).dot(f);
        zr_tmp = zetar_ + (col - zeta_.col(j)) * r_.row(j);
        return dm_total_with_zetar(zr_tmp);
      };
      const Eigen::VectorXd col_new = ess_step(state_.eta_star.col(j), prior_upper, loglik, rng);
      state_.eta_star.col(j) = col_new;
      Eigen::VectorXd col(n_);
      for (int i = 0; i < n_; ++i) col(i) = basis_.rows().row(i).dot(col_new);
      zetar_ += (col - zeta_.col(j)) * r_.row(j);
      zeta_.col(j) = col;
    }
    // refresh from the canonical row expressions to keep row/full paths aligned
    recompute_zeta();
    recompute_zetar();
  }

  Eigen::MatrixXd prior_upper_for_eta() const {
    if constexpr (Basis::has_lengthscale)
      return basis_.knot_chol_upper();
    else
      return Eigen::MatrixXd::Identity(basis_.n_basis(), basis_.n_basis());
  }

  void update_mu(Rng& rng) {
    const Eigen::MatrixXd prior_upper =
        priors_.mu_sd * Eigen::MatrixXd::Identity(d_, d_);
    auto loglik = [&](const Eigen::VectorXd& mu_cand) {
      double ll = 0.0;
      for (int i = 0; i < n_; ++i) ll += dm_row_with_mu(i, mu_cand);
      return ll;
    };
    state_.mu = ess_step(state_.mu, prior_upper, loglik, rng);
  }

  double dm_row_with_mu(int i, const Eigen::VectorXd& mu_cand) const {
    double sum_alpha = 0.0;
    double lp = 0.0;
    const bool od = state_.overdisp.has_value();
    for (int j = 0; j < d_; ++j) {
      double la = mu_cand(j) + zetar_(i, j);
      if (od) la += state_.overdisp->eps(i, j);
      la = clamp_log_alpha(la);
      const double a = std::exp(la);
      sum_alpha += a;
      if (y_(i, j) > 0.0) lp += std::lgamma(y_(i, j) + a) - std::lgamma(a);
    }
    return lp + std::lgamma(sum_alpha) - std::lgamma(row_totals_(i) + sum_alpha);
  }

  void update_phi(Rng& rng, bool adapting) {
    auto log_target = [&](const Eigen::VectorXd& phi_cand) {
      VineAngles v = state_.vine;
      v.phi = phi_cand;
      for (int b = 0; b < v.phi.size(); ++b)
        if (!(std::abs(v.phi(b)) < 1.0)) return -std::numeric_limits<double>::infinity();
      const Eigen::MatrixXd r_om = vine_to_cholesky_upper(v);
      const Eigen::MatrixXd r_cand = r_om * state_.scales.tau().asDiagonal();
      Eigen::MatrixXd zr(n_, d_);
      for (int i = 0; i < n_; ++i) zr.row(i) = zeta_.row(i) * r_cand;
      return dm_total_with_zetar(zr) + log_prior_phi(v);
    };
    const Eigen::VectorXd phi_new = arwm_step(state_.vine.phi, log_target, phi_adapt_,
                                              ProposalTransform::logit_scale, rng, adapting);
    if ((phi_new - state_.vine.phi).cwiseAbs().sum() != 0.0) {
      state_.vine.phi = phi_new;
      refresh_factors();
      recompute_zetar();
    }
  }

  void update_tau2(Rng& rng, bool adapting) {
    auto log_target = [&](const Eigen::VectorXd& tau2_cand) {
      for (int j = 0; j < d_; ++j)
        if (!(tau2_cand(j) > 0.0)) return -std::numeric_limits<double>::infinity();
      const Eigen::VectorXd tau = tau2_cand.array().sqrt();
      const Eigen::MatrixXd r_cand = r_omega_ * tau.asDiagonal();
      Eigen::MatrixXd zr(n_, d_);
      for (int i = 0; i < n_; ++i) zr.row(i) = zeta_.row(i) * r_cand;
      double lp = dm_total_with_zetar(zr);
      for (int j = 0; j < d_; ++j) lp += gamma_log_pdf(tau2_cand(j), 0.5, state_.scales.lambda(j));
      return lp;
    };
    const Eigen::VectorXd tau2_new = arwm_step(state_.scales.tau2, log_target, tau2_adapt_,
                                               ProposalTransform::log_scale, rng, adapting);
    if ((tau2_new - state_.scales.tau2).cwiseAbs().sum() != 0.0) {
      state_.scales.tau2 = tau2_new;
      refresh_factors();
      recompute_zetar();
    }
  }

  void update_rho(Rng& rng, bool adapting) {
    Eigen::VectorXd cur(1);
    cur(0) = state_.rho;
    auto log_target = [&](const Eigen::VectorXd& rho_vec) {
      const double rho = rho_vec(0);
      if (rho < priors_.rho_min || rho > priors_.rho_max)
        return -std::numeric_limits<double>::infinity();
      if (rho == state_.rho) {
        double lp = loglik_total() + priors_.log_prior_rho(rho);
        for (int j = 0; j < d_; ++j) lp += basis_.log_prior_coeffs(state_.eta_star.col(j));
        return lp;
      }
      Basis cand = basis_;
      cand.set_lengthscale(rho);
      Eigen::MatrixXd zeta_cand(n_, d_);
      for (int i = 0; i < n_; ++i) zeta_cand.row(i) = cand.rows().row(i) * state_.eta_star;
      Eigen::MatrixXd zr(n_, d_);
      for (int i = 0; i < n_; ++i) zr.row(i) = zeta_cand.row(i) * r_;
      double lp = dm_total_with_zetar(zr) + priors_.log_prior_rho(rho);
      for (int j = 0; j < d_; ++j) lp += cand.log_prior_coeffs(state_.eta_star.col(j));
      return lp;
    };
    const Eigen::VectorXd rho_new =
        arwm_step(cur, log_target, rho_adapt_, ProposalTransform::log_scale, rng, adapting);
    if (rho_new(0) != state_.rho) {
      state_.rho = rho_new(0);
      basis_.set_lengthscale(state_.rho);
      recompute_zeta();
      recompute_zetar();
    }
  }

  void update_x_missing(Rng& rng) {
    const std::uint64_t ops_before = basis_.op_count();
    const double prior_sd = xprior_.sd();
    for (int t = 0; t < n_missing(); ++t) {
      const int row = missing_rows_[static_cast<std::size_t>(t)];
      auto loglik = [&](double centered) {
        const double x = centered + xprior_.mean;
        const Eigen::VectorXd z = basis_row_for_sampling(x);
        Eigen::VectorXd zr = (z.transpose() * state_.eta_star * r_).transpose();
        return dm_row_term(row, zr);
      };
      const double centered_new =
          ess_step_scalar(state_.x_missing(t) - xprior_.mean, prior_sd, loglik, rng);
      set_missing_covariate(t, centered_new + xprior_.mean);
    }
    x_stage_ops_ = basis_.op_count() - ops_before;
  }

  Eigen::VectorXd basis_row_for_sampling(double x) const {
    if constexpr (Basis::has_lengthscale)
      return basis_.basis_row(x);
    else
      return basis_.row_clamped(x);
  }

  void update_overdispersion(Rng& rng, bool adapting) {
    auto& od = *state_.overdisp;
    // residual rows: ESS against N(0, Sigma_eps)
    for (int i = 0; i < n_; ++i) {
      auto loglik = [&](const Eigen::VectorXd& eps_row) {
        double sum_alpha = 0.0;
        double lp = 0.0;
        for (int j = 0; j < d_; ++j) {
          const double la = clamp_log_alpha(state_.mu(j) + zetar_(i, j) + eps_row(j));
          const double a = std::exp(la);
          sum_alpha += a;
          if (y_(i, j) > 0.0) lp += std::lgamma(y_(i, j) + a) - std::lgamma(a);
        }
        return lp + std::lgamma(sum_alpha) - std::lgamma(row_totals_(i) + sum_alpha);
      };
      od.eps.row(i) = ess_step(od.eps.row(i).transpose(), r_eps_, loglik, rng).transpose();
    }
    // Sigma_eps hyperparameters see only the residuals
    auto eps_prior_total = [&](const Eigen::MatrixXd& r_upper) {
      double lp = 0.0;
      for (int i = 0; i < n_; ++i) lp += mvn_log_pdf_upper(od.eps.row(i).transpose(), r_upper);
      return lp;
    };
    auto phi_target = [&](const Eigen::VectorXd& phi_cand) {
      VineAngles v = od.vine;
      v.phi = phi_cand;
      for (int b = 0; b < v.phi.size(); ++b)
        if (!(std::abs(v.phi(b)) < 1.0)) return -std::numeric_limits<double>::infinity();
      const Eigen::MatrixXd r_upper =
          vine_to_cholesky_upper(v) * od.scales.tau().asDiagonal();
      return eps_prior_total(r_upper) + log_prior_phi(v);
    };
    od.vine.phi = arwm_step(od.vine.phi, phi_target, phi_eps_adapt_,
                            ProposalTransform::logit_scale, rng, adapting);
    auto tau2_target = [&](const Eigen::VectorXd& tau2_cand) {
      for (int j = 0; j < d_; ++j)
        if (!(tau2_cand(j) > 0.0)) return -std::numeric_limits<double>::infinity();
      const Eigen::VectorXd tau = tau2_cand.array().sqrt();
      const Eigen::MatrixXd r_upper = vine_to_cholesky_upper(od.vine) * tau.asDiagonal();
      double lp = eps_prior_total(r_upper);
      for (int j = 0; j < d_; ++j) lp += gamma_log_pdf(tau2_cand(j), 0.5, od.scales.lambda(j));
      return lp;
    };
    od.scales.tau2 = arwm_step(od.scales.tau2, tau2_target, tau2_eps_adapt_,
                               ProposalTransform::log_scale, rng, adapting);
    sample_lambda_given_tau2(od.scales, rng);
    refresh_factors();
  }

  // -- members -----------------------------------------------------------------

  Eigen::MatrixXd y_;
  Eigen::VectorXd row_totals_;
  CovariateSet cs_;
  std::vector<int> missing_rows_;
  Basis basis_;
  XPrior xprior_;
  MvgpPriors priors_;
  int n_ = 0;
  int d_ = 0;

  MvgpState state_;
  Eigen::MatrixXd r_omega_;  // upper factor of Omega
  Eigen::MatrixXd r_;        // upper factor of Sigma
  Eigen::MatrixXd r_eps_;    // upper factor of Sigma_eps (when enabled)
  Eigen::MatrixXd zeta_;     // Z eta*
  Eigen::MatrixXd zetar_;    // (Z eta*) R

  AdaptState phi_adapt_, tau2_adapt_, rho_adapt_, phi_eps_adapt_, tau2_eps_adapt_;
  std::uint64_t basis_x_version_ = 0;
  std::uint64_t x_stage_ops_ = 0;
  bool rebuild_all_on_x_ = false;
  mutable long clamp_count_ = 0;
};

using MvgpPpModel = MvgpModel<LowRankBasis>;
using MvgpGamModel = MvgpModel<BsplineBasis>;

}  // namespace mvgp
