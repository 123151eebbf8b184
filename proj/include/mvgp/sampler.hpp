#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "mvgp/common.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Elliptical slice sampling (Murray, Adams & MacKay 2010)
// ---------------------------------------------------------------------------

/// One exact elliptical-slice transition for a zero-mean Gaussian prior with
/// upper-triangular covariance factor U (U'U = prior covariance). Nonzero
/// prior means are handled by the caller via centering. Always terminates;
/// leaves prior x likelihood invariant. No tuning parameters.
template <class LogLik>
Eigen::VectorXd ess_step(const Eigen::VectorXd& current, const Eigen::MatrixXd& prior_upper,
                         LogLik&& loglik, Rng& rng) {
  const double ll_cur = loglik(current);
  if (!std::isfinite(ll_cur)) throw Error("elliptical slice: non-finite log likelihood at current state");
  const int n = static_cast<int>(current.size());
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();
  const Eigen::VectorXd nu = prior_upper.transpose() * z;

  const double log_y = ll_cur + std::log(rng.uniform());
  double theta = rng.uniform(0.0, 2.0 * M_PI);
  double theta_min = theta - 2.0 * M_PI;
  double theta_max = theta;
  for (;;) {
    const Eigen::VectorXd prop = current * std::cos(theta) + nu * std::sin(theta);
    if (loglik(prop) > log_y) return prop;
    if (theta < 0.0)
      theta_min = theta;
    else
      theta_max = theta;
    theta = rng.uniform(theta_min, theta_max);
  }
}

/// Scalar convenience wrapper.
template <class LogLik>
double ess_step_scalar(double current, double prior_sd, LogLik&& loglik, Rng& rng) {
  Eigen::MatrixXd u(1, 1);
  u(0, 0) = prior_sd;
  Eigen::VectorXd cur(1);
  cur(0) = current;
  const Eigen::VectorXd out =
      ess_step(cur, u, [&](const Eigen::VectorXd& v) { return loglik(v(0)); }, rng);
  return out(0);
}

// ---------------------------------------------------------------------------
// Adaptive random-walk Metropolis
// ---------------------------------------------------------------------------

enum class ProposalTransform { identity, log_scale, logit_scale };

/// Per-block adaptation record. The proposal log-sd is nudged by
/// min(0.1, 1/sqrt(batch)) toward the target acceptance rate after every
/// batch of 50 attempts, and frozen once adaptation stops.
struct AdaptState {
  double log_scale = 0.0;
  long accept_count = 0;
  long attempt_count = 0;
  double target_rate = 0.44;

  int batch_size = 50;
  int batch_attempts = 0;
  int batch_accepts = 0;
  long batch_index = 0;

  static AdaptState for_dim(int dim, double initial_scale = 0.1) {
    AdaptState a;
    a.target_rate = dim > 1 ? 0.234 : 0.44;
    a.log_scale = std::log(initial_scale);
    return a;
  }

  double scale() const { return std::exp(log_scale); }

  double acceptance_rate() const {
    return attempt_count > 0 ? static_cast<double>(accept_count) / static_cast<double>(attempt_count)
                             : 0.0;
  }

  void record(bool accepted, bool adapting) {
    ++attempt_count;
    accept_count += accepted ? 1 : 0;
    if (!adapting) return;
    ++batch_attempts;
    batch_accepts += accepted ? 1 : 0;
    if (batch_attempts == batch_size) {
      ++batch_index;
      const double rate = static_cast<double>(batch_accepts) / static_cast<double>(batch_size);
      const double delta = std::min(0.1, 1.0 / std::sqrt(static_cast<double>(batch_index)));
      log_scale += rate > target_rate ? delta : -delta;
      batch_attempts = 0;
      batch_accepts = 0;
    }
  }
};

namespace detail {

inline double transform_forward(double v, ProposalTransform t) {
  switch (t) {
    case ProposalTransform::identity: return v;
    case ProposalTransform::log_scale: return std::log(v);
    case ProposalTransform::logit_scale: return std::atanh(v);  // (-1,1) scale
  }
  return v;
}

inline double transform_back(double u, ProposalTransform t) {
  switch (t) {
    case ProposalTransform::identity: return u;
    case ProposalTransform::log_scale: return std::exp(u);
    case ProposalTransform::logit_scale: return std::tanh(u);
  }
  return u;
}

/// log |dv/du| summed over coordinates, evaluated at v.
inline double log_jacobian(const Eigen::VectorXd& v, ProposalTransform t) {
  switch (t) {
    case ProposalTransform::identity: return 0.0;
    case ProposalTransform::log_scale: return v.array().log().sum();
    case ProposalTransform::logit_scale: return (1.0 - v.array().square()).log().sum();
  }
  return 0.0;
}

}  // namespace detail

/// Gaussian random walk on the transformed scale with Jacobian-corrected
/// accept/reject. Returns the (possibly unchanged) state and updates the
/// adaptation record in place.
template <class LogTarget>
Eigen::VectorXd arwm_step(const Eigen::VectorXd& current, LogTarget&& log_target,
                          AdaptState& adapt, ProposalTransform transform, Rng& rng,
                          bool adapting = true) {
  const int n = static_cast<int>(current.size());
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u(i) = detail::transform_forward(current(i), transform);
  Eigen::VectorXd u_prop(n);
  const double s = adapt.scale();
  for (int i = 0; i < n; ++i) u_prop(i) = u(i) + s * rng.normal();
  Eigen::VectorXd prop(n);
  for (int i = 0; i < n; ++i) prop(i) = detail::transform_back(u_prop(i), transform);

  const double lt_cur = log_target(current);
  const double lt_prop = log_target(prop);
  const double log_alpha = lt_prop - lt_cur + detail::log_jacobian(prop, transform) -
                           detail::log_jacobian(current, transform);
  const bool accepted = std::isfinite(lt_prop) && std::log(rng.uniform()) < log_alpha;
  adapt.record(accepted, adapting);
  return accepted ? prop : current;
}

// ---------------------------------------------------------------------------
// Chain orchestration
// ---------------------------------------------------------------------------

struct ChainConfig {
  long iterations = 5000;
  long burn_in = 1000;
  long thin = 4;
  int chains = 4;
  std::uint64_t seed = 1;
  long adapt_until = -1;  // defaults to burn_in
  int jobs = 1;

  long effective_adapt_until() const { return adapt_until < 0 ? burn_in : adapt_until; }

  long retained_per_chain() const { return (iterations - burn_in) / thin; }

  void validate() const {
    if (burn_in >= iterations) throw Error("burn_in must be < iterations");
    if (thin < 1) throw Error("thin must be >= 1");
    if (chains < 1) throw Error("chains must be >= 1");
    if (effective_adapt_until() > burn_in) throw Error("adapt_until must be <= burn_in");
  }

  /// The paper-scale configuration: 200k iterations, 50k burn-in, thin 150,
  /// four chains, 4,000 retained draws.
  static ChainConfig paper_scale(std::uint64_t seed) {
    ChainConfig c;
    c.iterations = 200000;
    c.burn_in = 50000;
    c.thin = 150;
    c.chains = 4;
    c.seed = seed;
    return c;
  }
};

/// Thinned post-burn-in draws for every chain, flattened one row per draw.
struct PosteriorSamples {
  std::vector<std::string> param_names;
  std::vector<Eigen::MatrixXd> chains;  // each K x P
  std::vector<long> iteration_ids;      // per retained index, shared across chains
  ChainConfig config;

  int n_chains() const { return static_cast<int>(chains.size()); }
  long n_retained() const { return chains.empty() ? 0 : chains[0].rows(); }

  int param_index(const std::string& name) const {
    for (std::size_t p = 0; p < param_names.size(); ++p)
      if (param_names[p] == name) return static_cast<int>(p);
    throw Error("unknown parameter: " + name);
  }

  Eigen::VectorXd chain_column(int chain, int param) const {
    return chains[static_cast<std::size_t>(chain)].col(param);
  }

  /// All chains stacked, K*chains rows.
  Eigen::MatrixXd pooled() const {
    const long k = n_retained();
    Eigen::MatrixXd out(k * n_chains(), static_cast<long>(param_names.size()));
    for (int c = 0; c < n_chains(); ++c)
      out.middleRows(c * k, k) = chains[static_cast<std::size_t>(c)];
    return out;
  }

  Eigen::VectorXd pooled_column(const std::string& name) const {
    return pooled().col(param_index(name));
  }
};

/// Run independent chains; chain c is seeded seed + c and models come from
/// factory(c) so initial states can be overdispersed deterministically.
/// Parallel execution is a static per-chain assignment, so results do not
/// depend on the job count.
template <class ModelFactory>
PosteriorSamples run_chains(ModelFactory&& factory, const ChainConfig& cfg) {
  cfg.validate();
  PosteriorSamples ps;
  ps.config = cfg;
  const long keep = cfg.retained_per_chain();
  ps.chains.resize(static_cast<std::size_t>(cfg.chains));
  for (long it = cfg.burn_in + 1; it <= cfg.iterations; ++it)
    if ((it - cfg.burn_in) % cfg.thin == 0) ps.iteration_ids.push_back(it);

  auto run_one = [&](int c) {
    auto model = factory(c);
    if (c == 0) ps.param_names = model.param_names();
    Rng rng(cfg.seed + static_cast<std::uint64_t>(c));
    Eigen::MatrixXd draws(keep, static_cast<long>(model.param_names().size()));
    long row = 0;
    for (long it = 1; it <= cfg.iterations; ++it) {
      const bool adapting = it <= cfg.effective_adapt_until();
      model.sweep(rng, adapting);
      if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0)
        draws.row(row++) = model.snapshot().transpose();
    }
    ps.chains[static_cast<std::size_t>(c)] = std::move(draws);
  };

  const int jobs = std::max(1, std::min(cfg.jobs, cfg.chains));
  if (jobs == 1) {
    for (int c = 0; c < cfg.chains; ++c) run_one(c);
  } else {
    // chain 0 first so param_names is set without a race
    run_one(0);
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&, w]() {
        for (int c = 1 + w; c < cfg.chains; c += jobs) run_one(c);
      });
    for (auto& t : pool) t.join();
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Convergence diagnostics
// ---------------------------------------------------------------------------

/// Split-Rhat: each chain is halved, then the classic between/within variance
/// ratio is computed over the resulting 2m sequences.
inline double gelman_rubin(const PosteriorSamples& ps, const std::string& param) {
  if (ps.n_chains() < 2) throw Error("Gelman-Rubin requires at least 2 chains");
  if (ps.n_retained() < 10) throw Error("Gelman-Rubin requires at least 10 retained draws per chain");
  const int p = ps.param_index(param);
  std::vector<Eigen::VectorXd> halves;
  const long k = ps.n_retained();
  const long h = k / 2;
  for (int c = 0; c < ps.n_chains(); ++c) {
    const Eigen::VectorXd col = ps.chain_column(c, p);
    halves.push_back(col.head(h));
    halves.push_back(col.segment(h, h));
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(h);
  double grand = 0.0;
  std::vector<double> means, vars;
  for (const auto& seq : halves) {
    const double mu = seq.mean();
    means.push_back(mu);
    vars.push_back((seq.array() - mu).square().sum() / (n - 1.0));
    grand += mu;
  }
  grand /= m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= n / (m - 1.0);
  double w = 0.0;
  for (double v : vars) w += v;
  w /= m;
  if (w <= 0.0) return 1.0;  // constant chains
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

}  // namespace mvgp
