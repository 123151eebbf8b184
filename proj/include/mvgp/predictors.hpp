#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "mvgp/baselines.hpp"
#include "mvgp/common.hpp"
#include "mvgp/dataio.hpp"
#include "mvgp/eval.hpp"
#include "mvgp/kernels.hpp"
#include "mvgp/model.hpp"
#include "mvgp/sampler.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Shared fit configuration for the probabilistic models
// ---------------------------------------------------------------------------

struct FitConfig {
  ChainConfig chain;
  int knots = 30;
  double knot_extend = 1.5;
  KernelFamily kernel_family = KernelFamily::exponential;
  double matern_nu = 1.5;
  int bspline_degree = 3;
  bool overdispersion = false;
  MvgpPriors priors;
  BummerPriors bummer_priors;
  int wa_boot = 1000;
  DeshrinkKind wa_deshrink = DeshrinkKind::linear;
  int mat_k = 5;
  MatWeighting mat_weighting = MatWeighting::uniform;
  int mat_boot = 1000;

  CorrelationKernel make_kernel(double rho) const {
    return kernel_family == KernelFamily::exponential ? CorrelationKernel::exponential(rho)
                                                      : CorrelationKernel::matern(rho, matern_nu);
  }
};

/// Fitted probabilistic model: the posterior, the (standardized) working
/// covariates, and the knot grid, everything needed for predictions,
/// diagnostics, and figure data.
struct ProbFitResult {
  PosteriorSamples samples;
  CovariateSet work_cs;  // standardized
  KnotGrid knots;
  XPrior xprior;
  std::vector<int> missing_rows;

  /// Back-transformed draws of one reconstruction row's covariate.
  Eigen::VectorXd x_draws(int row) const {
    const Eigen::VectorXd w = samples.pooled_column("x_missing[" + std::to_string(row) + "]");
    Eigen::VectorXd out(w.size());
    for (long i = 0; i < w.size(); ++i) out(i) = work_cs.unstandardize(w(i));
    return out;
  }

  std::vector<Prediction> predictions() const {
    std::vector<Prediction> out;
    for (int row : missing_rows) {
      Prediction p;
      p.draws = x_draws(row);
      std::vector<double> v(p.draws.data(), p.draws.data() + p.draws.size());
      p.point = mean_of(v);
      p.lower = quantile(v, 0.025);
      p.upper = quantile(v, 0.975);
      out.push_back(std::move(p));
    }
    return out;
  }
};

namespace detail {

inline Eigen::VectorXd working_x_with_placeholders(const CovariateSet& work_cs, double placeholder) {
  Eigen::VectorXd x(work_cs.n());
  for (int i = 0; i < work_cs.n(); ++i)
    x(i) = work_cs.observed[static_cast<std::size_t>(i)] ? work_cs.values(i) : placeholder;
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Full fits (used by both the predictor adapters and the CLI)
// ---------------------------------------------------------------------------

inline ProbFitResult fit_mvgp(const CompositionMatrix& data, const CovariateSet& cs,
                              const FitConfig& cfg, std::uint64_t seed) {
  if (cs.n() != data.n()) throw Error("covariate set does not match data rows");
  ProbFitResult res;
  res.work_cs = standardize_covariates(cs);
  res.knots = make_knots(res.work_cs, cfg.knots, cfg.knot_extend);
  res.xprior = x_prior_from_data(res.work_cs);
  res.missing_rows = cs.missing_rows();
  const Eigen::VectorXd x_all = detail::working_x_with_placeholders(res.work_cs, res.xprior.mean);
  const LowRankBasis proto = LowRankBasis::build(x_all, res.knots, cfg.make_kernel(1.0));
  ChainConfig chain_cfg = cfg.chain;
  chain_cfg.seed = seed;
  auto factory = [&](int chain) {
    return MvgpModel<LowRankBasis>(data, res.work_cs, proto, res.xprior, cfg.priors,
                                   cfg.overdispersion, chain, seed + 7919u * (chain + 1u));
  };
  res.samples = run_chains(factory, chain_cfg);
  return res;
}

inline ProbFitResult fit_gam(const CompositionMatrix& data, const CovariateSet& cs,
                             const FitConfig& cfg, std::uint64_t seed) {
  ProbFitResult res;
  res.work_cs = standardize_covariates(cs);
  res.knots = make_knots(res.work_cs, cfg.knots, cfg.knot_extend);
  res.xprior = x_prior_from_data(res.work_cs);
  res.missing_rows = cs.missing_rows();
  const Eigen::VectorXd x_all = detail::working_x_with_placeholders(res.work_cs, res.xprior.mean);
  const BsplineBasis proto = BsplineBasis::build(x_all, res.knots, cfg.bspline_degree);
  ChainConfig chain_cfg = cfg.chain;
  chain_cfg.seed = seed;
  auto factory = [&](int chain) {
    return MvgpModel<BsplineBasis>(data, res.work_cs, proto, res.xprior, cfg.priors,
                                   cfg.overdispersion, chain, seed + 7919u * (chain + 1u));
  };
  res.samples = run_chains(factory, chain_cfg);
  return res;
}

inline ProbFitResult fit_bummer(const CompositionMatrix& data, const CovariateSet& cs,
                                const FitConfig& cfg, std::uint64_t seed) {
  ProbFitResult res;
  res.work_cs = standardize_covariates(cs);
  res.xprior = x_prior_from_data(res.work_cs);
  res.missing_rows = cs.missing_rows();
  ChainConfig chain_cfg = cfg.chain;
  chain_cfg.seed = seed;
  res.samples = bummer_fit(data, res.work_cs, chain_cfg, cfg.bummer_priors);
  return res;
}

// ---------------------------------------------------------------------------
// InversePredictor adapters
// ---------------------------------------------------------------------------

class MvgpPredictor : public InversePredictor {
 public:
  explicit MvgpPredictor(FitConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "mvgp"; }
  std::vector<Prediction> fit_predict(const CompositionMatrix& data, const CovariateSet& cs,
                                      std::uint64_t seed) const override {
    return fit_mvgp(data, cs, cfg_, seed).predictions();
  }

 private:
  FitConfig cfg_;
};

class GamPredictor : public InversePredictor {
 public:
  explicit GamPredictor(FitConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "gam"; }
  std::vector<Prediction> fit_predict(const CompositionMatrix& data, const CovariateSet& cs,
                                      std::uint64_t seed) const override {
    return fit_gam(data, cs, cfg_, seed).predictions();
  }

 private:
  FitConfig cfg_;
};

class BummerPredictor : public InversePredictor {
 public:
  explicit BummerPredictor(FitConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "bummer"; }
  std::vector<Prediction> fit_predict(const CompositionMatrix& data, const CovariateSet& cs,
                                      std::uint64_t seed) const override {
    return fit_bummer(data, cs, cfg_, seed).predictions();
  }

 private:
  FitConfig cfg_;
};

class WaPredictor : public InversePredictor {
 public:
  explicit WaPredictor(FitConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "wa"; }
  std::vector<Prediction> fit_predict(const CompositionMatrix& data, const CovariateSet& cs,
                                      std::uint64_t seed) const override {
    const Eigen::MatrixXd props = data.proportions();
    const auto train = cs.observed_rows();
    Eigen::MatrixXd train_props(static_cast<long>(train.size()), data.d());
    Eigen::VectorXd train_x(static_cast<long>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
      train_props.row(static_cast<long>(i)) = props.row(train[i]);
      train_x(static_cast<long>(i)) = cs.values(train[i]);
    }
    Rng rng(seed);
    const WaFit fit = wa_fit(train_props, train_x, cfg_.wa_boot, cfg_.wa_deshrink, rng);
    std::vector<Prediction> out;
    for (int row : cs.missing_rows()) {
      const IntervalPrediction ip = wa_predict(fit, props.row(row).transpose());
      Prediction p;
      p.point = ip.point;
      p.lower = ip.lower;
      p.upper = ip.upper;
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  FitConfig cfg_;
};

class MatPredictor : public InversePredictor {
 public:
  explicit MatPredictor(FitConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "mat"; }
  std::vector<Prediction> fit_predict(const CompositionMatrix& data, const CovariateSet& cs,
                                      std::uint64_t seed) const override {
    const Eigen::MatrixXd props = data.proportions();
    const auto train = cs.observed_rows();
    Eigen::MatrixXd train_props(static_cast<long>(train.size()), data.d());
    Eigen::VectorXd train_x(static_cast<long>(train.size()));
    for (std::size_t i = 0; i < train.size(); ++i) {
      train_props.row(static_cast<long>(i)) = props.row(train[i]);
      train_x(static_cast<long>(i)) = cs.values(train[i]);
    }
    Rng rng(seed);
    const MatFit fit = mat_fit(train_props, train_x,
                               std::min<int>(cfg_.mat_k, static_cast<int>(train.size())),
                               cfg_.mat_weighting, cfg_.mat_boot, rng);
    std::vector<Prediction> out;
    for (int row : cs.missing_rows()) {
      const IntervalPrediction ip = mat_predict(fit, props.row(row).transpose());
      Prediction p;
      p.point = ip.point;
      p.lower = ip.lower;
      p.upper = ip.upper;
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  FitConfig cfg_;
};

class MlrcPredictor : public InversePredictor {
 public:
  explicit MlrcPredictor(FitConfig cfg) : cfg_(std::move(cfg)) {}
  std::string name() const override { return "mlrc"; }
  std::vector<Prediction> fit_predict(const CompositionMatrix& data, const CovariateSet& cs,
                                      std::uint64_t) const override {
    const MlrcFit fit = mlrc_fit(data, cs.values, cs.observed_rows(), cfg_.knot_extend);
    std::vector<Prediction> out;
    for (int row : cs.missing_rows()) {
      const MlrcPrediction ip = mlrc_predict(fit, data.counts.row(row).transpose());
      Prediction p;
      p.point = ip.point;
      p.lower = ip.lower;
      p.upper = ip.upper;
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  FitConfig cfg_;
};

inline std::shared_ptr<InversePredictor> make_predictor(const std::string& model,
                                                        const FitConfig& cfg) {
  if (model == "mvgp") return std::make_shared<MvgpPredictor>(cfg);
  if (model == "gam") return std::make_shared<GamPredictor>(cfg);
  if (model == "bummer") return std::make_shared<BummerPredictor>(cfg);
  if (model == "wa") return std::make_shared<WaPredictor>(cfg);
  if (model == "mat") return std::make_shared<MatPredictor>(cfg);
  if (model == "mlrc") return std::make_shared<MlrcPredictor>(cfg);
  throw Error("unknown model: " + model);
}

}  // namespace mvgp
