#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/dataio.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Predictions and scores
// ---------------------------------------------------------------------------

/// A predictive distribution for one held-out row: posterior draws for
/// probabilistic models, or a point with a 95% interval for deterministic
/// ones.
struct Prediction {
  Eigen::VectorXd draws;  // empty for deterministic models
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;

  bool probabilistic() const { return draws.size() > 0; }
};

struct PredictiveEntry {
  Prediction pred;
  double truth = 0.0;
};

using PredictiveSet = std::vector<PredictiveEntry>;

/// Sample CRPS in the standard nonnegative orientation:
///   (1/K) sum |y_k - y_oos|  -  (1/2K^2) sum sum |y_k - y_kap|,
/// so smaller is better and a point mass scores |point - truth|.
inline double crps_from_draws(const Eigen::VectorXd& draws, double truth) {
  const long k = draws.size();
  if (k < 2) throw Error("crps_from_draws needs at least 2 draws");
  std::vector<double> v(draws.data(), draws.data() + k);
  for (double x : v)
    if (!std::isfinite(x)) throw Error("crps_from_draws: non-finite draw");
  std::sort(v.begin(), v.end());
  double term1 = 0.0;
  for (double x : v) term1 += std::abs(x - truth);
  term1 /= static_cast<double>(k);
  // sum_{k,kap} |y_k - y_kap| = 2 * sum_i (2i - K + 1) y_(i), 0-based i
  double pair_sum = 0.0;
  for (long i = 0; i < k; ++i)
    pair_sum += (2.0 * static_cast<double>(i) - static_cast<double>(k) + 1.0) *
                v[static_cast<std::size_t>(i)];
  pair_sum *= 2.0;
  const double term2 = pair_sum / (2.0 * static_cast<double>(k) * static_cast<double>(k));
  return term1 - term2;
}

inline double crps_of(const Prediction& p, double truth) {
  if (p.probabilistic()) return crps_from_draws(p.draws, truth);
  return std::abs(p.point - truth);  // point forecast: CRPS collapses to MAE
}

struct PointScores {
  double mspe = 0.0;
  double mae = 0.0;
  double coverage95 = 0.0;  // percent
};

/// MSPE uses the predictive mean as point forecast, MAE the predictive
/// median (lower median for even draw counts), coverage the central 95%
/// interval (empirical 2.5/97.5 quantiles for draws, the stated bounds for
/// deterministic models).
inline PointScores point_scores(const PredictiveSet& ps) {
  if (ps.empty()) throw Error("point_scores on empty predictive set");
  PointScores out;
  double covered = 0.0;
  for (const auto& e : ps) {
    double mean_pt, med_pt, lo, hi;
    if (e.pred.probabilistic()) {
      if (e.pred.draws.size() < 2) throw Error("probabilistic entry needs >= 2 draws");
      std::vector<double> v(e.pred.draws.data(), e.pred.draws.data() + e.pred.draws.size());
      mean_pt = mean_of(v);
      med_pt = lower_median(v);
      lo = quantile(v, 0.025);
      hi = quantile(v, 0.975);
    } else {
      if (!(e.pred.lower <= e.pred.point && e.pred.point <= e.pred.upper))
        throw Error("deterministic entry must satisfy lower <= point <= upper");
      mean_pt = med_pt = e.pred.point;
      lo = e.pred.lower;
      hi = e.pred.upper;
    }
    out.mspe += (mean_pt - e.truth) * (mean_pt - e.truth);
    out.mae += std::abs(med_pt - e.truth);
    covered += (lo <= e.truth && e.truth <= hi) ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ps.size());
  out.mspe /= n;
  out.mae /= n;
  out.coverage95 = 100.0 * covered / n;
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validation harness
// ---------------------------------------------------------------------------

/// Uniform fit-on-train / predict-held-out contract shared by all six
/// models. The covariate set passed in has held-out values masked; all
/// values are in original covariate units.
class InversePredictor {
 public:
  virtual ~InversePredictor() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Prediction> fit_predict(const CompositionMatrix& data,
                                              const CovariateSet& cs,
                                              std::uint64_t seed) const = 0;
};

struct ScoreRow {
  std::string model;
  double crps = 0.0;
  double mspe = 0.0;
  double mae = 0.0;
  double coverage95 = 0.0;
  int n_rows = 0;
  int n_failed_folds = 0;
  std::vector<std::string> failures;
};

struct ScoreReport {
  std::vector<ScoreRow> rows;

  const ScoreRow& for_model(const std::string& name) const {
    for (const auto& r : rows)
      if (r.model == name) return r;
    throw Error("no score row for model " + name);
  }

  std::vector<std::string> csv_lines() const {
    std::vector<std::string> lines{"model,crps,mspe,mae,coverage95,n_rows,n_failed_folds"};
    for (const auto& r : rows)
      lines.push_back(r.model + "," + fmt_double(r.crps) + "," + fmt_double(r.mspe) + "," +
                      fmt_double(r.mae) + "," + fmt_double(r.coverage95) + "," +
                      std::to_string(r.n_rows) + "," + std::to_string(r.n_failed_folds));
    return lines;
  }
};

/// Mask the covariates of the given rows, turning them into reconstruction
/// rows. The returned set carries no trace of the hidden values.
inline CovariateSet mask_rows(const CovariateSet& cs, const std::vector<int>& rows) {
  CovariateSet out = cs;
  for (int r : rows) {
    out.observed[static_cast<std::size_t>(r)] = false;
    out.values(r) = 0.0;
  }
  return out;
}

struct FoldOutcome {
  std::string model;
  int split_index = 0;
  std::vector<int> test_rows;
  std::vector<Prediction> predictions;  // aligned with test_rows
  bool failed = false;
  std::string failure;
};

struct CrossvalResult {
  ScoreReport report;
  std::vector<FoldOutcome> outcomes;
};

/// For every split: hide the held-out covariates, fit each model on the
/// visible rows, predict the hidden ones, and score pooled over all held-out
/// rows. A model failure on a fold is recorded and excluded, never averaged.
inline CrossvalResult crossval(const std::vector<std::shared_ptr<InversePredictor>>& models,
                               const CompositionMatrix& data, const CovariateSet& cs,
                               const std::vector<Split>& splits, std::uint64_t seed) {
  for (int i = 0; i < cs.n(); ++i)
    if (!cs.observed[static_cast<std::size_t>(i)])
      throw Error("crossval requires covariates observed for all rows");
  CrossvalResult result;
  std::vector<PredictiveSet> pooled(models.size());
  std::vector<int> failed_folds(models.size(), 0);
  std::vector<std::vector<std::string>> failures(models.size());

  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& split = splits[s];
    const CovariateSet masked = mask_rows(cs, split.test_rows);
    const std::uint64_t fold_seed = seed + 7919u * (static_cast<std::uint64_t>(s) + 1u);
    for (std::size_t m = 0; m < models.size(); ++m) {
      FoldOutcome fo;
      fo.model = models[m]->name();
      fo.split_index = static_cast<int>(s);
      fo.test_rows = split.test_rows;
      try {
        fo.predictions = models[m]->fit_predict(data, masked, fold_seed);
        if (fo.predictions.size() != split.test_rows.size())
          throw Error("model returned wrong number of predictions");
        for (std::size_t t = 0; t < split.test_rows.size(); ++t) {
          PredictiveEntry e;
          e.pred = fo.predictions[t];
          e.truth = cs.values(split.test_rows[t]);
          pooled[m].push_back(std::move(e));
        }
      } catch (const std::exception& ex) {
        fo.failed = true;
        fo.failure = ex.what();
        ++failed_folds[m];
        failures[m].push_back("split " + std::to_string(s) + ": " + ex.what());
      }
      result.outcomes.push_back(std::move(fo));
    }
  }

  for (std::size_t m = 0; m < models.size(); ++m) {
    ScoreRow row;
    row.model = models[m]->name();
    row.n_failed_folds = failed_folds[m];
    row.failures = failures[m];
    row.n_rows = static_cast<int>(pooled[m].size());
    if (!pooled[m].empty()) {
      double crps = 0.0;
      for (const auto& e : pooled[m]) crps += crps_of(e.pred, e.truth);
      row.crps = crps / static_cast<double>(pooled[m].size());
      const PointScores p = point_scores(pooled[m]);
      row.mspe = p.mspe;
      row.mae = p.mae;
      row.coverage95 = p.coverage95;
    }
    result.report.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace mvgp
