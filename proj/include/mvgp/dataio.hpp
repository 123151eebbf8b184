#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mvgp/common.hpp"
#include "mvgp/csv.hpp"

namespace mvgp {

// ---------------------------------------------------------------------------
// Core data containers
// ---------------------------------------------------------------------------

/// N x d nonnegative integer counts with per-row totals. Row totals must be
/// positive: an all-zero row carries no compositional information and would
/// silently desynchronize covariate alignment if dropped.
struct CompositionMatrix {
  Eigen::MatrixXi counts;
  std::vector<std::string> species_names;
  Eigen::VectorXi row_totals;

  int n() const { return static_cast<int>(counts.rows()); }
  int d() const { return static_cast<int>(counts.cols()); }

  Eigen::MatrixXd counts_real() const { return counts.cast<double>(); }

  /// Row-normalized proportions.
  Eigen::MatrixXd proportions() const {
    Eigen::MatrixXd p = counts.cast<double>();
    for (int i = 0; i < p.rows(); ++i) p.row(i) /= static_cast<double>(row_totals(i));
    return p;
  }

  void validate() const {
    if (counts.cols() < 2) throw Error("composition matrix needs d >= 2 species");
    if (counts.rows() < 1) throw Error("composition matrix needs N >= 1 rows");
    if (static_cast<int>(species_names.size()) != counts.cols())
      throw Error("species name count does not match column count");
    std::set<std::string> uniq(species_names.begin(), species_names.end());
    if (static_cast<int>(uniq.size()) != counts.cols())
      throw Error("species names must be distinct");
    for (int i = 0; i < counts.rows(); ++i) {
      int total = 0;
      for (int j = 0; j < counts.cols(); ++j) {
        if (counts(i, j) < 0)
          throw Error("negative count at row " + std::to_string(i) + ", column '" +
                      species_names[static_cast<std::size_t>(j)] + "'");
        total += counts(i, j);
      }
      if (total < 1) throw Error("row " + std::to_string(i) + " has zero total count");
      if (total != row_totals(i))
        throw Error("row total mismatch at row " + std::to_string(i));
    }
  }

  static CompositionMatrix from_counts(Eigen::MatrixXi c, std::vector<std::string> names) {
    CompositionMatrix m;
    m.counts = std::move(c);
    m.species_names = std::move(names);
    m.row_totals = m.counts.rowwise().sum();
    m.validate();
    return m;
  }
};

/// Observed covariates for calibration rows plus unknown slots for
/// reconstruction rows, with an optional affine standardization record.
struct CovariateSet {
  Eigen::VectorXd values;        // defined only where observed
  std::vector<bool> observed;    // per row
  double center = 0.0;
  double scale = 1.0;
  bool standardized = false;

  int n() const { return static_cast<int>(values.size()); }

  std::vector<int> observed_rows() const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (observed[static_cast<std::size_t>(i)]) out.push_back(i);
    return out;
  }

  std::vector<int> missing_rows() const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (!observed[static_cast<std::size_t>(i)]) out.push_back(i);
    return out;
  }

  std::vector<double> observed_values() const {
    std::vector<double> out;
    for (int i = 0; i < n(); ++i)
      if (observed[static_cast<std::size_t>(i)]) out.push_back(values(i));
    return out;
  }

  int n_missing() const { return static_cast<int>(missing_rows().size()); }

  /// Map a value back to the original covariate units.
  double unstandardize(double v) const { return standardized ? v * scale + center : v; }

  double to_working(double v) const { return standardized ? (v - center) / scale : v; }
};

/// Random k-fold assignment; reproducible from its seed.
struct FoldDesign {
  Eigen::VectorXi assignments;  // fold ids in 1..k
  int k = 0;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(assignments.size()); }

  std::vector<int> fold_rows(int fold) const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (assignments(i) == fold) out.push_back(i);
    return out;
  }
};

/// One train/test division of the rows; k-fold and no-analog designs both
/// reduce to lists of these.
struct Split {
  std::vector<int> train_rows;
  std::vector<int> test_rows;
};

inline std::vector<Split> splits_from_folds(const FoldDesign& fd) {
  std::vector<Split> out;
  for (int f = 1; f <= fd.k; ++f) {
    Split s;
    s.test_rows = fd.fold_rows(f);
    for (int i = 0; i < fd.n(); ++i)
      if (fd.assignments(i) != f) s.train_rows.push_back(i);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

/// Counts CSV: header = species names, body = exact integers.
inline CompositionMatrix load_counts(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 2) throw Error(path + ": counts file needs at least 2 species columns");
  const int n = static_cast<int>(t.rows.size());
  const int d = static_cast<int>(t.header.size());
  if (n < 1) throw Error(path + ": counts file has no data rows");
  Eigen::MatrixXi counts(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const std::string where =
          path + ": row " + std::to_string(i + 1) + ", column '" + t.header[static_cast<std::size_t>(j)] + "'";
      const long long v =
          parse_strict_int(t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], where);
      if (v < 0) throw Error(where + ": negative count " + std::to_string(v));
      counts(i, j) = static_cast<int>(v);
    }
  }
  return CompositionMatrix::from_counts(std::move(counts), t.header);
}

/// Covariates CSV: columns (row_id, value); empty value marks a
/// reconstruction row. row_ids must cover 0..N-1 exactly once.
inline CovariateSet load_covariates(const std::string& path, int n_rows) {
  const CsvTable t = read_csv(path);
  if (t.header.size() != 2) throw Error(path + ": covariates file must have columns row_id,value");
  if (static_cast<int>(t.rows.size()) != n_rows)
    throw Error(path + ": expected " + std::to_string(n_rows) + " covariate rows, got " +
                std::to_string(t.rows.size()));
  CovariateSet cs;
  cs.values = Eigen::VectorXd::Zero(n_rows);
  cs.observed.assign(static_cast<std::size_t>(n_rows), false);
  std::vector<bool> seen(static_cast<std::size_t>(n_rows), false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path + ": row " + std::to_string(r + 1);
    const long long id = parse_strict_int(t.rows[r][0], where);
    if (id < 0 || id >= n_rows) throw Error(where + ": row_id " + std::to_string(id) + " out of range");
    if (seen[static_cast<std::size_t>(id)]) throw Error(where + ": duplicate row_id " + std::to_string(id));
    seen[static_cast<std::size_t>(id)] = true;
    const std::string& val = t.rows[r][1];
    if (!val.empty()) {
      cs.values(static_cast<int>(id)) = parse_double(val, where);
      cs.observed[static_cast<std::size_t>(id)] = true;
    }
  }
  return cs;
}

inline std::pair<CompositionMatrix, CovariateSet> load_dataset(const std::string& counts_path,
                                                               const std::string& covariates_path) {
  CompositionMatrix cm = load_counts(counts_path);
  CovariateSet cs = load_covariates(covariates_path, cm.n());
  return {std::move(cm), std::move(cs)};
}

// Canonical serialization (byte-stable; round-trips through load_*).

inline std::vector<std::string> counts_csv_lines(const CompositionMatrix& cm) {
  std::vector<std::string> lines;
  std::string h;
  for (int j = 0; j < cm.d(); ++j) {
    if (j) h += ',';
    h += cm.species_names[static_cast<std::size_t>(j)];
  }
  lines.push_back(h);
  for (int i = 0; i < cm.n(); ++i) {
    std::string row;
    for (int j = 0; j < cm.d(); ++j) {
      if (j) row += ',';
      row += std::to_string(cm.counts(i, j));
    }
    lines.push_back(row);
  }
  return lines;
}

inline std::vector<std::string> covariates_csv_lines(const CovariateSet& cs) {
  std::vector<std::string> lines{"row_id,value"};
  for (int i = 0; i < cs.n(); ++i) {
    std::string row = std::to_string(i) + ",";
    if (cs.observed[static_cast<std::size_t>(i)]) row += fmt_double(cs.values(i));
    lines.push_back(row);
  }
  return lines;
}

inline std::vector<std::string> folds_csv_lines(const FoldDesign& fd) {
  std::vector<std::string> lines{"row_id,fold"};
  for (int i = 0; i < fd.n(); ++i)
    lines.push_back(std::to_string(i) + "," + std::to_string(fd.assignments(i)));
  return lines;
}

// ---------------------------------------------------------------------------
// Transforms and splits
// ---------------------------------------------------------------------------

/// Center/scale so observed values have sample mean 0 and sample sd 1 (n-1
/// denominator). The working scale makes the default length-scale prior and
/// knot extension meaningful regardless of covariate units.
inline CovariateSet standardize_covariates(const CovariateSet& cs) {
  const auto vals = cs.observed_values();
  if (vals.size() < 2) throw Error("standardization needs at least two observed covariates");
  const double m = mean_of(vals);
  const double sd = sample_sd(vals);
  if (!(sd > 0.0)) throw Error("standardization needs at least two distinct observed values");
  CovariateSet out = cs;
  out.center = m;
  out.scale = sd;
  out.standardized = true;
  for (int i = 0; i < cs.n(); ++i)
    if (cs.observed[static_cast<std::size_t>(i)]) out.values(i) = (cs.values(i) - m) / sd;
  return out;
}

inline FoldDesign kfold_split(int n, int k, std::uint64_t seed) {
  if (k < 2 || k > n) throw Error("fold count k must satisfy 2 <= k <= N");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  FoldDesign fd;
  fd.k = k;
  fd.seed = seed;
  fd.assignments = Eigen::VectorXi::Zero(n);
  for (int pos = 0; pos < n; ++pos)
    fd.assignments(perm[static_cast<std::size_t>(pos)]) = pos % k + 1;
  return fd;
}

/// Hold out the rows whose covariate exceeds the given quantile of the
/// observed covariates: the no-analog extrapolation scenario. Fold 1 = train,
/// fold 2 = test.
inline FoldDesign noanalog_split(const CovariateSet& cs, double q) {
  if (!(q > 0.0 && q < 1.0)) throw Error("no-analog quantile must lie in (0,1)");
  for (int i = 0; i < cs.n(); ++i)
    if (!cs.observed[static_cast<std::size_t>(i)])
      throw Error("no-analog split requires covariates observed for all rows");
  std::vector<double> vals(cs.values.data(), cs.values.data() + cs.n());
  const double thr = quantile(vals, q);
  FoldDesign fd;
  fd.k = 2;
  fd.seed = 0;
  fd.assignments = Eigen::VectorXi::Zero(cs.n());
  int n_test = 0;
  for (int i = 0; i < cs.n(); ++i) {
    const bool test = cs.values(i) > thr;
    fd.assignments(i) = test ? 2 : 1;
    n_test += test ? 1 : 0;
  }
  if (n_test == 0 || n_test == cs.n())
    throw Error("degenerate no-analog split: empty train or test set");
  return fd;
}

inline Split noanalog_as_split(const FoldDesign& fd) {
  Split s;
  for (int i = 0; i < fd.n(); ++i)
    (fd.assignments(i) == 2 ? s.test_rows : s.train_rows).push_back(i);
  return s;
}

}  // namespace mvgp
