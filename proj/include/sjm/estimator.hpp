#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sjm/cox.hpp"
#include "sjm/design.hpp"
#include "sjm/errors.hpp"
#include "sjm/step_function.hpp"
#include "sjm/trial_data.hpp"

namespace sjm {

// Per-subject risk scores on the cumulative-hazard scale. terminal_score is
// Lambda0(T_j) * exp(eta'Z_j), the realized cumulative hazard at the end of
// follow-up; it is zero exactly when T_j precedes the first event time.
struct RiskScoreIndex {
  Eigen::VectorXd linear_predictor;  // r_j = eta'Z_j
  Eigen::VectorXd exp_predictor;     // e^{r_j}
  Eigen::VectorXd terminal_score;    // Lambda0(T_j) e^{r_j}
  StepFunction baseline;
};

inline RiskScoreIndex make_risk_index(const TrialData& data, const Eigen::VectorXd& eta,
                                      StepFunction baseline) {
  if (static_cast<std::size_t>(eta.size()) != data.covariate_dim()) {
    throw ConfigError("eta dimension does not match the covariate dimension");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(data.n());
  RiskScoreIndex index;
  index.linear_predictor.resize(n);
  index.exp_predictor.resize(n);
  index.terminal_score.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Subject& s = data.subject(static_cast<std::size_t>(j));
    const double r = eta.dot(s.covariates);
    index.linear_predictor[j] = r;
    index.exp_predictor[j] = std::exp(r);
    index.terminal_score[j] = baseline(s.followup_time) * index.exp_predictor[j];
  }
  index.baseline = std::move(baseline);
  return index;
}

inline RiskScoreIndex make_risk_index(const TrialData& data, const CoxFit& cox) {
  return make_risk_index(data, cox.eta_hat, cox.baseline);
}

// Matched-set membership indicator
//   phi_j(t, Z_i) = I( s_j > Lambda0(t) e^{r_i} >= Lambda0(t) e^{r_j} ),
// i.e. the log-scale band comparison exponentiated to the hazard scale, which
// stays well defined where Lambda0(t) = 0 (there it reduces to I(s_j > 0)).
// The strict left / non-strict right convention keeps a surviving subject
// matched to itself.
inline bool phi_weight(const RiskScoreIndex& index, std::size_t j, double t, std::size_t i) {
  const double band = index.baseline(t);
  const double mid = band * index.exp_predictor[static_cast<Eigen::Index>(i)];
  const double right = band * index.exp_predictor[static_cast<Eigen::Index>(j)];
  return index.terminal_score[static_cast<Eigen::Index>(j)] > mid && mid >= right;
}

struct CenteredTerms {
  Eigen::VectorXd z_bar;         // matched-set average of design rows
  double dy_increment = 0.0;     // jump contribution of the visits at t
  Eigen::VectorXd dg_increment;  // same for the design rows
  double denom = 0.0;            // matched-set size
};

// Direct evaluation of the centered averages for one (i, t) pair. All outputs
// are zero when the matched set is empty, which drops the term from the
// estimating equation. Reference implementation; the assembler below computes
// the same quantities with shared work.
inline CenteredTerms centered_terms(const TrialData& data, const RiskScoreIndex& index,
                                    const DesignSpec& spec, std::size_t i, double t) {
  const std::size_t n = data.n();
  const std::size_t q = spec.dim();
  CenteredTerms out;
  out.z_bar = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
  out.dg_increment = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));

  Eigen::VectorXd row(static_cast<Eigen::Index>(q));
  std::span<double> row_span(row.data(), q);
  for (std::size_t l = 0; l < n; ++l) {
    if (!phi_weight(index, l, t, i)) continue;
    out.denom += 1.0;
    spec.build(data.subject(l), t, row_span);
    out.z_bar += row;
  }
  if (out.denom == 0.0) return out;
  out.z_bar /= out.denom;

  for (std::size_t j = 0; j < n; ++j) {
    if (!phi_weight(index, j, t, i)) continue;
    for (const Visit& v : data.visits(j)) {
      if (v.time == t) {
        spec.build(data.subject(j), t, row_span);
        out.dy_increment += v.value / out.denom;
        out.dg_increment += row / out.denom;
      }
    }
  }
  return out;
}

struct NormalEquations {
  Eigen::MatrixXd lhs;
  Eigen::VectorXd rhs;
};

namespace detail {

// Fenwick tree over score ranks whose nodes hold small dense vectors, used to
// accumulate matched-set sums { sum w_l, sum w_l Z~_l(t) } under the two-sided
// ordering constraints of phi.
class VectorFenwick {
 public:
  VectorFenwick(std::size_t n, std::size_t stride)
      : n_(n), stride_(stride), tree_((n + 1) * stride, 0.0), total_(stride, 0.0) {}

  void clear() {
    std::fill(tree_.begin(), tree_.end(), 0.0);
    std::fill(total_.begin(), total_.end(), 0.0);
  }

  void add(std::size_t pos, const double* vals) {
    for (std::size_t k = 0; k < stride_; ++k) total_[k] += vals[k];
    for (std::size_t idx = pos + 1; idx <= n_; idx += idx & (~idx + 1)) {
      double* node = tree_.data() + idx * stride_;
      for (std::size_t k = 0; k < stride_; ++k) node[k] += vals[k];
    }
  }

  // Sum over the first `count` positions.
  void prefix(std::size_t count, double* out) const {
    std::fill(out, out + stride_, 0.0);
    for (std::size_t idx = count; idx > 0; idx -= idx & (~idx + 1)) {
      const double* node = tree_.data() + idx * stride_;
      for (std::size_t k = 0; k < stride_; ++k) out[k] += node[k];
    }
  }

  const double* total() const noexcept { return total_.data(); }

 private:
  std::size_t n_;
  std::size_t stride_;
  std::vector<double> tree_;
  std::vector<double> total_;
};

}  // namespace detail

// Optional per-(subject, time) weight on the estimating-function terms
// (hook for covariance-based weighting; defaults to 1 everywhere).
using ObservationWeight = std::function<double(std::size_t subject, double time)>;

// Builds the normal equations lhs * beta = rhs with
//   lhs = sum_i int [Z~_i - Zbar_i] I(T_i > t) {Z~_i dN_i - dGbar_i}',
//   rhs = sum_i int [Z~_i - Zbar_i] I(T_i > t) {Y_i dN_i - dYbar_i},
// so that U(beta) = rhs - lhs * beta exactly. Time-independent structure
// (visit grid, design rows) is precomputed once and shared across weighted
// re-solves, which is what makes resampling affordable.
class Assembler {
 public:
  Assembler(const TrialData& data, DesignSpec spec)
      : data_(&data), spec_(std::move(spec)), q_(spec_.dim()) {
    if (spec_.covariate_dim() != data.covariate_dim()) {
      throw ConfigError("design covariate dimension does not match the data");
    }
    std::vector<double> times;
    times.reserve(data.total_visits());
    for (std::size_t i = 0; i < data.n(); ++i) {
      for (const Visit& v : data.visits(i)) times.push_back(v.time);
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    const std::size_t n = data.n();
    blocks_.reserve(times.size());
    for (double t : times) {
      if (t > data.tau()) break;  // integration horizon
      TimeBlock block;
      block.time = t;
      block.design.resize(n * q_);
      for (std::size_t l = 0; l < n; ++l) {
        spec_.build(data.subject(l), t, std::span<double>(block.design.data() + l * q_, q_));
      }
      blocks_.push_back(std::move(block));
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (const Visit& v : data.visits(i)) {
        if (v.time > data.tau()) continue;
        auto it = std::lower_bound(blocks_.begin(), blocks_.end(), v.time,
                                   [](const TimeBlock& b, double x) { return b.time < x; });
        it->events.emplace_back(static_cast<std::uint32_t>(i), v.value);
      }
    }
  }

  const DesignSpec& design() const noexcept { return spec_; }

  NormalEquations assemble(const RiskScoreIndex& index, std::span<const double> weights = {},
                           const ObservationWeight& observation_weight = {}) const {
    if (!weights.empty() && weights.size() != data_->n()) {
      throw ConfigError("weight vector length must equal n");
    }
    if (observation_weight) return assemble_reference(index, weights, observation_weight);
    return assemble_fast(index, weights);
  }

 private:
  struct TimeBlock {
    double time = 0.0;
    std::vector<std::pair<std::uint32_t, double>> events;  // (subject, measurement)
    std::vector<double> design;                            // n x q, row-major
  };

  NormalEquations assemble_fast(const RiskScoreIndex& index,
                                std::span<const double> weights) const {
    const std::size_t n = data_->n();
    const std::size_t q = q_;
    auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

    NormalEquations eq;
    eq.lhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
    eq.rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));

    const double* er = index.exp_predictor.data();
    const double* score = index.terminal_score.data();

    // Subjects ordered by linear predictor (canonical tie-break) and by
    // terminal score; fixed per call, shared by every time block.
    std::vector<std::uint32_t> by_r(n);
    std::iota(by_r.begin(), by_r.end(), 0u);
    std::sort(by_r.begin(), by_r.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (er[a] != er[b]) return er[a] < er[b];
      return a < b;
    });
    std::vector<double> er_sorted(n);
    for (std::size_t m = 0; m < n; ++m) er_sorted[m] = er[by_r[m]];

    std::vector<std::uint32_t> by_s(n);
    std::iota(by_s.begin(), by_s.end(), 0u);
    std::sort(by_s.begin(), by_s.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (score[a] != score[b]) return score[a] < score[b];
      return a < b;
    });
    std::vector<double> s_sorted(n);
    std::vector<std::uint32_t> s_rank(n);
    for (std::size_t m = 0; m < n; ++m) {
      s_sorted[m] = score[by_s[m]];
      s_rank[by_s[m]] = static_cast<std::uint32_t>(m);
    }

    const std::size_t stride = q + 1;
    detail::VectorFenwick fenwick(n, stride);
    std::vector<double> entry(stride);
    std::vector<double> suffix(stride);
    std::vector<double> denom(n);
    std::vector<double> zbar(n * q);
    std::vector<double> prefix((n + 1) * q);
    std::vector<double> vec(q);

    for (const TimeBlock& block : blocks_) {
      const double band = index.baseline(block.time);
      const double* design = block.design.data();

      if (band == 0.0) {
        // Before the first event the matched set is {l : s_l > 0} for every
        // i, so the averages are shared.
        double denom0 = 0.0;
        std::vector<double> zsum0(q, 0.0);
        for (std::size_t l = 0; l < n; ++l) {
          if (!(score[l] > 0.0)) continue;
          const double w = weight(l);
          denom0 += w;
          const double* row = design + l * q;
          for (std::size_t k = 0; k < q; ++k) zsum0[k] += w * row[k];
        }
        if (denom0 > 0.0) {
          for (std::size_t k = 0; k < q; ++k) zsum0[k] /= denom0;
        }

        std::fill(prefix.begin(), prefix.begin() + static_cast<std::ptrdiff_t>(q), 0.0);
        for (std::size_t m = 0; m < n; ++m) {
          const std::uint32_t i = by_r[m];
          const double* prev = prefix.data() + m * q;
          double* next = prefix.data() + (m + 1) * q;
          const bool alive = data_->subject(i).followup_time > block.time;
          if (denom0 > 0.0 && alive) {
            const double scale = weight(i) / denom0;
            const double* row = design + i * q;
            for (std::size_t k = 0; k < q; ++k) {
              next[k] = prev[k] + scale * (row[k] - zsum0[k]);
            }
          } else {
            std::copy(prev, prev + q, next);
          }
        }
        const double* full = prefix.data() + n * q;

        for (const auto& [j, y] : block.events) {
          const double wj = weight(j);
          const double* row_j = design + j * q;
          for (std::size_t k = 0; k < q; ++k) {
            double own = denom0 > 0.0 ? wj * (row_j[k] - zsum0[k]) : 0.0;
            double matched = score[j] > 0.0 ? full[k] : 0.0;
            vec[k] = own - wj * matched;
          }
          accumulate(eq, vec.data(), row_j, y, q);
        }
        continue;
      }

      // Matched-set sums via the Fenwick tree: subjects enter in increasing
      // linear-predictor order (whole tied groups first), queries take the
      // suffix with terminal score above the band threshold.
      fenwick.clear();
      std::size_t m = 0;
      while (m < n) {
        // Ties are runs of equal band * e^{r}, the exact quantity phi compares.
        std::size_t group_end = m;
        const double group_key = band * er_sorted[m];
        while (group_end < n && band * er_sorted[group_end] == group_key) ++group_end;
        for (std::size_t g = m; g < group_end; ++g) {
          const std::uint32_t l = by_r[g];
          // Subjects past follow-up can never satisfy s_l > band * e^{r_i}
          // within their ordering constraint, so they are skipped exactly.
          if (!(data_->subject(l).followup_time > block.time)) continue;
          if (!(score[l] > 0.0)) continue;
          const double w = weight(l);
          entry[0] = w;
          const double* row = design + l * q;
          for (std::size_t k = 0; k < q; ++k) entry[k + 1] = w * row[k];
          fenwick.add(s_rank[l], entry.data());
        }
        for (std::size_t g = m; g < group_end; ++g) {
          const std::uint32_t i = by_r[g];
          if (!(data_->subject(i).followup_time > block.time)) {
            denom[i] = 0.0;
            continue;
          }
          const double threshold = band * er[i];
          const std::size_t cut = static_cast<std::size_t>(
              std::upper_bound(s_sorted.begin(), s_sorted.end(), threshold) - s_sorted.begin());
          fenwick.prefix(cut, suffix.data());
          const double* total = fenwick.total();
          const double d = total[0] - suffix[0];
          denom[i] = d;
          if (d > 0.0) {
            double* zb = zbar.data() + i * q;
            for (std::size_t k = 0; k < q; ++k) zb[k] = (total[k + 1] - suffix[k + 1]) / d;
          }
        }
        m = group_end;
      }

      std::fill(prefix.begin(), prefix.begin() + static_cast<std::ptrdiff_t>(q), 0.0);
      for (std::size_t pos = 0; pos < n; ++pos) {
        const std::uint32_t i = by_r[pos];
        const double* prev = prefix.data() + pos * q;
        double* next = prefix.data() + (pos + 1) * q;
        const bool alive = data_->subject(i).followup_time > block.time;
        if (alive && denom[i] > 0.0) {
          const double scale = weight(i) / denom[i];
          const double* row = design + i * q;
          const double* zb = zbar.data() + i * q;
          for (std::size_t k = 0; k < q; ++k) next[k] = prev[k] + scale * (row[k] - zb[k]);
        } else {
          std::copy(prev, prev + q, next);
        }
      }

      for (const auto& [j, y] : block.events) {
        const double wj = weight(j);
        const double* row_j = design + j * q;
        const double threshold_j = band * er[j];

        // Positions i with band*e^{r_i} >= band*e^{r_j} form a suffix; those
        // with s_j > band*e^{r_i} form a prefix. Their overlap is the matched
        // band of subject j.
        const std::size_t lo = static_cast<std::size_t>(
            std::partition_point(er_sorted.begin(), er_sorted.end(),
                                 [&](double e) { return band * e < threshold_j; }) -
            er_sorted.begin());
        const std::size_t hi = static_cast<std::size_t>(
            std::partition_point(er_sorted.begin(), er_sorted.end(),
                                 [&](double e) { return band * e < score[j]; }) -
            er_sorted.begin());

        const double* p_lo = prefix.data() + lo * q;
        const double* p_hi = prefix.data() + hi * q;
        const bool own_defined = denom[j] > 0.0 &&
                                 data_->subject(j).followup_time > block.time;
        const double* zb_j = zbar.data() + j * q;
        for (std::size_t k = 0; k < q; ++k) {
          const double own = own_defined ? wj * (row_j[k] - zb_j[k]) : 0.0;
          const double matched = hi > lo ? p_hi[k] - p_lo[k] : 0.0;
          vec[k] = own - wj * matched;
        }
        accumulate(eq, vec.data(), row_j, y, q);
      }
    }
    return eq;
  }

  // Direct translation of the estimating equation, used when a per-(i, t)
  // observation weight is supplied. O(#times * n^2 * q).
  NormalEquations assemble_reference(const RiskScoreIndex& index,
                                     std::span<const double> weights,
                                     const ObservationWeight& observation_weight) const {
    const std::size_t n = data_->n();
    const std::size_t q = q_;
    auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

    NormalEquations eq;
    eq.lhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(q));
    eq.rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));

    const double* er = index.exp_predictor.data();
    const double* score = index.terminal_score.data();
    std::vector<double> centered(q);
    std::vector<double> vec(q);

    for (const TimeBlock& block : blocks_) {
      const double band = index.baseline(block.time);
      const double* design = block.design.data();

      for (std::size_t i = 0; i < n; ++i) {
        if (!(data_->subject(i).followup_time > block.time)) continue;
        const double obs_w = observation_weight(i, block.time);
        if (obs_w == 0.0) continue;

        const double mid = band * er[i];
        double denom = 0.0;
        std::fill(centered.begin(), centered.end(), 0.0);
        for (std::size_t l = 0; l < n; ++l) {
          if (!(score[l] > mid && mid >= band * er[l])) continue;
          const double wl = weight(l);
          denom += wl;
          const double* row = design + l * q;
          for (std::size_t k = 0; k < q; ++k) centered[k] += wl * row[k];
        }
        if (denom == 0.0) continue;
        const double* row_i = design + i * q;
        for (std::size_t k = 0; k < q; ++k) centered[k] = row_i[k] - centered[k] / denom;

        const double wi_total = obs_w * weight(i);
        for (const auto& [j, y] : block.events) {
          double contribution = 0.0;
          const double* row_j = design + j * q;
          if (j == i) contribution += 1.0;
          if (score[j] > mid && mid >= band * er[j]) contribution -= weight(j) / denom;
          if (contribution == 0.0) continue;
          const double c = wi_total * contribution;
          for (std::size_t k = 0; k < q; ++k) vec[k] = c * centered[k];
          accumulate(eq, vec.data(), row_j, y, q);
        }
      }
    }
    return eq;
  }

  static void accumulate(NormalEquations& eq, const double* vec, const double* design_row,
                         double y, std::size_t q) {
    double* rhs = eq.rhs.data();
    double* lhs = eq.lhs.data();  // column-major
    for (std::size_t k = 0; k < q; ++k) rhs[k] += y * vec[k];
    for (std::size_t col = 0; col < q; ++col) {
      const double zc = design_row[col];
      if (zc == 0.0) continue;
      double* column = lhs + col * q;
      for (std::size_t k = 0; k < q; ++k) column[k] += vec[k] * zc;
    }
  }

  const TrialData* data_;
  DesignSpec spec_;
  std::size_t q_;
  std::vector<TimeBlock> blocks_;
};

inline NormalEquations assemble_normal_equations(const TrialData& data, const CoxFit& cox,
                                                 const DesignSpec& spec) {
  Assembler assembler(data, spec);
  return assembler.assemble(make_risk_index(data, cox));
}

struct BetaSolve {
  Eigen::VectorXd beta;
  double condition = 0.0;
};

// Rank-revealing solve of lhs * beta = rhs with an SVD condition estimate.
// Refuses ill-conditioned systems instead of silently regularizing them.
inline BetaSolve solve_beta(const Eigen::MatrixXd& lhs, const Eigen::VectorXd& rhs,
                            const std::string& design_description = {}) {
  if (lhs.rows() != lhs.cols() || lhs.rows() != rhs.size()) {
    throw ConfigError("normal equations have mismatched dimensions");
  }
  constexpr double max_condition = 1e10;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lhs);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double condition =
      smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(condition <= max_condition)) {
    std::string what = "normal equations are singular or ill-conditioned (condition ";
    what += std::isinf(condition) ? "inf" : csv::format_double(condition);
    what += ")";
    if (!design_description.empty()) what += " for design " + design_description;
    what += "; check for a degenerate design (e.g. a single treatment arm)";
    throw NotIdentifiableError(what);
  }

  BetaSolve out;
  out.beta = Eigen::FullPivLU<Eigen::MatrixXd>(lhs).solve(rhs);
  out.condition = condition;
  return out;
}

struct SjmFit {
  Eigen::VectorXd beta_hat;
  Eigen::MatrixXd lhs_matrix;  // n-scaled estimate of the slope matrix
  Eigen::VectorXd rhs_vector;
  double condition_estimate = 0.0;
  DesignSpec design;
  CoxFit cox;
};

// Full pipeline for given subject weights, reusing a prebuilt assembler.
inline SjmFit fit_sjm_weighted(const Assembler& assembler, const TrialData& data,
                               CoxOptions options = {}, std::span<const double> weights = {}) {
  SjmFit fit;
  fit.design = assembler.design();
  fit.cox = fit_cox(data, options, weights);
  const RiskScoreIndex index = make_risk_index(data, fit.cox);
  NormalEquations eq = assembler.assemble(index, weights);
  BetaSolve solved = solve_beta(eq.lhs, eq.rhs, fit.design.description());

  const double scale = std::max(
      1.0, eq.rhs.cwiseAbs().maxCoeff() +
               eq.lhs.cwiseAbs().maxCoeff() * solved.beta.cwiseAbs().maxCoeff());
  const double residual = (eq.rhs - eq.lhs * solved.beta).cwiseAbs().maxCoeff();
  if (!(residual / scale <= 1e-8)) {
    throw Error("estimating equation residual check failed (residual " +
                csv::format_double(residual) + ")");
  }

  fit.beta_hat = std::move(solved.beta);
  fit.condition_estimate = solved.condition;
  fit.lhs_matrix = std::move(eq.lhs);
  fit.rhs_vector = std::move(eq.rhs);
  return fit;
}

inline SjmFit fit_sjm(const TrialData& data, const DesignSpec& spec, CoxOptions options = {}) {
  Assembler assembler(data, spec);
  return fit_sjm_weighted(assembler, data, options);
}

}  // namespace sjm
