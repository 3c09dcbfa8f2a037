#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2ae/common.hpp"

namespace c2ae {

// Per-sample reconstruction errors under matched and mismatched condition
// labels, both measured on the training set.
struct ErrorSets {
    std::vector<double> s_match;
    std::vector<double> s_nonmatch;
};

enum class TailSide { match_right, negated_nonmatch_right };

std::string tail_side_name(TailSide side);
TailSide tail_side_from_name(const std::string& name);

// Generalized Pareto fit of tail exceedances above onset u. For the non-match
// set the fit lives in the negated domain (right tail of -s_nonmatch).
struct GpdFit {
    double u = 0.0;
    double zeta = 0.0;
    double mu = 1.0;
    double exceed_frac = 1.0;  // fraction of samples strictly above u
    TailSide side = TailSide::match_right;
};

// Standard GPD CDF: 1 - (1 + zeta*w/mu)^(-1/zeta), exponential when zeta ~ 0.
// Saturates to 1 beyond the finite support bound when zeta < 0.
double gpd_cdf(double w, double zeta, double mu);

// Log-likelihood of GPD(zeta, mu) over tail exceedances; -inf outside the
// valid parameter region.
double gpd_log_likelihood(std::span<const double> exceedances, double zeta, double mu);

// Mean-excess-function onset selection: the smallest candidate quantile from
// which the empirical mean excess is linear. Requires >= 100 samples and
// leaves at least 30 exceedances above the returned onset.
double estimate_tail_onset(std::span<const double> samples);

// Maximum-likelihood GPD fit of the exceedances of `samples` above u.
GpdFit fit_gpd(std::span<const double> samples, double u, TailSide side = TailSide::match_right);

// Both tails plus the operating threshold. The sorted sample copies back the
// empirical part of the probability queries and are not serialized; a model
// restored from disk can only answer queries inside its fitted tails.
struct ThresholdModel {
    GpdFit fit_match;
    GpdFit fit_nonmatch;
    double p_u = 0.5;
    double tau_star = 0.0;
    double search_lo = 0.0;
    double search_hi = 0.0;
    std::vector<double> sorted_match;
    std::vector<double> sorted_nonmatch;

    bool has_samples() const { return !sorted_match.empty() && !sorted_nonmatch.empty(); }
};

// P(match reconstruction error > tau): peaks-over-threshold composition above
// the onset, empirical survival below it.
double prob_match_error_above(const ThresholdModel& tm, double tau);

// P(non-match reconstruction error < tau), via the fit on the negated set.
double prob_nonmatch_error_below(const ThresholdModel& tm, double tau);

// Line search for tau* minimizing
//   (1 - p_u) * P(match error > tau) + p_u * P(non-match error < tau)
// over a 1001-point grid spanning the overlap of the two error ranges; ties
// break toward the smallest tau. Disjoint ranges put tau* at the gap midpoint.
ThresholdModel compute_threshold(const ErrorSets& errors, double p_u);

nlohmann::json threshold_to_json(const ThresholdModel& tm);
ThresholdModel threshold_from_json(const nlohmann::json& j);

}  // namespace c2ae
