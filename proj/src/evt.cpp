#include "c2ae/evt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace c2ae {

namespace {

constexpr double kZetaZeroEps = 1e-12;
constexpr double kZetaLo = -0.95;
constexpr double kZetaHi = 2.0;
constexpr int kMaxIters = 200;
constexpr double kOptTol = 1e-9;
constexpr std::size_t kMinExceedances = 30;

const double kNegInf = -std::numeric_limits<double>::infinity();

// Linear interpolation between order statistics of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= sorted.size()) return sorted.back();
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// Golden-section maximization of a unimodal function on [a, b].
template <typename F>
double golden_max(F f, double a, double b, int iters, double tol) {
    constexpr double inv_phi = 0.6180339887498949;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    for (int i = 0; i < iters && (b - a) > tol; ++i) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace

std::string tail_side_name(TailSide side) {
    switch (side) {
        case TailSide::match_right: return "match_right";
        case TailSide::negated_nonmatch_right: return "negated_nonmatch_right";
    }
    throw ContractError("unknown tail side");
}

TailSide tail_side_from_name(const std::string& name) {
    if (name == "match_right") return TailSide::match_right;
    if (name == "negated_nonmatch_right") return TailSide::negated_nonmatch_right;
    throw ContractError("unknown tail side: " + name);
}

double gpd_cdf(double w, double zeta, double mu) {
    if (mu <= 0.0) throw ContractError("gpd_cdf requires mu > 0");
    if (!(w >= 0.0)) throw ContractError("gpd_cdf requires w >= 0");
    if (std::abs(zeta) < kZetaZeroEps) return -std::expm1(-w / mu);
    const double t = zeta * w / mu;
    if (1.0 + t <= 0.0) return 1.0;  // beyond the finite support bound (zeta < 0)
    return -std::expm1(-std::log1p(t) / zeta);
}

double gpd_log_likelihood(std::span<const double> exceedances, double zeta, double mu) {
    if (exceedances.empty()) throw ContractError("log-likelihood of an empty tail");
    if (mu <= 0.0) return kNegInf;
    const double n = static_cast<double>(exceedances.size());
    if (std::abs(zeta) < kZetaZeroEps) {
        double s = 0.0;
        for (double e : exceedances) s += e;
        return -n * std::log(mu) - s / mu;
    }
    double s = 0.0;
    for (double e : exceedances) {
        const double t = zeta * e / mu;
        if (1.0 + t <= 0.0) return kNegInf;
        s += std::log1p(t);
    }
    return -n * std::log(mu) - (1.0 + 1.0 / zeta) * s;
}

double estimate_tail_onset(std::span<const double> samples) {
    if (samples.size() < 100)
        throw InsufficientDataError("tail onset estimation needs at least 100 samples");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back())
        throw InsufficientDataError("tail onset estimation needs non-constant data");

    // Suffix sums for O(log n) mean-excess evaluation.
    std::vector<double> suffix(sorted.size() + 1, 0.0);
    for (std::size_t i = sorted.size(); i-- > 0;) suffix[i] = suffix[i + 1] + sorted[i];

    auto mean_excess = [&](double v, std::size_t& count) {
        const auto it = std::upper_bound(sorted.begin(), sorted.end(), v);
        count = static_cast<std::size_t>(sorted.end() - it);
        if (count == 0) return 0.0;
        const std::size_t idx = static_cast<std::size_t>(it - sorted.begin());
        return suffix[idx] / static_cast<double>(count) - v;
    };

    struct Candidate {
        double u;
        double excess;
        bool valid;  // enough exceedances for a downstream fit
    };
    std::vector<Candidate> cands;
    for (int pct = 50; pct <= 95; ++pct) {
        const double u = quantile_sorted(sorted, pct / 100.0);
        std::size_t count = 0;
        const double e = mean_excess(u, count);
        cands.push_back({u, e, count >= kMinExceedances});
    }

    // Least-squares line over the mean-excess points from candidate c upward;
    // accept when the points are close to some line. R^2 alone misfires on
    // flat mean-excess curves (exponential tails), where total variance is
    // pure noise, so a small residual spread relative to the excess level
    // also qualifies.
    auto linear_from = [&](std::size_t c) {
        std::vector<double> xs, ys;
        for (std::size_t i = c; i < cands.size(); ++i) {
            if (!cands[i].valid) break;
            xs.push_back(cands[i].u);
            ys.push_back(cands[i].excess);
        }
        if (xs.size() < 3) return false;
        const double n = static_cast<double>(xs.size());
        const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
        const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
        double sxx = 0.0, sxy = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxx += (xs[i] - mx) * (xs[i] - mx);
            sxy += (xs[i] - mx) * (ys[i] - my);
            syy += (ys[i] - my) * (ys[i] - my);
        }
        const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
        double ss_res = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double pred = my + slope * (xs[i] - mx);
            ss_res += (ys[i] - pred) * (ys[i] - pred);
        }
        const double r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
        const double rmse = std::sqrt(ss_res / n);
        return r2 >= 0.98 || rmse <= 0.05 * std::abs(my);
    };

    for (std::size_t c = 0; c < cands.size(); ++c) {
        if (!cands[c].valid) break;
        if (linear_from(c)) return cands[c].u;
    }

    // Fallback: 90th percentile, pulled down to the highest candidate that
    // still leaves enough exceedances to fit.
    std::size_t fallback = 40;  // 50 + 40 = 90th percentile
    while (fallback > 0 && !cands[fallback].valid) --fallback;
    if (!cands[fallback].valid)
        throw InsufficientTailError("no tail onset leaves enough exceedances");
    return cands[fallback].u;
}

GpdFit fit_gpd(std::span<const double> samples, double u, TailSide side) {
    if (samples.empty()) throw ContractError("fit_gpd on an empty sample set");
    std::vector<double> exc;
    for (double w : samples)
        if (w > u) exc.push_back(w - u);
    if (exc.size() < kMinExceedances)
        throw InsufficientTailError("fit_gpd needs at least 30 exceedances, got " +
                                    std::to_string(exc.size()));

    const double n = static_cast<double>(exc.size());
    const double max_e = *std::max_element(exc.begin(), exc.end());
    const double mean_e = std::accumulate(exc.begin(), exc.end(), 0.0) / n;
    double var_e = 0.0;
    for (double e : exc) var_e += (e - mean_e) * (e - mean_e);
    var_e /= (n - 1.0);

    // Method-of-moments start (exact for the first two GPD moments).
    const double ratio = var_e > 0.0 ? mean_e * mean_e / var_e : 1.0;
    const double zeta_mom = std::clamp(0.5 * (1.0 - ratio), kZetaLo, kZetaHi);
    const double mu_mom = 0.5 * mean_e * (ratio + 1.0);

    auto mu_domain = [&](double zeta) {
        double lo = 1e-8 * mean_e;
        if (zeta < 0.0) lo = std::max(lo, -zeta * max_e * (1.0 + 1e-10));
        return std::pair<double, double>{std::log(lo), std::log(1e8 * mean_e)};
    };
    auto profile_mu = [&](double zeta) {
        const auto [llo, lhi] = mu_domain(zeta);
        return std::exp(golden_max(
            [&](double lm) { return gpd_log_likelihood(exc, zeta, std::exp(lm)); }, llo, lhi,
            kMaxIters, kOptTol));
    };
    auto profile_ll = [&](double zeta) { return gpd_log_likelihood(exc, zeta, profile_mu(zeta)); };

    // Coarse sweep over the shape range, then golden refinement around the
    // best cell.
    const int coarse_n = 61;
    double best_zeta = zeta_mom, best_ll = kNegInf;
    for (int i = 0; i < coarse_n; ++i) {
        const double z = kZetaLo + (kZetaHi - kZetaLo) * i / (coarse_n - 1.0);
        const double ll = profile_ll(z);
        if (ll > best_ll) {
            best_ll = ll;
            best_zeta = z;
        }
    }
    const double cell = (kZetaHi - kZetaLo) / (coarse_n - 1.0);
    const double refined_zeta =
        golden_max(profile_ll, std::max(kZetaLo, best_zeta - cell),
                   std::min(kZetaHi, best_zeta + cell), kMaxIters, kOptTol);

    double zeta_hat = refined_zeta;
    double mu_hat = profile_mu(zeta_hat);
    double ll_hat = gpd_log_likelihood(exc, zeta_hat, mu_hat);

    // Never return a point worse than the method-of-moments start.
    if (mu_mom > 0.0) {
        const double ll_mom = gpd_log_likelihood(exc, zeta_mom, mu_mom);
        if (ll_mom > ll_hat) {
            zeta_hat = zeta_mom;
            mu_hat = mu_mom;
            ll_hat = ll_mom;
        }
    }
    if (!std::isfinite(ll_hat) || !(mu_hat > 0.0))
        throw FitError("GPD likelihood optimization failed to find a valid point", zeta_hat,
                       mu_hat);

    GpdFit fit;
    fit.u = u;
    fit.zeta = std::abs(zeta_hat) < kZetaZeroEps ? 0.0 : zeta_hat;
    fit.mu = mu_hat;
    fit.exceed_frac = n / static_cast<double>(samples.size());
    fit.side = side;
    return fit;
}

namespace {

double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace

double prob_match_error_above(const ThresholdModel& tm, double tau) {
    const GpdFit& f = tm.fit_match;
    if (tau >= f.u)
        return clamp01(f.exceed_frac * (1.0 - gpd_cdf(tau - f.u, f.zeta, f.mu)));
    if (tm.sorted_match.empty())
        throw ContractError("empirical tail query on a model without retained samples");
    const auto it = std::upper_bound(tm.sorted_match.begin(), tm.sorted_match.end(), tau);
    return static_cast<double>(tm.sorted_match.end() - it) /
           static_cast<double>(tm.sorted_match.size());
}

double prob_nonmatch_error_below(const ThresholdModel& tm, double tau) {
    const GpdFit& f = tm.fit_nonmatch;  // fitted on the negated set
    if (-tau >= f.u)
        return clamp01(f.exceed_frac * (1.0 - gpd_cdf(-tau - f.u, f.zeta, f.mu)));
    if (tm.sorted_nonmatch.empty())
        throw ContractError("empirical tail query on a model without retained samples");
    const auto it = std::lower_bound(tm.sorted_nonmatch.begin(), tm.sorted_nonmatch.end(), tau);
    return static_cast<double>(it - tm.sorted_nonmatch.begin()) /
           static_cast<double>(tm.sorted_nonmatch.size());
}

ThresholdModel compute_threshold(const ErrorSets& errors, double p_u) {
    if (errors.s_match.empty() || errors.s_nonmatch.empty())
        throw ContractError("compute_threshold requires non-empty error sets");
    if (!(p_u >= 0.0 && p_u <= 1.0)) throw ContractError("p_u must lie in [0, 1]");
    for (const auto* set : {&errors.s_match, &errors.s_nonmatch})
        for (double v : *set)
            if (!std::isfinite(v) || v < 0.0)
                throw ContractError("error sets must contain finite non-negative values");

    ThresholdModel tm;
    tm.p_u = p_u;
    tm.sorted_match = errors.s_match;
    std::sort(tm.sorted_match.begin(), tm.sorted_match.end());
    tm.sorted_nonmatch = errors.s_nonmatch;
    std::sort(tm.sorted_nonmatch.begin(), tm.sorted_nonmatch.end());

    tm.fit_match = fit_gpd(errors.s_match, estimate_tail_onset(errors.s_match),
                           TailSide::match_right);
    std::vector<double> negated(errors.s_nonmatch.size());
    std::transform(errors.s_nonmatch.begin(), errors.s_nonmatch.end(), negated.begin(),
                   std::negate<>());
    tm.fit_nonmatch =
        fit_gpd(negated, estimate_tail_onset(negated), TailSide::negated_nonmatch_right);

    const double lo_raw = std::max(tm.sorted_match.front(), tm.sorted_nonmatch.front());
    const double hi_raw = std::min(tm.sorted_match.back(), tm.sorted_nonmatch.back());

    if (lo_raw > hi_raw) {
        // The sets do not overlap: any threshold inside the gap is error-free;
        // take its midpoint.
        tm.search_lo = hi_raw;
        tm.search_hi = lo_raw;
        tm.tau_star = 0.5 * (lo_raw + hi_raw);
        return tm;
    }

    tm.search_lo = lo_raw;
    tm.search_hi = hi_raw;
    const std::size_t grid_n = 1001;
    double best_tau = lo_raw, best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid_n; ++i) {
        const double tau =
            lo_raw + (hi_raw - lo_raw) * static_cast<double>(i) / (grid_n - 1.0);
        const double obj = (1.0 - p_u) * prob_match_error_above(tm, tau) +
                           p_u * prob_nonmatch_error_below(tm, tau);
        if (obj < best_obj) {
            best_obj = obj;
            best_tau = tau;
        }
    }
    tm.tau_star = best_tau;
    return tm;
}

namespace {

nlohmann::json fit_to_json(const GpdFit& f) {
    return {{"u", f.u},
            {"zeta", f.zeta},
            {"mu", f.mu},
            {"exceed_frac", f.exceed_frac},
            {"side", tail_side_name(f.side)}};
}

GpdFit fit_from_json(const nlohmann::json& j) {
    GpdFit f;
    f.u = j.at("u").get<double>();
    f.zeta = j.at("zeta").get<double>();
    f.mu = j.at("mu").get<double>();
    f.exceed_frac = j.at("exceed_frac").get<double>();
    f.side = tail_side_from_name(j.at("side").get<std::string>());
    if (!(f.mu > 0.0)) throw FormatError("tail fit scale must be positive", 0);
    if (!(f.exceed_frac > 0.0 && f.exceed_frac <= 1.0))
        throw FormatError("tail fit exceedance fraction must lie in (0, 1]", 0);
    return f;
}

}  // namespace

nlohmann::json threshold_to_json(const ThresholdModel& tm) {
    return {{"fit_match", fit_to_json(tm.fit_match)},
            {"fit_nonmatch", fit_to_json(tm.fit_nonmatch)},
            {"p_u", tm.p_u},
            {"tau_star", tm.tau_star},
            {"search_lo", tm.search_lo},
            {"search_hi", tm.search_hi}};
}

ThresholdModel threshold_from_json(const nlohmann::json& j) {
    ThresholdModel tm;
    tm.fit_match = fit_from_json(j.at("fit_match"));
    tm.fit_nonmatch = fit_from_json(j.at("fit_nonmatch"));
    tm.p_u = j.at("p_u").get<double>();
    tm.tau_star = j.at("tau_star").get<double>();
    tm.search_lo = j.at("search_lo").get<double>();
    tm.search_hi = j.at("search_hi").get<double>();
    if (!(tm.search_lo <= tm.tau_star && tm.tau_star <= tm.search_hi))
        throw FormatError("threshold must lie within its search interval", 0);
    return tm;
}

}  // namespace c2ae
