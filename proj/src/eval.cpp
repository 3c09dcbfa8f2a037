#include "c2ae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace c2ae {
namespace {

void check_scores(std::span<const double> scores, const char* what) {
    if (scores.empty()) throw ContractError(std::string(what) + " score list is empty");
    for (double s : scores)
        if (!std::isfinite(s)) throw ContractError(std::string(what) + " scores must be finite");
}

std::vector<double> min_conditioned_errors(const OpenSetModel& model, const LabeledDataset& data) {
    Tensor x = Tensor::from_data({data.size(), data.dim}, data.features);
    Tensor z = model.encode(x).detach();
    std::vector<double> best(data.size(), std::numeric_limits<double>::infinity());
    for (std::size_t c = 0; c < model.def.k; ++c) {
        const std::vector<int> labels(data.size(), static_cast<int>(c));
        Tensor cond = condition_batch(labels, model.def.k);
        Tensor recon = model.decode(film_modulate(z, model.film_scale.forward(cond),
                                                  model.film_shift.forward(cond)));
        const std::vector<double> err = rowwise_l1_distance(x, recon);
        for (std::size_t i = 0; i < data.size(); ++i) best[i] = std::min(best[i], err[i]);
    }
    return best;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

struct HistogramGrid {
    double lo = 0.0;
    double width = 1.0;
    std::vector<double> match_density;
    std::vector<double> nonmatch_density;
};

HistogramGrid build_histogram(const ErrorSets& errors, std::size_t bins) {
    if (bins == 0) throw ContractError("histogram needs at least one bin");
    if (errors.s_match.empty() || errors.s_nonmatch.empty())
        throw ContractError("histogram needs both error populations");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto* set : {&errors.s_match, &errors.s_nonmatch})
        for (double v : *set) {
            if (!std::isfinite(v) || v < 0.0)
                throw ContractError("reconstruction errors must be finite and non-negative");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi == lo) hi = lo + 1.0;

    HistogramGrid grid;
    grid.lo = lo;
    grid.width = (hi - lo) / static_cast<double>(bins);
    grid.match_density.assign(bins, 0.0);
    grid.nonmatch_density.assign(bins, 0.0);
    auto accumulate = [&](const std::vector<double>& vals, std::vector<double>& density) {
        for (double v : vals) {
            auto b = static_cast<std::size_t>((v - lo) / grid.width);
            density[std::min(b, bins - 1)] += 1.0;
        }
        const double norm = static_cast<double>(vals.size()) * grid.width;
        for (double& d : density) d /= norm;
    };
    accumulate(errors.s_match, grid.match_density);
    accumulate(errors.s_nonmatch, grid.nonmatch_density);
    return grid;
}

}  // namespace

void OpennessSpec::validate() const {
    if (n_train < 1) throw ContractError("training class count must be at least 1");
    if (n_target < 1 || n_test < n_target)
        throw ContractError("test classes must cover at least the target classes");
    if (2 * n_train > n_test + n_target)
        throw ContractError("more training classes than the openness ratio allows");
}

double openness(const OpennessSpec& spec) {
    spec.validate();
    const double ratio = 2.0 * static_cast<double>(spec.n_train) /
                         static_cast<double>(spec.n_test + spec.n_target);
    return 1.0 - std::sqrt(ratio);
}

double auroc(std::span<const double> scores_known, std::span<const double> scores_unknown,
             ScoreDirection direction) {
    check_scores(scores_known, "known");
    check_scores(scores_unknown, "unknown");

    // Positive group = the one expected to score higher under the direction.
    const bool unknown_positive = direction == ScoreDirection::higher_means_unknown;
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> pool;
    pool.reserve(scores_known.size() + scores_unknown.size());
    for (double s : scores_known) pool.push_back({s, !unknown_positive});
    for (double s : scores_unknown) pool.push_back({s, unknown_positive});
    std::sort(pool.begin(), pool.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // Midrank rank-sum; all terms are exact half-integers, so this matches an
    // exhaustive pairwise count bit for bit.
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < pool.size()) {
        std::size_t j = i;
        while (j + 1 < pool.size() && pool[j + 1].score == pool[i].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t t = i; t <= j; ++t)
            if (pool[t].positive) positive_rank_sum += midrank;
        i = j + 1;
    }
    const double n_pos =
        static_cast<double>(unknown_positive ? scores_unknown.size() : scores_known.size());
    const double n_neg =
        static_cast<double>(unknown_positive ? scores_known.size() : scores_unknown.size());
    const double u = positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    return u / (n_pos * n_neg);
}

EvalReport make_eval_report(std::span<const Decision> decisions, std::span<const int> truth,
                            double openness_value) {
    if (decisions.empty()) throw ContractError("cannot evaluate an empty prediction list");
    if (decisions.size() != truth.size())
        throw ContractError("predictions and ground truth differ in length");

    int cmax = -1;
    for (int t : truth) {
        if (t < kUnknownLabel) throw ContractError("ground truth must be a class or unknown");
        cmax = std::max(cmax, t);
    }
    for (const Decision& d : decisions)
        if (d.is_known) {
            if (d.label < 0) throw ContractError("known decisions must carry a class label");
            cmax = std::max(cmax, d.label);
        }

    EvalReport report;
    report.openness = openness_value;
    const std::size_t classes = static_cast<std::size_t>(cmax + 1);
    std::vector<std::size_t> support(classes, 0), tp(classes, 0), fp(classes, 0), fn(classes, 0);

    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const Decision& d = decisions[i];
        const int t = truth[i];
        if (t == kUnknownLabel) {
            if (d.is_known) {
                ++report.unknown_accepted;
                ++fp[static_cast<std::size_t>(d.label)];
            } else {
                ++report.unknown_rejected;
            }
            continue;
        }
        ++support[static_cast<std::size_t>(t)];
        if (!d.is_known) {
            ++report.known_rejected;
            ++fn[static_cast<std::size_t>(t)];
        } else if (d.label == t) {
            ++report.known_correct;
            ++tp[static_cast<std::size_t>(t)];
        } else {
            ++report.known_incorrect;
            ++fn[static_cast<std::size_t>(t)];
            ++fp[static_cast<std::size_t>(d.label)];
        }
    }

    double f_sum = 0.0;
    std::size_t f_count = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (support[c] == 0) continue;  // no ground truth: excluded from the average
        ClassMetrics m;
        m.class_index = static_cast<int>(c);
        m.support = support[c];
        const double tpd = static_cast<double>(tp[c]);
        const double denom_p = tpd + static_cast<double>(fp[c]);
        const double denom_r = tpd + static_cast<double>(fn[c]);
        m.precision = denom_p > 0.0 ? tpd / denom_p : 0.0;
        m.recall = denom_r > 0.0 ? tpd / denom_r : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        report.per_class.push_back(m);
        f_sum += m.f1;
        ++f_count;
    }
    if (f_count > 0) report.f_measure = f_sum / static_cast<double>(f_count);
    return report;
}

double open_f_measure(std::span<const OpenSetPrediction> predictions,
                      std::span<const int> truth) {
    std::vector<Decision> decisions;
    decisions.reserve(predictions.size());
    for (const OpenSetPrediction& p : predictions)
        decisions.push_back({p.is_known, p.is_known ? p.y_pred : kUnknownLabel});
    return make_eval_report(decisions, truth, 0.0).f_measure.value_or(0.0);
}

nlohmann::json eval_report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["auroc"] = report.auroc ? nlohmann::json(*report.auroc) : nlohmann::json(nullptr);
    j["f_measure"] = report.f_measure ? nlohmann::json(*report.f_measure) : nlohmann::json(nullptr);
    j["openness"] = report.openness;
    j["per_class"] = nlohmann::json::array();
    for (const ClassMetrics& m : report.per_class)
        j["per_class"].push_back({{"class", m.class_index},
                                  {"support", m.support},
                                  {"precision", m.precision},
                                  {"recall", m.recall},
                                  {"f1", m.f1}});
    j["counts"] = {{"known_correct", report.known_correct},
                   {"known_incorrect", report.known_incorrect},
                   {"known_rejected", report.known_rejected},
                   {"unknown_accepted", report.unknown_accepted},
                   {"unknown_rejected", report.unknown_rejected}};
    return j;
}

double run_auroc_protocol(const LabeledDataset& data, const NetworkDef& def,
                          const std::vector<int>& known_classes,
                          const std::vector<int>& unknown_classes, const TrainConfig& config,
                          std::size_t trials, double train_fraction) {
    if (trials == 0) throw ContractError("protocol needs at least one trial");
    def.validate();
    config.validate();
    if (def.k != known_classes.size())
        throw ContractError("network class count must match the known class set");

    double total = 0.0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::uint64_t seed = config.seed + trial;
        SplitSpec split_spec;
        split_spec.known_classes = known_classes;
        split_spec.unknown_classes = unknown_classes;
        split_spec.train_fraction = train_fraction;
        split_spec.seed = seed;
        OpenSetSplit split = split_known_unknown(data, split_spec);

        OpenSetModel model = OpenSetModel::init(def, seed);
        TrainConfig cfg = config;
        cfg.seed = seed;
        train_stage1(model, split.train_known, cfg);
        train_stage2(model, split.train_known, cfg);

        const std::vector<double> known_scores = min_conditioned_errors(model, split.test_known);
        const std::vector<double> unknown_scores =
            min_conditioned_errors(model, split.test_unknown);
        total += auroc(known_scores, unknown_scores, ScoreDirection::higher_means_unknown);
    }
    return total / static_cast<double>(trials);
}

BaselineDecision baseline_cls(const OpenSetModel& model, std::span<const double> x) {
    if (x.size() != model.def.input_dim())
        throw DimensionError("sample width does not match the network input");
    Tensor row = Tensor::from_data({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    ClosedSetOutput out = model.forward_closed(row);
    BaselineDecision d;
    d.y_pred = out.y_pred.front();
    d.score = out.probs.values()[static_cast<std::size_t>(d.y_pred)];
    d.is_known = !(d.score < 0.5);
    return d;
}

BaselineDecision baseline_cls_dec(const OpenSetModel& model, std::span<const double> x,
                                  double max_train_error) {
    if (!(max_train_error > 0.0) || !std::isfinite(max_train_error))
        throw ContractError("reconstruction baseline needs a positive calibration error");
    if (x.size() != model.def.input_dim())
        throw DimensionError("sample width does not match the network input");
    Tensor row = Tensor::from_data({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    ClosedSetOutput out = model.forward_closed(row);

    BaselineDecision d;
    d.y_pred = out.y_pred.front();
    Tensor cond = condition_batch(std::vector<int>{d.y_pred}, model.def.k);
    Tensor recon = model.decode(film_modulate(out.z.detach(), model.film_scale.forward(cond),
                                              model.film_shift.forward(cond)));
    d.score = rowwise_l1_distance(row, recon).front();
    d.is_known = !(d.score > 0.95 * max_train_error);
    return d;
}

double baseline_naive(const ErrorSets& errors, double p_u) {
    if (errors.s_match.empty() || errors.s_nonmatch.empty())
        throw ContractError("both error populations are required");
    if (!(p_u >= 0.0 && p_u <= 1.0)) throw ContractError("unknown prior must lie in [0, 1]");
    for (const auto* set : {&errors.s_match, &errors.s_nonmatch})
        for (double v : *set)
            if (!std::isfinite(v) || v < 0.0)
                throw ContractError("reconstruction errors must be finite and non-negative");

    std::vector<double> match(errors.s_match);
    std::vector<double> nonmatch(errors.s_nonmatch);
    std::sort(match.begin(), match.end());
    std::sort(nonmatch.begin(), nonmatch.end());

    const double lo = std::max(match.front(), nonmatch.front());
    const double hi = std::min(match.back(), nonmatch.back());
    if (lo > hi) return 0.5 * (lo + hi);  // disjoint populations: split the gap

    constexpr std::size_t kGrid = 1001;
    double best_tau = lo;
    double best_cost = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kGrid; ++i) {
        const double tau =
            lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kGrid - 1);
        const auto above = static_cast<double>(
            match.end() - std::upper_bound(match.begin(), match.end(), tau));
        const auto below = static_cast<double>(
            std::lower_bound(nonmatch.begin(), nonmatch.end(), tau) - nonmatch.begin());
        const double cost = (1.0 - p_u) * above + p_u * below;
        if (cost <= best_cost) {  // ties resolve to the largest candidate
            best_cost = cost;
            best_tau = tau;
        }
    }
    return best_tau;
}

std::string error_histogram_csv(const ErrorSets& errors, std::size_t bins) {
    HistogramGrid grid = build_histogram(errors, bins);
    std::string out = "bin_left,bin_right,match_density,nonmatch_density\n";
    for (std::size_t b = 0; b < bins; ++b) {
        const double left = grid.lo + grid.width * static_cast<double>(b);
        out += format_number(left);
        out += ',';
        out += format_number(left + grid.width);
        out += ',';
        out += format_number(grid.match_density[b]);
        out += ',';
        out += format_number(grid.nonmatch_density[b]);
        out += '\n';
    }
    return out;
}

std::string error_histogram_svg(const ErrorSets& errors, std::size_t bins) {
    HistogramGrid grid = build_histogram(errors, bins);
    const double peak = std::max(
        *std::max_element(grid.match_density.begin(), grid.match_density.end()),
        *std::max_element(grid.nonmatch_density.begin(), grid.nonmatch_density.end()));
    const double scale_y = peak > 0.0 ? 260.0 / peak : 0.0;
    const double bar = 720.0 / static_cast<double>(bins);

    std::string svg =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"320\" "
        "viewBox=\"0 0 800 320\">\n"
        "<rect width=\"800\" height=\"320\" fill=\"white\"/>\n";
    auto series = [&](const std::vector<double>& density, const char* color) {
        for (std::size_t b = 0; b < bins; ++b) {
            if (density[b] <= 0.0) continue;
            char buf[160];
            const double h = density[b] * scale_y;
            std::snprintf(buf, sizeof buf,
                          "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" "
                          "fill=\"%s\" fill-opacity=\"0.55\"/>\n",
                          40.0 + bar * static_cast<double>(b), 290.0 - h, bar, h, color);
            svg += buf;
        }
    };
    series(grid.match_density, "#3366cc");
    series(grid.nonmatch_density, "#cc4433");
    char labels[256];
    std::snprintf(labels, sizeof labels,
                  "<text x=\"40\" y=\"308\" font-family=\"sans-serif\" font-size=\"12\">"
                  "%.4g</text>\n"
                  "<text x=\"760\" y=\"308\" font-family=\"sans-serif\" font-size=\"12\" "
                  "text-anchor=\"end\">%.4g</text>\n",
                  grid.lo, grid.lo + grid.width * static_cast<double>(bins));
    svg += labels;
    svg +=
        "<text x=\"60\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" "
        "fill=\"#3366cc\">match</text>\n"
        "<text x=\"130\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" "
        "fill=\"#cc4433\">non-match</text>\n"
        "<line x1=\"40\" y1=\"290\" x2=\"760\" y2=\"290\" stroke=\"black\"/>\n"
        "<line x1=\"40\" y1=\"30\" x2=\"40\" y2=\"290\" stroke=\"black\"/>\n"
        "</svg>\n";
    return svg;
}

}  // namespace c2ae
