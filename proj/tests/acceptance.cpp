#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2ae/eval.hpp"
#include "testutil.hpp"

// End-to-end acceptance checks. Each case prints one verdict line; the
// heavier cases drive the real command-line binary and inspect its artifacts.

using namespace c2ae;
using nlohmann::json;
using testutil::read_file;
using testutil::TempDir;
using testutil::write_file;

namespace {

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void verdict(int number, bool ok, const std::string& detail) {
    std::printf("criterion %2d: %s  %s\n", number, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    CHECK_MESSAGE(ok, "criterion ", number, " failed: ", detail);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

testutil::RunResult run_cli(const std::string& args) {
    return testutil::run_shell(std::string(C2AE_CLI) + " " + args);
}

// ---------------------------------------------------------------- oracles --

// Inverse-CDF sampler for GPD(zeta, mu).
std::vector<double> sample_gpd(std::size_t n, double zeta, double mu, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> out(n);
    for (double& w : out) {
        const double u = rng.uniform();
        if (std::abs(zeta) < 1e-12)
            w = -mu * std::log1p(-u);
        else
            w = mu / zeta * (std::pow(1.0 - u, -zeta) - 1.0);
    }
    return out;
}

// Simpson integration of the GPD density, an independent check of the CDF.
double integrate_gpd_density(double w, double zeta, double mu) {
    const int n = 20000;  // even
    auto density = [&](double x) {
        if (std::abs(zeta) < 1e-12) return std::exp(-x / mu) / mu;
        return std::pow(1.0 + zeta * x / mu, -1.0 / zeta - 1.0) / mu;
    };
    const double h = w / n;
    double acc = density(0.0) + density(w);
    for (int i = 1; i < n; ++i) acc += density(i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// Exhaustive Mann-Whitney statistic over all (known, unknown) pairs.
double pairwise_auroc(std::span<const double> known, std::span<const double> unknown,
                      ScoreDirection direction) {
    double acc = 0.0;
    for (double u : unknown)
        for (double k : known) {
            const double hi = direction == ScoreDirection::higher_means_unknown ? u : k;
            const double lo = direction == ScoreDirection::higher_means_unknown ? k : u;
            if (hi > lo)
                acc += 1.0;
            else if (hi == lo)
                acc += 0.5;
        }
    return acc / (static_cast<double>(known.size()) * static_cast<double>(unknown.size()));
}

ErrorSets random_error_sets(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t n = 2000 + rng.below(2001);
    const double match_hi = rng.uniform(0.8, 1.4);
    const double nonmatch_lo = rng.uniform(0.4, 0.9) * match_hi;  // guaranteed overlap
    const double nonmatch_hi = nonmatch_lo + rng.uniform(1.0, 2.0);
    ErrorSets es;
    es.s_match.resize(n);
    es.s_nonmatch.resize(n);
    for (double& v : es.s_match) v = match_hi * rng.uniform();
    for (double& v : es.s_nonmatch) v = rng.uniform(nonmatch_lo, nonmatch_hi);
    return es;
}

// ------------------------------------------------------- shared pipelines --

const char* kToyConfig = R"({
  "seed": 7,
  "network": {
    "encoder": [2, 16, 8],
    "classifier": [8, 16, 2],
    "decoder": [8, 16, 2],
    "activation": "tanh",
    "k": 2,
    "latent_dim": 8
  },
  "train": {"alpha": 0.9, "lr": 0.0003, "batch_size": 64,
            "epochs_stage1": 200, "epochs_stage2": 200},
  "split": {"known_classes": [0, 1], "unknown_classes": [2, 3], "train_fraction": 0.8}
})";

const char* kDigitsConfig = R"({
  "seed": 7,
  "network": {
    "encoder": [64, 48, 24],
    "classifier": [24, 16, 6],
    "decoder": [24, 48, 64],
    "activation": "leaky_relu",
    "leaky_slope": 0.01,
    "k": 6,
    "latent_dim": 24
  },
  "train": {"alpha": 0.9, "lr": 0.001, "batch_size": 64,
            "epochs_stage1": 200, "epochs_stage2": 200},
  "split": {"known_classes": [0, 1, 2, 3, 4, 5], "unknown_classes": [6, 7, 8, 9],
            "train_fraction": 0.8}
})";

struct ToyArtifacts {
    TempDir dir{"c2ae-acc-toy"};
    std::string cfg = dir.file("cfg.json");
    std::string data = dir.file("d.csv");
    std::string model = dir.file("m.c2ae");
    std::string fitted = dir.file("mt.c2ae");
    std::string report = dir.file("r.json");
    std::string hist_svg = dir.file("h.svg");
    std::string hist_csv = dir.file("h.csv");
    double seconds = 0.0;
    bool ok = false;
};

// Full command-line pipeline on the four-cluster toy set; shared across the
// toy criteria so its runtime is paid once.
void run_toy_pipeline(ToyArtifacts& a) {
    Timer timer;
    write_file(a.cfg, kToyConfig);
    a.ok = run_cli("gen-toy --kind four-gauss --n 500 --seed 7 --out " + a.data).code == 0 &&
           run_cli("train --config " + a.cfg + " --data " + a.data + " --out " + a.model).code ==
               0 &&
           run_cli("fit-evt --model " + a.model + " --config " + a.cfg + " --data " + a.data +
                   " --pu 0.5 --out " + a.fitted)
                   .code == 0 &&
           run_cli("eval --model " + a.fitted + " --config " + a.cfg +
                   " --protocol fmeasure --data " + a.data + " --report " + a.report)
                   .code == 0 &&
           run_cli("plot-hist --model " + a.fitted + " --config " + a.cfg + " --data " + a.data +
                   " --out " + a.hist_svg + " --csv " + a.hist_csv)
                   .code == 0;
    a.seconds = timer.seconds();
}

ToyArtifacts& toy() {
    static ToyArtifacts artifacts;
    static const bool ran = [] {
        run_toy_pipeline(artifacts);
        return true;
    }();
    (void)ran;
    return artifacts;
}

struct DigitsArtifacts {
    TempDir dir{"c2ae-acc-digits"};
    std::string cfg = dir.file("cfg.json");
    std::string report = dir.file("r.json");
    std::string images = std::string(C2AE_TEST_DATA_DIR) + "/digits-images.idx3-ubyte";
    std::string labels = std::string(C2AE_TEST_DATA_DIR) + "/digits-labels.idx1-ubyte";
    double seconds = 0.0;
    bool ok = false;
};

void run_digits_protocol(DigitsArtifacts& a, const std::string& report_path) {
    a.ok = run_cli("eval --protocol auroc --config " + a.cfg + " --images " + a.images +
                   " --labels " + a.labels + " --trials 3 --report " + report_path)
               .code == 0;
}

DigitsArtifacts& digits() {
    static DigitsArtifacts artifacts;
    static const bool ran = [] {
        Timer timer;
        write_file(artifacts.cfg, kDigitsConfig);
        run_digits_protocol(artifacts, artifacts.report);
        artifacts.seconds = timer.seconds();
        return true;
    }();
    (void)ran;
    return artifacts;
}

struct HistRow {
    double left, right, match, nonmatch;
};

std::vector<HistRow> parse_hist_csv(const std::string& text) {
    std::vector<HistRow> rows;
    std::size_t pos = text.find('\n');  // skip header
    REQUIRE(pos != std::string::npos);
    while (pos + 1 < text.size()) {
        HistRow r{};
        const char* line = text.c_str() + pos + 1;
        if (std::sscanf(line, "%lf,%lf,%lf,%lf", &r.left, &r.right, &r.match, &r.nonmatch) != 4)
            break;
        rows.push_back(r);
        pos = text.find('\n', pos + 1);
        if (pos == std::string::npos) break;
    }
    return rows;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences on random networks") {
    Timer timer;
    const Act acts[] = {Act::sigmoid, Act::tanh, Act::leaky_relu};
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        Rng rng(4000 + i);
        NetworkDef def;
        const std::size_t din = 2 + rng.below(3);
        const std::size_t dh = 3 + rng.below(4);
        const std::size_t lat = 2 + rng.below(4);
        const std::size_t k = 2 + rng.below(3);
        def.encoder_widths = {din, dh, lat};
        def.classifier_widths = {lat, dh, k};
        def.decoder_widths = {lat, dh, din};
        def.k = k;
        def.latent_dim = lat;
        def.hidden = {acts[rng.below(3)], 0.01};
        OpenSetModel model = OpenSetModel::init(def, 4000 + i);

        const std::size_t n = 2 + rng.below(3);
        std::vector<double> xv(n * din);
        for (double& v : xv) v = rng.uniform(-0.8, 0.8);
        const Tensor x = Tensor::from_data({n, din}, xv);
        std::vector<int> ys(n), cond(n);
        for (int& y : ys) y = static_cast<int>(rng.below(k));
        for (int& c : cond) c = static_cast<int>(rng.below(k));

        // Reconstruction targets pushed away from the current outputs so the
        // difference probe never crosses an |.| kink.
        const Tensor y0 = model.reconstruct_conditioned(x, cond);
        std::vector<double> tv(y0.values().begin(), y0.values().end());
        for (double& t : tv) t += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.6);
        const Tensor target = Tensor::from_data({n, din}, tv);

        auto fwd = [&] {
            const Tensor ce = softmax_cross_entropy(model.classify(model.encode(x)), ys);
            const Tensor rec =
                l1_reconstruction_loss(target, model.reconstruct_conditioned(x, cond));
            return add(ce, rec);
        };
        std::vector<Tensor> params = model.all_params();
        worst = std::max(worst, testutil::gradcheck_max_rel_err(fwd, params));
    }
    const double elapsed = timer.seconds();
    verdict(1, worst < 1e-6 && elapsed < 60.0,
            fmt("gradient check, 50 random networks: max relative error %.2e (%.1fs)", worst,
                elapsed));
}

TEST_CASE("gpd cdf matches density integration and fits recover parameters") {
    Timer timer;

    const double zetas[] = {-0.4, -0.2, 0.0, 0.3, 0.8};
    const double mus[] = {0.3, 0.8, 1.5, 3.0};
    const double fracs[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    double worst_cdf = 0.0;
    int points = 0;
    for (double zeta : zetas)
        for (double mu : mus)
            for (double frac : fracs) {
                const double span = zeta < 0.0 ? -mu / zeta : 6.0 * mu;
                const double w = frac * span;
                worst_cdf =
                    std::max(worst_cdf,
                             std::abs(gpd_cdf(w, zeta, mu) - integrate_gpd_density(w, zeta, mu)));
                ++points;
            }
    REQUIRE(points == 100);

    struct Recovery {
        double zeta, mu;
        std::uint64_t seed;
    };
    double worst_zeta = 0.0, worst_mu_rel = 0.0;
    for (const Recovery& r : {Recovery{-0.2, 1.0, 4101}, Recovery{0.0, 2.0, 4102},
                              Recovery{0.3, 1.0, 4103}}) {
        const auto xs = sample_gpd(5000, r.zeta, r.mu, r.seed);
        const GpdFit fit = fit_gpd(xs, 0.0);
        worst_zeta = std::max(worst_zeta, std::abs(fit.zeta - r.zeta));
        worst_mu_rel = std::max(worst_mu_rel, std::abs(fit.mu - r.mu) / r.mu);
    }

    const double elapsed = timer.seconds();
    verdict(2,
            worst_cdf <= 1e-6 && worst_zeta <= 0.1 && worst_mu_rel <= 0.10 && elapsed < 60.0,
            fmt("gpd: cdf vs integration %.2e on 100 points; recovery off by %.3f shape, "
                "%.1f%% scale (%.1fs)",
                worst_cdf, worst_zeta, 100.0 * worst_mu_rel, elapsed));
}

TEST_CASE("threshold search is grid-optimal, boundary-exact, prior-monotone") {
    Timer timer;
    bool optimal = true, boundaries = true, monotone = true;
    for (int i = 0; i < 20; ++i) {
        const ErrorSets es = random_error_sets(4200 + i);

        const ThresholdModel mid = compute_threshold(es, 0.5);
        auto objective = [&](double tau) {
            return 0.5 * prob_match_error_above(mid, tau) +
                   0.5 * prob_nonmatch_error_below(mid, tau);
        };
        const double best = objective(mid.tau_star);
        for (int g = 0; g <= 1000; ++g) {
            const double tau = mid.search_lo + (mid.search_hi - mid.search_lo) * g / 1000.0;
            if (!(best <= objective(tau) + 1e-12)) optimal = false;
        }

        const ThresholdModel at_zero = compute_threshold(es, 0.0);
        const ThresholdModel at_one = compute_threshold(es, 1.0);
        if (std::abs(at_zero.tau_star - at_zero.search_hi) >
            1e-12 * std::max(1.0, std::abs(at_zero.search_hi)))
            boundaries = false;
        if (at_one.tau_star != at_one.search_lo) boundaries = false;

        double prev = at_zero.tau_star;
        for (double p_u : {0.25, 0.5, 0.75}) {
            const double tau = compute_threshold(es, p_u).tau_star;
            if (!(tau <= prev + 1e-12)) monotone = false;
            prev = tau;
        }
        if (!(at_one.tau_star <= prev + 1e-12)) monotone = false;
    }
    const double elapsed = timer.seconds();
    verdict(3, optimal && boundaries && monotone && elapsed < 60.0,
            fmt("threshold search on 20 random error sets: grid-optimal %s, boundaries %s, "
                "monotone %s (%.1fs)",
                optimal ? "yes" : "no", boundaries ? "yes" : "no", monotone ? "yes" : "no",
                elapsed));
}

TEST_CASE("fast auroc equals the exhaustive pairwise statistic") {
    Timer timer;
    Rng rng(4300);
    bool exact = true;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t nk = 1 + rng.below(500);
        const std::size_t nu = 1 + rng.below(500);
        const bool quantize = trial % 2 == 0;  // forces heavy ties on half the trials
        std::vector<double> known(nk), unknown(nu);
        for (double& v : known) v = quantize ? std::round(rng.uniform() * 100.0) / 100.0
                                             : rng.uniform();
        for (double& v : unknown)
            v = quantize ? std::round(rng.uniform(0.2, 1.2) * 100.0) / 100.0
                         : rng.uniform(0.2, 1.2);
        const ScoreDirection dir = trial % 4 < 2 ? ScoreDirection::higher_means_unknown
                                                 : ScoreDirection::higher_means_known;
        if (auroc(known, unknown, dir) != pairwise_auroc(known, unknown, dir)) exact = false;
    }
    const double elapsed = timer.seconds();
    verdict(4, exact && elapsed < 60.0,
            fmt("auroc vs pairwise oracle on 100 random score pairs: %s (%.1fs)",
                exact ? "all bit-equal" : "MISMATCH", elapsed));
}

TEST_CASE("openness reproduces published benchmark figures") {
    struct Case {
        OpennessSpec spec;
        double printed;  // percent, as printed in the literature (truncated)
    };
    const Case cases[] = {
        {{6, 10, 6}, 13.39},
        {{4, 14, 4}, 33.33},
        {{4, 54, 4}, 62.86},
        {{20, 200, 20}, 57.35},
    };
    bool ok = true;
    double worst = 0.0;
    for (const Case& c : cases) {
        const double diff = std::abs(100.0 * openness(c.spec) - c.printed);
        worst = std::max(worst, diff);
        if (!(diff <= 0.01 + 1e-12)) ok = false;
    }
    verdict(5, ok, fmt("openness values match to two decimals: worst gap %.4f%%", worst));
}

TEST_CASE("toy pipeline clears accuracy, auroc, and rejection targets") {
    const ToyArtifacts& a = toy();
    REQUIRE(a.ok);

    const json r = json::parse(read_file(a.report));
    const double rec_auroc = r["auroc"].get<double>();
    const auto& c = r["counts"];
    const double kc = c["known_correct"].get<double>();
    const double ki = c["known_incorrect"].get<double>();
    const double kr = c["known_rejected"].get<double>();
    const double ua = c["unknown_accepted"].get<double>();
    const double ur = c["unknown_rejected"].get<double>();
    const double known_acceptance = (kc + ki) / (kc + ki + kr);
    const double unknown_rejection = ur / (ua + ur);

    // Closed-set accuracy on the held-out knowns, recomputed from the saved
    // checkpoint with the same split the pipeline used.
    const OpenSetModel model = load_checkpoint(a.fitted);
    SplitSpec sp;
    sp.known_classes = {0, 1};
    sp.unknown_classes = {2, 3};
    sp.seed = 7;
    const OpenSetSplit split = split_known_unknown(load_csv(a.data), sp);
    const Tensor x = Tensor::from_data({split.test_known.size(), split.test_known.dim},
                                       split.test_known.features);
    const ClosedSetOutput closed = model.forward_closed(x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < closed.y_pred.size(); ++i)
        if (closed.y_pred[i] == split.test_known.labels[i]) ++hits;
    const double accuracy = static_cast<double>(hits) / closed.y_pred.size();

    verdict(6,
            accuracy >= 0.95 && rec_auroc >= 0.95 && unknown_rejection >= 0.90 &&
                known_acceptance >= 0.90 && a.seconds < 300.0,
            fmt("toy pipeline: accuracy %.3f, auroc %.3f, unknown rejection %.3f, known "
                "acceptance %.3f (%.1fs)",
                accuracy, rec_auroc, unknown_rejection, known_acceptance, a.seconds));
}

TEST_CASE("matched and mismatched error histograms barely overlap") {
    const ToyArtifacts& a = toy();
    REQUIRE(a.ok);

    const std::vector<HistRow> rows = parse_hist_csv(read_file(a.hist_csv));
    REQUIRE(!rows.empty());
    double mass_m = 0.0, mass_nm = 0.0, mean_m = 0.0, mean_nm = 0.0, overlap = 0.0;
    for (const HistRow& r : rows) {
        const double width = r.right - r.left;
        const double center = 0.5 * (r.left + r.right);
        mass_m += r.match * width;
        mass_nm += r.nonmatch * width;
        mean_m += r.match * width * center;
        mean_nm += r.nonmatch * width * center;
        overlap += std::min(r.match, r.nonmatch) * width;
    }
    mean_m /= mass_m;
    mean_nm /= mass_nm;

    verdict(7, mean_m < mean_nm && overlap < 0.25,
            fmt("error separation: match mean %.3f vs non-match mean %.3f, overlap "
                "coefficient %.3f",
                mean_m, mean_nm, overlap));
}

TEST_CASE("reduced-scale digit protocol reaches the auroc target") {
    const DigitsArtifacts& a = digits();
    REQUIRE(a.ok);
    const json r = json::parse(read_file(a.report));
    const double mean_auroc = r["auroc"].get<double>();
    verdict(8, mean_auroc >= 0.92 && a.seconds < 900.0,
            fmt("digit analogue, 6 known / 4 unknown, 3 trials: mean auroc %.4f (%.1fs)",
                mean_auroc, a.seconds));
}

TEST_CASE("calibrated threshold beats naive counting beats plain softmax") {
    Timer timer;
    NetworkDef def;
    def.encoder_widths = {2, 16, 8};
    def.classifier_widths = {8, 16, 2};
    def.decoder_widths = {8, 16, 2};
    def.k = 2;
    def.latent_dim = 8;
    def.hidden = {Act::tanh, 0.01};

    const LabeledDataset data = gen_toy(ToyKind::four_gauss, 500, 7);
    const std::vector<std::vector<int>> unknown_levels = {{}, {2}, {2, 3}};
    std::vector<double> mean_prop(unknown_levels.size(), 0.0);
    std::vector<double> mean_naive(unknown_levels.size(), 0.0);
    std::vector<double> mean_cls(unknown_levels.size(), 0.0);

    for (std::uint64_t seed : {7ULL, 8ULL, 9ULL}) {
        for (std::size_t level = 0; level < unknown_levels.size(); ++level) {
            SplitSpec sp;
            sp.known_classes = {0, 1};
            sp.unknown_classes = unknown_levels[level];
            sp.seed = seed;
            const OpenSetSplit split = split_known_unknown(data, sp);

            TrainConfig cfg;
            cfg.seed = seed;
            cfg.epochs_stage1 = 200;
            cfg.epochs_stage2 = 200;
            OpenSetModel model = OpenSetModel::init(def, seed);
            train_stage1(model, split.train_known, cfg);
            train_stage2(model, split.train_known, cfg);
            Rng rng(seed + 3);
            const ErrorSets es = collect_error_sets(model, split.train_known, rng);

            const OpennessSpec os{2, 2 + unknown_levels[level].size(), 2};
            const double pu = 0.5 * openness(os);
            model.threshold = compute_threshold(es, pu);
            const double tau_naive = baseline_naive(es, pu);

            std::vector<double> flat = split.test_known.features;
            std::vector<int> truth = split.test_known.labels;
            flat.insert(flat.end(), split.test_unknown.features.begin(),
                        split.test_unknown.features.end());
            truth.insert(truth.end(), split.test_unknown.size(), kUnknownLabel);
            const Tensor x = Tensor::from_data({truth.size(), 2}, flat);

            mean_prop[level] += open_f_measure(batch_inference(model, x), truth) / 3.0;

            OpenSetModel naive_model = model;
            naive_model.threshold->tau_star = tau_naive;
            mean_naive[level] += open_f_measure(batch_inference(naive_model, x), truth) / 3.0;

            std::vector<Decision> cls(truth.size());
            for (std::size_t i = 0; i < truth.size(); ++i) {
                const BaselineDecision b = baseline_cls(model, x.values().subspan(i * 2, 2));
                cls[i] = {b.is_known, b.is_known ? b.y_pred : kUnknownLabel};
            }
            mean_cls[level] += make_eval_report(cls, truth, 0.0).f_measure.value_or(0.0) / 3.0;
        }
    }

    const std::size_t top = unknown_levels.size() - 1;
    const double elapsed = timer.seconds();
    verdict(9,
            mean_prop[top] >= mean_naive[top] && mean_naive[top] >= mean_cls[top] &&
                elapsed < 600.0,
            fmt("ablation at highest openness: calibrated %.3f >= naive %.3f >= softmax %.3f "
                "(%.1fs)",
                mean_prop[top], mean_naive[top], mean_cls[top], elapsed));
}

TEST_CASE("identical seeds reproduce checkpoints and reports byte for byte") {
    const ToyArtifacts& first = toy();
    const DigitsArtifacts& dig = digits();
    REQUIRE(first.ok);
    REQUIRE(dig.ok);

    ToyArtifacts second;
    run_toy_pipeline(second);
    REQUIRE(second.ok);
    const bool toy_same = read_file(first.data) == read_file(second.data) &&
                          read_file(first.model) == read_file(second.model) &&
                          read_file(first.fitted) == read_file(second.fitted) &&
                          read_file(first.report) == read_file(second.report);

    DigitsArtifacts& d = digits();
    const std::string rerun = d.dir.file("r2.json");
    run_digits_protocol(d, rerun);
    REQUIRE(d.ok);
    const bool digits_same = read_file(d.report) == read_file(rerun);

    verdict(10, toy_same && digits_same,
            fmt("determinism: toy artifacts %s, digit report %s",
                toy_same ? "identical" : "DIFFER", digits_same ? "identical" : "DIFFERS"));
}
