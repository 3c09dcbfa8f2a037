#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "c2ae/eval.hpp"

namespace {

using namespace c2ae;

// A flag/config combination the program cannot act on. Exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Early exit with a fixed code and a one-line diagnostic.
struct ExitWith {
    int code;
    std::string message;
};

struct CommonOpts {
    std::string config_path;
    std::string data_csv;
    std::string images_path;
    std::string labels_path;
    std::optional<std::uint64_t> seed;
};

nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    return nlohmann::json::parse(in);
}

std::uint64_t resolve_seed(const CommonOpts& opts, const nlohmann::json& cfg) {
    if (opts.seed) return *opts.seed;
    if (cfg.contains("seed")) return cfg["seed"].get<std::uint64_t>();
    if (const char* env = std::getenv("C2AE_SEED")) {
        std::uint64_t v = 0;
        const char* end = env + std::string_view(env).size();
        auto [p, ec] = std::from_chars(env, end, v);
        if (ec != std::errc{} || p != end)
            throw UsageError("C2AE_SEED must be an unsigned integer");
        return v;
    }
    return 0;
}

TrainConfig resolve_train(const nlohmann::json& cfg, std::uint64_t global_seed) {
    const nlohmann::json section = cfg.value("train", nlohmann::json::object());
    TrainConfig tc = train_config_from_json(section);
    if (!section.contains("seed")) tc.seed = global_seed;
    return tc;
}

std::optional<SplitSpec> resolve_split(const nlohmann::json& cfg, std::uint64_t global_seed) {
    if (!cfg.contains("split")) return std::nullopt;
    const nlohmann::json& j = cfg["split"];
    if (!j.contains("known_classes"))
        throw UsageError("split config needs a known_classes list");
    SplitSpec sp;
    sp.known_classes = j["known_classes"].get<std::vector<int>>();
    sp.unknown_classes = j.value("unknown_classes", std::vector<int>{});
    sp.train_fraction = j.value("train_fraction", 0.8);
    sp.seed = j.contains("seed") ? j["seed"].get<std::uint64_t>() : global_seed;
    return sp;
}

ToyKind parse_kind(std::string name) {
    std::replace(name.begin(), name.end(), '-', '_');
    try {
        return toy_kind_from_name(name);
    } catch (const Error&) {
        throw UsageError("unknown toy kind: " + name);
    }
}

LabeledDataset resolve_dataset(const CommonOpts& opts, const nlohmann::json& cfg,
                               std::uint64_t global_seed) {
    if (!opts.data_csv.empty()) return load_csv(opts.data_csv);
    if (!opts.images_path.empty() || !opts.labels_path.empty()) {
        if (opts.images_path.empty() || opts.labels_path.empty())
            throw UsageError("--images and --labels must be passed together");
        return load_idx(opts.images_path, opts.labels_path);
    }
    if (cfg.contains("data")) {
        const nlohmann::json& j = cfg["data"];
        if (j.contains("csv")) return load_csv(j["csv"].get<std::string>());
        if (j.contains("idx_images")) {
            if (!j.contains("idx_labels"))
                throw UsageError("data config needs idx_labels next to idx_images");
            return load_idx(j["idx_images"].get<std::string>(),
                            j["idx_labels"].get<std::string>());
        }
        if (j.contains("toy")) {
            const nlohmann::json& t = j["toy"];
            const std::uint64_t seed =
                t.contains("seed") ? t["seed"].get<std::uint64_t>() : global_seed;
            return gen_toy(parse_kind(t.value("kind", std::string("four_gauss"))),
                           t.value("n", std::size_t{500}), seed, t.value("sigma", 0.2));
        }
    }
    throw UsageError("no dataset source: pass --data, --images/--labels, or a data config entry");
}

NetworkDef default_network(std::size_t input_dim, std::size_t k) {
    const std::size_t latent = std::clamp<std::size_t>(input_dim / 4, 4, 16);
    const std::size_t hidden = 2 * latent;
    NetworkDef def;
    def.encoder_widths = {input_dim, hidden, latent};
    def.classifier_widths = {latent, hidden, k};
    def.decoder_widths = {latent, hidden, input_dim};
    def.k = k;
    def.latent_dim = latent;
    def.hidden = {Act::tanh, 0.01};
    return def;
}

NetworkDef resolve_network(const nlohmann::json& cfg, std::size_t input_dim, std::size_t k) {
    if (cfg.contains("network")) {
        NetworkDef def = network_def_from_json(cfg["network"]);
        def.validate();
        return def;
    }
    return default_network(input_dim, k);
}

double resolve_pu(const nlohmann::json& cfg, const std::optional<double>& pu_flag,
                  bool openness_scaled_flag, const std::optional<SplitSpec>& split) {
    std::string mode = "fixed";
    double value = 0.5;
    if (cfg.contains("pu")) {
        mode = cfg["pu"].value("mode", std::string("fixed"));
        value = cfg["pu"].value("value", 0.5);
    }
    if (pu_flag) {
        mode = "fixed";
        value = *pu_flag;
    }
    if (openness_scaled_flag) mode = "openness_scaled";

    if (mode == "fixed") {
        if (!(value >= 0.0 && value <= 1.0)) throw UsageError("pu must lie in [0, 1]");
        return value;
    }
    if (mode != "openness_scaled") throw UsageError("unknown pu mode: " + mode);
    if (!split || split->unknown_classes.empty())
        throw UsageError("openness-scaled pu needs a split config with unknown classes");
    OpennessSpec os;
    os.n_train = split->known_classes.size();
    os.n_test = split->known_classes.size() + split->unknown_classes.size();
    os.n_target = split->known_classes.size();
    return 0.5 * openness(os);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + path);
    out << content;
    if (!out) throw Error("failed writing: " + path);
}

void require_threshold(const OpenSetModel& model) {
    if (!model.threshold.has_value())
        throw ExitWith{3, "threshold not fitted (run fit-evt first)"};
}

// Feature matrix reader for inference inputs: accepts the labeled dataset
// layout or a plain x0..x{D-1} table; any label column is ignored.
std::pair<std::vector<double>, std::size_t> read_feature_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open input: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty input file", 0);

    std::vector<std::string> header;
    std::stringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) header.push_back(tok);
    const bool labeled = !header.empty() && header.back() == "label";
    const std::size_t dim = header.size() - (labeled ? 1 : 0);
    if (dim == 0) throw FormatError("input has no feature columns", 1);

    std::vector<double> flat;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::size_t col = 0;
        while (std::getline(ls, tok, ',')) {
            if (col < dim) {
                double v = 0.0;
                auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
                if (ec != std::errc{} || p != tok.data() + tok.size())
                    throw FormatError("bad number in input row", line_no);
                flat.push_back(v);
            }
            ++col;
        }
        if (col != header.size()) throw FormatError("ragged input row", line_no);
    }
    if (flat.empty()) throw FormatError("input has no samples", line_no);
    return {std::move(flat), dim};
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int cmd_gen_toy(const std::string& kind, std::size_t n, double sigma, const std::string& out,
                const CommonOpts& opts) {
    const std::uint64_t seed = resolve_seed(opts, nlohmann::json::object());
    LabeledDataset data = gen_toy(parse_kind(kind), n, seed, sigma);
    save_csv(data, out);
    std::cout << "wrote " << out << " (" << data.size() << " samples, " << data.class_count
              << " classes)\n";
    return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& out) {
    const nlohmann::json cfg = load_config_file(opts.config_path);
    const std::uint64_t seed = resolve_seed(opts, cfg);
    LabeledDataset data = resolve_dataset(opts, cfg, seed);
    const std::optional<SplitSpec> split = resolve_split(cfg, seed);
    if (split) data = split_known_unknown(data, *split).train_known;

    const NetworkDef def = resolve_network(cfg, data.dim, data.class_count);
    TrainConfig tc = resolve_train(cfg, seed);
    OpenSetModel model = OpenSetModel::init(def, tc.seed);

    const std::vector<double> closed_trace = train_stage1(model, data, tc);
    const Stage2Trace cond_trace = train_stage2(model, data, tc);
    save_checkpoint(model, out);

    std::cout << "stage1 loss " << format_double(closed_trace.front()) << " -> "
              << format_double(closed_trace.back()) << "\n";
    std::cout << "stage2 match loss " << format_double(cond_trace.match_loss.front()) << " -> "
              << format_double(cond_trace.match_loss.back()) << "\n";
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_fit_evt(const CommonOpts& opts, const std::string& model_path, const std::string& out,
                const std::optional<double>& pu_flag, bool openness_scaled) {
    const nlohmann::json cfg = load_config_file(opts.config_path);
    const std::uint64_t seed = resolve_seed(opts, cfg);
    const std::optional<SplitSpec> split = resolve_split(cfg, seed);
    const double pu = resolve_pu(cfg, pu_flag, openness_scaled, split);

    OpenSetModel model = load_checkpoint(model_path);
    LabeledDataset data = resolve_dataset(opts, cfg, seed);
    if (split) data = split_known_unknown(data, *split).train_known;
    Rng rng(seed + 3);
    const ErrorSets errors = collect_error_sets(model, data, rng);
    model.threshold = compute_threshold(errors, pu);
    save_checkpoint(model, out);

    std::cout << "p_u " << format_double(pu) << "\n";
    std::cout << "tau_star " << format_double(model.threshold->tau_star) << "\n";
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& model_path, const std::string& protocol,
             const std::string& report_path, const std::optional<std::size_t>& trials_flag) {
    const nlohmann::json cfg = load_config_file(opts.config_path);
    const std::uint64_t seed = resolve_seed(opts, cfg);
    LabeledDataset data = resolve_dataset(opts, cfg, seed);
    const std::optional<SplitSpec> split = resolve_split(cfg, seed);

    EvalReport report;
    if (protocol == "auroc") {
        if (!split || split->unknown_classes.empty())
            throw UsageError("the auroc protocol needs a split config with unknown classes");
        NetworkDef def = model_path.empty()
                             ? resolve_network(cfg, data.dim, split->known_classes.size())
                             : load_checkpoint(model_path).def;
        if (def.k != split->known_classes.size())
            throw UsageError("network class count must match the known class list");
        TrainConfig tc = resolve_train(cfg, seed);
        const std::size_t trials =
            trials_flag ? *trials_flag : cfg.value("trials", std::size_t{1});
        report.auroc = run_auroc_protocol(data, def, split->known_classes,
                                          split->unknown_classes, tc, trials,
                                          split->train_fraction);
        OpennessSpec os;
        os.n_train = split->known_classes.size();
        os.n_test = split->known_classes.size() + split->unknown_classes.size();
        os.n_target = split->known_classes.size();
        report.openness = openness(os);
        std::cout << "auroc " << format_double(*report.auroc) << "\n";
    } else if (protocol == "fmeasure") {
        if (model_path.empty()) throw UsageError("the fmeasure protocol needs --model");
        OpenSetModel model = load_checkpoint(model_path);
        require_threshold(model);

        std::vector<double> flat;
        std::vector<int> truth;
        double openness_value = 0.0;
        if (split) {
            OpenSetSplit s = split_known_unknown(data, *split);
            flat = s.test_known.features;
            truth = s.test_known.labels;
            flat.insert(flat.end(), s.test_unknown.features.begin(),
                        s.test_unknown.features.end());
            truth.insert(truth.end(), s.test_unknown.size(), kUnknownLabel);
            if (!split->unknown_classes.empty()) {
                OpennessSpec os;
                os.n_train = split->known_classes.size();
                os.n_test = split->known_classes.size() + split->unknown_classes.size();
                os.n_target = split->known_classes.size();
                openness_value = openness(os);
            }
        } else {
            flat = data.features;
            truth.reserve(data.size());
            std::set<int> distinct;
            for (int y : data.labels) {
                distinct.insert(y);
                truth.push_back(static_cast<std::size_t>(y) < model.def.k ? y : kUnknownLabel);
            }
            OpennessSpec os;
            os.n_train = model.def.k;
            os.n_test = std::max(model.def.k, distinct.size());
            os.n_target = model.def.k;
            openness_value = openness(os);
        }

        const std::size_t n = truth.size();
        const auto preds =
            batch_inference(model, Tensor::from_data({n, data.dim}, flat));
        std::vector<Decision> decisions;
        decisions.reserve(n);
        for (const OpenSetPrediction& p : preds)
            decisions.push_back({p.is_known, p.is_known ? p.y_pred : kUnknownLabel});
        report = make_eval_report(decisions, truth, openness_value);

        std::vector<double> known_scores;
        std::vector<double> unknown_scores;
        for (std::size_t i = 0; i < n; ++i)
            (truth[i] == kUnknownLabel ? unknown_scores : known_scores)
                .push_back(preds[i].min_error);
        if (!known_scores.empty() && !unknown_scores.empty())
            report.auroc =
                auroc(known_scores, unknown_scores, ScoreDirection::higher_means_unknown);
        if (report.f_measure)
            std::cout << "f_measure " << format_double(*report.f_measure) << "\n";
    } else {
        throw UsageError("unknown protocol: " + protocol + " (expected auroc or fmeasure)");
    }

    write_text_file(report_path, eval_report_to_json(report).dump(2) + "\n");
    std::cout << "wrote " << report_path << "\n";
    return 0;
}

int cmd_infer(const std::string& model_path, const std::string& input_path) {
    OpenSetModel model = load_checkpoint(model_path);
    require_threshold(model);
    auto [flat, dim] = read_feature_csv(input_path);
    const auto preds =
        batch_inference(model, Tensor::from_data({flat.size() / dim, dim}, flat));
    for (const OpenSetPrediction& p : preds) std::cout << prediction_to_json(p).dump() << "\n";
    return 0;
}

int cmd_plot_hist(const CommonOpts& opts, const std::string& model_path, const std::string& svg_out,
                  const std::string& csv_out, std::size_t bins) {
    const nlohmann::json cfg = load_config_file(opts.config_path);
    const std::uint64_t seed = resolve_seed(opts, cfg);
    OpenSetModel model = load_checkpoint(model_path);
    LabeledDataset data = resolve_dataset(opts, cfg, seed);
    const std::optional<SplitSpec> split = resolve_split(cfg, seed);
    if (split) data = split_known_unknown(data, *split).train_known;

    Rng rng(seed + 3);
    const ErrorSets errors = collect_error_sets(model, data, rng);
    write_text_file(svg_out, error_histogram_svg(errors, bins));
    std::cout << "wrote " << svg_out << "\n";
    if (!csv_out.empty()) {
        write_text_file(csv_out, error_histogram_csv(errors, bins));
        std::cout << "wrote " << csv_out << "\n";
    }
    return 0;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_data = true) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration");
    cmd->add_option("--seed", opts.seed, "seed override (falls back to config, then C2AE_SEED)");
    if (with_data) {
        cmd->add_option("--data", opts.data_csv, "dataset CSV");
        cmd->add_option("--images", opts.images_path, "IDX image file");
        cmd->add_option("--labels", opts.labels_path, "IDX label file");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Class-conditioned auto-encoder open-set recognition toolkit"};
    app.require_subcommand(1);

    CommonOpts gen_opts;
    std::string gen_kind;
    std::size_t gen_n = 500;
    double gen_sigma = 0.2;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-toy", "Generate a toy dataset CSV");
    gen->add_option("--kind", gen_kind, "two-gauss | four-gauss | uni-gauss")->required();
    gen->add_option("--n", gen_n, "samples per class");
    gen->add_option("--sigma", gen_sigma, "cluster spread");
    gen->add_option("--out", gen_out, "output CSV path")->required();
    add_common(gen, gen_opts, false);

    CommonOpts train_opts;
    std::string train_out;
    auto* train = app.add_subcommand("train", "Train the closed-set stage then the conditioned decoder");
    train->add_option("--out", train_out, "checkpoint output path")->required();
    add_common(train, train_opts);

    CommonOpts fit_opts;
    std::string fit_model, fit_out;
    std::optional<double> fit_pu;
    bool fit_openness_scaled = false;
    auto* fit = app.add_subcommand("fit-evt", "Fit error tails and pick the decision threshold");
    fit->add_option("--model", fit_model, "trained checkpoint")->required();
    fit->add_option("--out", fit_out, "checkpoint output path")->required();
    fit->add_option("--pu", fit_pu, "fixed prior probability of unknowns");
    fit->add_flag("--openness-scaled", fit_openness_scaled, "set the prior to half the openness");
    add_common(fit, fit_opts);

    CommonOpts eval_opts;
    std::string eval_model, eval_protocol, eval_report;
    std::optional<std::size_t> eval_trials;
    auto* evalc = app.add_subcommand("eval", "Run an evaluation protocol and write a report");
    evalc->add_option("--model", eval_model, "checkpoint (architecture source or scorer)");
    evalc->add_option("--protocol", eval_protocol, "auroc | fmeasure")->required();
    evalc->add_option("--report", eval_report, "report JSON output path")->required();
    evalc->add_option("--trials", eval_trials, "randomized trials for the auroc protocol");
    add_common(evalc, eval_opts);

    std::string infer_model, infer_input;
    auto* infer = app.add_subcommand("infer", "Per-sample open-set predictions as JSON lines");
    infer->add_option("--model", infer_model, "checkpoint with a fitted threshold")->required();
    infer->add_option("--input", infer_input, "feature CSV")->required();

    CommonOpts plot_opts;
    std::string plot_model, plot_svg, plot_csv;
    std::size_t plot_bins = 50;
    auto* plot = app.add_subcommand("plot-hist", "Reconstruction-error histograms (SVG + CSV)");
    plot->add_option("--model", plot_model, "trained checkpoint")->required();
    plot->add_option("--out", plot_svg, "SVG output path")->required();
    plot->add_option("--csv", plot_csv, "density CSV output path");
    plot->add_option("--bins", plot_bins, "histogram bins");
    add_common(plot, plot_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_toy(gen_kind, gen_n, gen_sigma, gen_out, gen_opts);
        if (train->parsed()) return cmd_train(train_opts, train_out);
        if (fit->parsed())
            return cmd_fit_evt(fit_opts, fit_model, fit_out, fit_pu, fit_openness_scaled);
        if (evalc->parsed())
            return cmd_eval(eval_opts, eval_model, eval_protocol, eval_report, eval_trials);
        if (infer->parsed()) return cmd_infer(infer_model, infer_input);
        if (plot->parsed())
            return cmd_plot_hist(plot_opts, plot_model, plot_svg, plot_csv, plot_bins);
        std::cerr << "error: no command given\n\n" << app.help();
        return 1;
    } catch (const ExitWith& e) {
        std::cerr << "error: " << e.message << "\n";
        return e.code;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const InsufficientDataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const InsufficientTailError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
