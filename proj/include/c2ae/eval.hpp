#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2ae/infer.hpp"
#include "c2ae/train.hpp"

namespace c2ae {

// Ground-truth label for samples whose true class is outside the known set.
inline constexpr int kUnknownLabel = -1;

struct OpennessSpec {
    std::size_t n_train = 1;   // classes seen in training
    std::size_t n_test = 1;    // classes present at test time
    std::size_t n_target = 1;  // classes to recognize

    void validate() const;
};

double openness(const OpennessSpec& spec);

enum class ScoreDirection { higher_means_known, higher_means_unknown };

// Mann-Whitney statistic: fraction of (known, unknown) pairs ordered the way
// the direction flag says they should be, ties counted half.
double auroc(std::span<const double> scores_known, std::span<const double> scores_unknown,
             ScoreDirection direction);

struct Decision {
    bool is_known = false;
    int label = kUnknownLabel;
};

struct ClassMetrics {
    int class_index = 0;
    std::size_t support = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    std::optional<double> auroc;
    std::optional<double> f_measure;
    double openness = 0.0;
    std::vector<ClassMetrics> per_class;  // known classes with ground-truth support
    std::size_t known_correct = 0;
    std::size_t known_incorrect = 0;
    std::size_t known_rejected = 0;
    std::size_t unknown_accepted = 0;
    std::size_t unknown_rejected = 0;
};

// Confusion counts plus macro-F1 over the known classes that actually appear
// in the ground truth. A sample accepted under any wrong class is a false
// positive for that class; unknown-acceptances included.
EvalReport make_eval_report(std::span<const Decision> decisions, std::span<const int> truth,
                            double openness_value);

double open_f_measure(std::span<const OpenSetPrediction> predictions, std::span<const int> truth);

nlohmann::json eval_report_to_json(const EvalReport& report);

// Repeated randomized open-set runs: split, train both stages, score every
// test sample by its smallest conditioned reconstruction error, and average
// the resulting AUROC over trials. Trial t derives all its seeds from
// config.seed + t.
double run_auroc_protocol(const LabeledDataset& data, const NetworkDef& def,
                          const std::vector<int>& known_classes,
                          const std::vector<int>& unknown_classes, const TrainConfig& config,
                          std::size_t trials, double train_fraction = 0.8);

struct BaselineDecision {
    bool is_known = false;
    int y_pred = 0;
    double score = 0.0;
};

// Rejects when the top softmax probability drops below one half.
BaselineDecision baseline_cls(const OpenSetModel& model, std::span<const double> x);

// Rejects when the reconstruction under the predicted class exceeds 95% of
// the worst error seen on the training set.
BaselineDecision baseline_cls_dec(const OpenSetModel& model, std::span<const double> x,
                                  double max_train_error);

// Threshold picked by counting raw errors on the same grid the calibrated
// search uses, with no tail modelling. Ties resolve to the largest candidate.
double baseline_naive(const ErrorSets& errors, double p_u);

std::string error_histogram_csv(const ErrorSets& errors, std::size_t bins);
std::string error_histogram_svg(const ErrorSets& errors, std::size_t bins);

}  // namespace c2ae
