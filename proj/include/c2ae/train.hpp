#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "c2ae/data.hpp"
#include "c2ae/evt.hpp"
#include "c2ae/nets.hpp"

namespace c2ae {

struct TrainConfig {
    double alpha = 0.9;       // match-loss weight in stage 2
    double lr = 3e-4;
    std::size_t batch_size = 64;
    std::size_t epochs_stage1 = 200;
    std::size_t epochs_stage2 = 200;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Closed-set training of encoder + classifier. Returns the per-epoch mean
// cross-entropy. Decoder and conditioning nets are untouched.
std::vector<double> train_stage1(OpenSetModel& model, const LabeledDataset& data,
                                 const TrainConfig& cfg);

struct NonmatchBatch {
    std::vector<int> condition_labels;       // uniform over classes != y_i
    std::vector<std::size_t> target_indices; // uniform over samples of class != y_i
    Tensor targets;
};

// Draw one non-match condition label and one non-match target sample per
// batch element. Label and target are drawn independently.
NonmatchBatch sample_nonmatch(std::span<const int> batch_labels, const LabeledDataset& data,
                              Rng& rng);

struct Stage2Trace {
    std::vector<double> match_loss;
    std::vector<double> nonmatch_loss;
};

// Conditioned-decoder training against frozen encoder latents. Matched
// reconstructions chase the input; mismatched ones chase the sampled
// non-match target, weighted alpha : 1-alpha.
Stage2Trace train_stage2(OpenSetModel& model, const LabeledDataset& data, const TrainConfig& cfg);

// Per-sample reconstruction errors of the trained model on its training set:
// one error under the true condition label, one under a sampled non-match
// condition. Both are measured against the sample itself.
ErrorSets collect_error_sets(const OpenSetModel& model, const LabeledDataset& data, Rng& rng);

}  // namespace c2ae
