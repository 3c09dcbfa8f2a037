#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "c2ae/nets.hpp"

namespace c2ae {

struct OpenSetPrediction {
    bool is_known = false;
    int y_pred = 0;                 // closed-set argmax, populated either way
    std::vector<double> rec_errors; // one conditioned reconstruction error per class
    double min_error = 0.0;
    double tau = 0.0;
};

// Conditioned reconstruction under every class label; the sample is known
// only when the smallest error falls strictly below the stored threshold.
// The reported label is always the classifier argmax.
OpenSetPrediction k_inference(const OpenSetModel& model, std::span<const double> x);

std::vector<OpenSetPrediction> batch_inference(const OpenSetModel& model, const Tensor& x_batch);

nlohmann::json prediction_to_json(const OpenSetPrediction& p);

}  // namespace c2ae
