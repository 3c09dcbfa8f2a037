#include "c2ae/infer.hpp"

#include <algorithm>

namespace c2ae {

std::vector<OpenSetPrediction> batch_inference(const OpenSetModel& model, const Tensor& x_batch) {
    if (!model.threshold.has_value())
        throw ContractError("open-set inference needs a fitted threshold");
    if (!x_batch.valid() || x_batch.cols() != model.def.input_dim())
        throw DimensionError("sample width does not match the network input");

    const std::size_t n = x_batch.rows();
    const std::size_t k = model.def.k;
    const double tau = model.threshold->tau_star;

    ClosedSetOutput closed = model.forward_closed(x_batch);
    Tensor z = closed.z.detach();

    std::vector<OpenSetPrediction> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].y_pred = closed.y_pred[i];
        out[i].tau = tau;
        out[i].rec_errors.resize(k);
    }
    for (std::size_t c = 0; c < k; ++c) {
        const std::vector<int> labels(n, static_cast<int>(c));
        Tensor cond = condition_batch(labels, k);
        Tensor recon = model.decode(film_modulate(z, model.film_scale.forward(cond),
                                                  model.film_shift.forward(cond)));
        const std::vector<double> err = rowwise_l1_distance(x_batch, recon);
        for (std::size_t i = 0; i < n; ++i) out[i].rec_errors[c] = err[i];
    }
    for (auto& p : out) {
        p.min_error = *std::min_element(p.rec_errors.begin(), p.rec_errors.end());
        p.is_known = p.min_error < tau;
    }
    return out;
}

OpenSetPrediction k_inference(const OpenSetModel& model, std::span<const double> x) {
    if (x.size() != model.def.input_dim())
        throw DimensionError("sample width does not match the network input");
    Tensor row = Tensor::from_data({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    return batch_inference(model, row).front();
}

nlohmann::json prediction_to_json(const OpenSetPrediction& p) {
    nlohmann::json j;
    j["decision"] = p.is_known ? "known" : "unknown";
    j["label"] = p.is_known ? nlohmann::json(p.y_pred) : nlohmann::json(nullptr);
    j["rec_errors"] = p.rec_errors;
    j["tau"] = p.tau;
    return j;
}

}  // namespace c2ae
