#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "c2ae/infer.hpp"
#include "c2ae/train.hpp"

using namespace c2ae;

namespace {

NetworkDef toy_def(std::size_t k, Act act) {
    NetworkDef d;
    d.encoder_widths = {2, 16, 8};
    d.classifier_widths = {8, 16, k};
    d.decoder_widths = {8, 16, 2};
    d.k = k;
    d.latent_dim = 8;
    d.hidden = {act, 0.01};
    return d;
}

ThresholdModel fixed_tau(double tau) {
    ThresholdModel tm;
    tm.tau_star = tau;
    tm.search_lo = tau;
    tm.search_hi = tau;
    return tm;
}

}  // namespace

TEST_CASE("the known/unknown decision is a strict threshold on the smallest error") {
    OpenSetModel model = OpenSetModel::init(toy_def(4, Act::sigmoid), 21);
    const std::vector<double> x{0.4, -0.6};

    model.threshold = fixed_tau(1.0);
    OpenSetPrediction probe = k_inference(model, x);
    REQUIRE(probe.rec_errors.size() == 4);
    for (double e : probe.rec_errors) {
        CHECK(e >= 0.0);
        CHECK(std::isfinite(e));
    }
    CHECK(probe.min_error == *std::min_element(probe.rec_errors.begin(), probe.rec_errors.end()));

    model.threshold = fixed_tau(probe.min_error * 1.0001);
    OpenSetPrediction above = k_inference(model, x);
    CHECK(above.is_known);
    CHECK(above.y_pred == probe.y_pred);

    model.threshold = fixed_tau(probe.min_error);
    CHECK_FALSE(k_inference(model, x).is_known);  // boundary stays unknown

    model.threshold = fixed_tau(probe.min_error * 0.9999);
    CHECK_FALSE(k_inference(model, x).is_known);
}

TEST_CASE("known labels come from the classifier, not the best-reconstructing class") {
    OpenSetModel model = OpenSetModel::init(toy_def(2, Act::sigmoid), 5);
    auto& last = model.classifier.back();
    std::fill(last.weight.mutable_values().begin(), last.weight.mutable_values().end(), 0.0);
    last.bias.mutable_values()[0] = 1.0;
    last.bias.mutable_values()[1] = 0.0;

    LabeledDataset data = gen_toy(ToyKind::two_gauss, 20, 9);
    bool exercised = false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto row = data.row(i);
        model.threshold = fixed_tau(1e9);
        OpenSetPrediction p = k_inference(model, std::span<const double>(row));
        CHECK(p.y_pred == 0);
        CHECK(p.is_known);
        if (p.rec_errors[1] < p.rec_errors[0]) exercised = true;
    }
    CHECK(exercised);  // at least one sample reconstructs best under the non-argmax class
}

TEST_CASE("inference validates its inputs") {
    OpenSetModel model = OpenSetModel::init(toy_def(4, Act::sigmoid), 2);
    const std::vector<double> x{0.1, 0.2};
    CHECK_THROWS_AS(k_inference(model, x), ContractError);  // no threshold fitted

    model.threshold = fixed_tau(0.5);
    const std::vector<double> wide{0.1, 0.2, 0.3};
    CHECK_THROWS_AS(k_inference(model, wide), DimensionError);
    CHECK_THROWS_AS(batch_inference(model, Tensor::from_data({2, 3}, std::vector<double>(6, 0.0))),
                    DimensionError);
}

TEST_CASE("batch inference equals per-sample inference and respects ordering") {
    OpenSetModel model = OpenSetModel::init(toy_def(4, Act::tanh), 13);
    model.threshold = fixed_tau(0.8);
    LabeledDataset data = gen_toy(ToyKind::four_gauss, 10, 13);
    Tensor batch = Tensor::from_data({data.size(), data.dim}, data.features);

    auto preds = batch_inference(model, batch);
    REQUIRE(preds.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto row = data.row(i);
        OpenSetPrediction single = k_inference(model, std::span<const double>(row));
        CHECK(single.y_pred == preds[i].y_pred);
        CHECK(single.is_known == preds[i].is_known);
        CHECK(single.min_error == preds[i].min_error);
        CHECK(single.rec_errors == preds[i].rec_errors);
    }

    // reversed batch gives the same per-sample answers in reversed order
    std::vector<double> rev_flat;
    for (std::size_t i = data.size(); i-- > 0;) {
        auto row = data.row(i);
        rev_flat.insert(rev_flat.end(), row.begin(), row.end());
    }
    auto rev = batch_inference(model, Tensor::from_data({data.size(), data.dim}, rev_flat));
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(rev[data.size() - 1 - i].rec_errors == preds[i].rec_errors);
        CHECK(rev[data.size() - 1 - i].is_known == preds[i].is_known);
    }

    auto again = batch_inference(model, batch);
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(again[i].rec_errors == preds[i].rec_errors);
        CHECK(again[i].min_error == preds[i].min_error);
    }
}

TEST_CASE("a trained model keeps held-out known samples on the known side") {
    LabeledDataset data = gen_toy(ToyKind::four_gauss, 200, 7);
    OpenSetModel model = OpenSetModel::init(toy_def(4, Act::tanh), 7);
    TrainConfig cfg;
    cfg.seed = 7;
    cfg.epochs_stage1 = 200;
    cfg.epochs_stage2 = 200;
    train_stage1(model, data, cfg);
    train_stage2(model, data, cfg);
    Rng rng(cfg.seed + 3);
    ErrorSets es = collect_error_sets(model, data, rng);
    model.threshold = compute_threshold(es, 0.5);

    LabeledDataset heldout = gen_toy(ToyKind::four_gauss, 50, 8);
    auto preds = batch_inference(model, Tensor::from_data({heldout.size(), heldout.dim},
                                                          heldout.features));
    std::size_t known = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].is_known) ++known;
        if (preds[i].y_pred == heldout.labels[i]) ++correct;
    }
    CHECK(static_cast<double>(known) >= 0.9 * static_cast<double>(preds.size()));
    CHECK(static_cast<double>(correct) >= 0.95 * static_cast<double>(preds.size()));
}

TEST_CASE("predictions serialize with a null label only when unknown") {
    OpenSetPrediction p;
    p.is_known = true;
    p.y_pred = 3;
    p.rec_errors = {0.5, 3.0};
    p.min_error = 0.5;
    p.tau = 1.0;
    nlohmann::json j = prediction_to_json(p);
    CHECK(j["decision"] == "known");
    CHECK(j["label"] == 3);
    CHECK(j["rec_errors"] == nlohmann::json::array({0.5, 3.0}));
    CHECK(j["tau"] == 1.0);

    p.is_known = false;
    nlohmann::json u = prediction_to_json(p);
    CHECK(u["decision"] == "unknown");
    CHECK(u["label"].is_null());
}
