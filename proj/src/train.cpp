#include "c2ae/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace c2ae {
namespace {

void check_labels_fit(const LabeledDataset& data, const NetworkDef& def) {
    if (data.dim != def.input_dim())
        throw DimensionError("dataset feature width does not match the network input");
    for (int y : data.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= def.k)
            throw ContractError("dataset label outside the class range of the network");
}

Tensor gather_rows(const LabeledDataset& data, std::span<const std::size_t> idx) {
    std::vector<double> flat;
    flat.reserve(idx.size() * data.dim);
    for (std::size_t i : idx) {
        auto row = data.row(i);
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor::from_data({idx.size(), data.dim}, flat);
}

std::vector<int> gather_labels(const LabeledDataset& data, std::span<const std::size_t> idx) {
    std::vector<int> ys;
    ys.reserve(idx.size());
    for (std::size_t i : idx) ys.push_back(data.labels[i]);
    return ys;
}

std::vector<std::vector<std::size_t>> index_by_class(const LabeledDataset& data) {
    std::vector<std::vector<std::size_t>> per_class(data.class_count);
    for (std::size_t i = 0; i < data.size(); ++i)
        per_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    return per_class;
}

int draw_other_label(int y, std::size_t k, Rng& rng) {
    const std::uint64_t r = rng.below(k - 1);
    return r < static_cast<std::uint64_t>(y) ? static_cast<int>(r) : static_cast<int>(r + 1);
}

}  // namespace

void TrainConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("alpha must lie in [0, 1]");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ContractError("learning rate must be positive");
    if (batch_size == 0) throw ContractError("batch size must be at least 1");
    if (epochs_stage1 == 0 || epochs_stage2 == 0)
        throw ContractError("epoch counts must be positive");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"alpha", cfg.alpha},
            {"lr", cfg.lr},
            {"batch_size", cfg.batch_size},
            {"epochs_stage1", cfg.epochs_stage1},
            {"epochs_stage2", cfg.epochs_stage2},
            {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs_stage1 = j.value("epochs_stage1", cfg.epochs_stage1);
    cfg.epochs_stage2 = j.value("epochs_stage2", cfg.epochs_stage2);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

std::vector<double> train_stage1(OpenSetModel& model, const LabeledDataset& data,
                                 const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.size() == 0) throw ContractError("cannot train on an empty dataset");
    check_labels_fit(data, model.def);

    auto params = model.stage1_params();
    AdamState adam = make_adam(params, cfg.lr);
    Rng rng(cfg.seed + 1);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<double> trace;
    trace.reserve(cfg.epochs_stage1);
    for (std::size_t epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> idx(order.data() + start, count);
            Tensor x = gather_rows(data, idx);
            const std::vector<int> ys = gather_labels(data, idx);
            Tensor loss = softmax_cross_entropy(model.classify(model.encode(x)), ys);
            backward(loss);
            adam_step(params, adam);
            loss_sum += loss.item() * static_cast<double>(count);
        }
        trace.push_back(loss_sum / static_cast<double>(data.size()));
    }
    return trace;
}

NonmatchBatch sample_nonmatch(std::span<const int> batch_labels, const LabeledDataset& data,
                              Rng& rng) {
    data.validate();
    const std::size_t k = data.class_count;
    if (k < 2) throw ContractError("non-match sampling needs at least two classes");

    const auto per_class = index_by_class(data);
    NonmatchBatch out;
    out.condition_labels.reserve(batch_labels.size());
    out.target_indices.reserve(batch_labels.size());
    std::vector<double> flat;
    flat.reserve(batch_labels.size() * data.dim);

    for (int y : batch_labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw ContractError("batch label outside the dataset class range");
        out.condition_labels.push_back(draw_other_label(y, k, rng));

        const std::size_t others = data.size() - per_class[static_cast<std::size_t>(y)].size();
        if (others == 0) throw ContractError("no samples outside the batch label's class");
        std::uint64_t t = rng.below(others);
        std::size_t picked = data.size();
        for (std::size_t c = 0; c < k; ++c) {
            if (c == static_cast<std::size_t>(y)) continue;
            if (t < per_class[c].size()) {
                picked = per_class[c][static_cast<std::size_t>(t)];
                break;
            }
            t -= per_class[c].size();
        }
        out.target_indices.push_back(picked);
        auto row = data.row(picked);
        flat.insert(flat.end(), row.begin(), row.end());
    }
    out.targets = Tensor::from_data({batch_labels.size(), data.dim}, flat);
    return out;
}

Stage2Trace train_stage2(OpenSetModel& model, const LabeledDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.size() == 0) throw ContractError("cannot train on an empty dataset");
    if (model.def.k < 2) throw ContractError("conditioned training needs at least two classes");
    if (data.class_count != model.def.k)
        throw ContractError("dataset class count does not match the network");
    check_labels_fit(data, model.def);

    auto params = model.stage2_params();
    AdamState adam = make_adam(params, cfg.lr);
    Rng rng(cfg.seed + 2);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    Stage2Trace trace;
    trace.match_loss.reserve(cfg.epochs_stage2);
    trace.nonmatch_loss.reserve(cfg.epochs_stage2);
    for (std::size_t epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
        rng.shuffle(order);
        double match_sum = 0.0;
        double nonmatch_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> idx(order.data() + start, count);
            Tensor x = gather_rows(data, idx);
            const std::vector<int> ys = gather_labels(data, idx);
            NonmatchBatch nm = sample_nonmatch(ys, data, rng);

            Tensor z = model.encode(x).detach();
            Tensor cond_match = condition_batch(ys, model.def.k);
            Tensor recon_match =
                model.decode(film_modulate(z, model.film_scale.forward(cond_match),
                                           model.film_shift.forward(cond_match)));
            Tensor cond_nm = condition_batch(nm.condition_labels, model.def.k);
            Tensor recon_nm = model.decode(film_modulate(z, model.film_scale.forward(cond_nm),
                                                         model.film_shift.forward(cond_nm)));

            Tensor loss_match = l1_reconstruction_loss(x, recon_match);
            Tensor loss_nm = l1_reconstruction_loss(nm.targets, recon_nm);
            Tensor total = add(scale(loss_match, cfg.alpha), scale(loss_nm, 1.0 - cfg.alpha));
            backward(total);
            adam_step(params, adam);

            match_sum += loss_match.item() * static_cast<double>(count);
            nonmatch_sum += loss_nm.item() * static_cast<double>(count);
        }
        trace.match_loss.push_back(match_sum / static_cast<double>(data.size()));
        trace.nonmatch_loss.push_back(nonmatch_sum / static_cast<double>(data.size()));
    }
    return trace;
}

ErrorSets collect_error_sets(const OpenSetModel& model, const LabeledDataset& data, Rng& rng) {
    data.validate();
    if (data.size() == 0) throw ContractError("cannot collect errors from an empty dataset");
    if (model.def.k < 2) throw ContractError("non-match conditions need at least two classes");
    check_labels_fit(data, model.def);

    constexpr std::size_t kChunk = 256;
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    ErrorSets out;
    out.s_match.reserve(data.size());
    out.s_nonmatch.reserve(data.size());
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, data.size() - start);
        const std::span<const std::size_t> chunk(idx.data() + start, count);
        Tensor x = gather_rows(data, chunk);
        const std::vector<int> ys = gather_labels(data, chunk);
        std::vector<int> ys_nm;
        ys_nm.reserve(count);
        for (int y : ys) ys_nm.push_back(draw_other_label(y, model.def.k, rng));

        Tensor z = model.encode(x).detach();
        Tensor cond_match = condition_batch(ys, model.def.k);
        Tensor recon_match = model.decode(film_modulate(z, model.film_scale.forward(cond_match),
                                                        model.film_shift.forward(cond_match)));
        Tensor cond_nm = condition_batch(ys_nm, model.def.k);
        Tensor recon_nm = model.decode(film_modulate(z, model.film_scale.forward(cond_nm),
                                                     model.film_shift.forward(cond_nm)));

        const std::vector<double> em = rowwise_l1_distance(x, recon_match);
        const std::vector<double> en = rowwise_l1_distance(x, recon_nm);
        out.s_match.insert(out.s_match.end(), em.begin(), em.end());
        out.s_nonmatch.insert(out.s_nonmatch.end(), en.begin(), en.end());
    }
    return out;
}

}  // namespace c2ae
