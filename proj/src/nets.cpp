#include "c2ae/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace c2ae {

void NetworkDef::validate() const {
    if (k < 1) throw ContractError("network needs at least one class");
    if (latent_dim < 1) throw ContractError("latent dimension must be positive");
    for (const auto* widths : {&encoder_widths, &classifier_widths, &decoder_widths}) {
        if (widths->size() < 2) throw ContractError("each sub-network needs at least one layer");
        for (std::size_t w : *widths)
            if (w < 1) throw ContractError("layer widths must be positive");
    }
    if (encoder_widths.back() != latent_dim)
        throw ContractError("encoder output width must equal latent_dim");
    if (classifier_widths.front() != latent_dim)
        throw ContractError("classifier input width must equal latent_dim");
    if (classifier_widths.back() != k)
        throw ContractError("classifier output width must equal the class count");
    if (decoder_widths.front() != latent_dim)
        throw ContractError("decoder input width must equal latent_dim");
    if (decoder_widths.back() != encoder_widths.front())
        throw ContractError("decoder output width must equal the input width");
}

nlohmann::json network_def_to_json(const NetworkDef& def) {
    return {{"encoder", def.encoder_widths},
            {"classifier", def.classifier_widths},
            {"decoder", def.decoder_widths},
            {"activation", activation_name(def.hidden)},
            {"leaky_slope", def.hidden.slope},
            {"k", def.k},
            {"latent_dim", def.latent_dim}};
}

NetworkDef network_def_from_json(const nlohmann::json& j) {
    NetworkDef def;
    def.encoder_widths = j.at("encoder").get<std::vector<std::size_t>>();
    def.classifier_widths = j.at("classifier").get<std::vector<std::size_t>>();
    def.decoder_widths = j.at("decoder").get<std::vector<std::size_t>>();
    def.hidden = activation_from_name(j.at("activation").get<std::string>(),
                                      j.value("leaky_slope", 0.01));
    def.k = j.at("k").get<std::size_t>();
    def.latent_dim = j.at("latent_dim").get<std::size_t>();
    def.validate();
    return def;
}

LabelConditionVector condition_vector(int j, std::size_t k) {
    if (j < 0 || static_cast<std::size_t>(j) >= k)
        throw IndexError("condition class " + std::to_string(j) + " out of range for k=" +
                         std::to_string(k));
    LabelConditionVector l;
    l.class_index = j;
    l.values.assign(k, -1.0);
    l.values[static_cast<std::size_t>(j)] = 1.0;
    return l;
}

Tensor condition_batch(std::span<const int> labels, std::size_t k) {
    if (labels.empty()) throw ContractError("condition_batch needs at least one label");
    std::vector<double> rows(labels.size() * k, -1.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw IndexError("condition class " + std::to_string(labels[i]) +
                             " out of range for k=" + std::to_string(k));
        rows[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::from_data({labels.size(), k}, std::move(rows));
}

Tensor film_modulate(const Tensor& z, const Tensor& gamma, const Tensor& beta) {
    return add(hadamard(gamma, z), beta);
}

Tensor film_modulate(const Tensor& z, const LabelConditionVector& l, const AffineLayer& h_gamma,
                     const AffineLayer& h_beta) {
    const std::size_t n = z.rows(), k = l.values.size();
    std::vector<double> rows(n * k);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(l.values.begin(), l.values.end(), rows.begin() + i * k);
    Tensor cond = Tensor::from_data({n, k}, std::move(rows));
    return film_modulate(z, h_gamma.forward(cond), h_beta.forward(cond));
}

OpenSetModel OpenSetModel::init(const NetworkDef& def, std::uint64_t seed) {
    def.validate();
    Rng rng(seed);
    auto make_layer = [&](std::size_t in, std::size_t out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out), b(out);
        for (double& v : w) v = rng.uniform(-bound, bound);
        for (double& v : b) v = rng.uniform(-bound, bound);
        return AffineLayer{Tensor::from_data({in, out}, std::move(w), true),
                           Tensor::from_data({out}, std::move(b), true)};
    };
    auto make_chain = [&](const std::vector<std::size_t>& widths) {
        std::vector<AffineLayer> chain;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i)
            chain.push_back(make_layer(widths[i], widths[i + 1]));
        return chain;
    };

    OpenSetModel m;
    m.def = def;
    m.encoder = make_chain(def.encoder_widths);
    m.classifier = make_chain(def.classifier_widths);
    m.decoder = make_chain(def.decoder_widths);
    m.film_scale = make_layer(def.k, def.latent_dim);
    m.film_shift = make_layer(def.k, def.latent_dim);
    return m;
}

Tensor OpenSetModel::encode(const Tensor& x) const {
    Tensor h = x;
    for (const auto& layer : encoder) h = activation(layer.forward(h), def.hidden);
    return h;
}

Tensor OpenSetModel::classify(const Tensor& z) const {
    Tensor h = z;
    for (std::size_t i = 0; i + 1 < classifier.size(); ++i)
        h = activation(classifier[i].forward(h), def.hidden);
    return classifier.back().forward(h);
}

Tensor OpenSetModel::decode(const Tensor& z) const {
    Tensor h = z;
    for (std::size_t i = 0; i + 1 < decoder.size(); ++i)
        h = activation(decoder[i].forward(h), def.hidden);
    return activation(decoder.back().forward(h), {Act::tanh, 0.0});
}

ClosedSetOutput OpenSetModel::forward_closed(const Tensor& x) const {
    ClosedSetOutput out;
    out.z = encode(x);
    out.probs = softmax(classify(out.z));
    out.y_pred.resize(x.rows());
    const auto p = out.probs.values();
    for (std::size_t i = 0; i < x.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < def.k; ++j)
            if (p[i * def.k + j] > p[i * def.k + best]) best = j;
        out.y_pred[i] = static_cast<int>(best);
    }
    return out;
}

Tensor OpenSetModel::reconstruct_conditioned(const Tensor& x, std::span<const int> labels) const {
    if (labels.size() != x.rows())
        throw DimensionError("reconstruct_conditioned needs one label per row");
    const Tensor z = encode(x);
    const Tensor cond = condition_batch(labels, def.k);
    const Tensor zl = film_modulate(z, film_scale.forward(cond), film_shift.forward(cond));
    return decode(zl);
}

namespace {

void collect(std::vector<Tensor>& out, std::vector<AffineLayer>& chain) {
    for (auto& layer : chain) {
        out.push_back(layer.weight);
        out.push_back(layer.bias);
    }
}

}  // namespace

std::vector<Tensor> OpenSetModel::stage1_params() {
    std::vector<Tensor> out;
    collect(out, encoder);
    collect(out, classifier);
    return out;
}

std::vector<Tensor> OpenSetModel::stage2_params() {
    std::vector<Tensor> out;
    collect(out, decoder);
    out.push_back(film_scale.weight);
    out.push_back(film_scale.bias);
    out.push_back(film_shift.weight);
    out.push_back(film_shift.bias);
    return out;
}

std::vector<Tensor> OpenSetModel::all_params() {
    std::vector<Tensor> out = stage1_params();
    for (Tensor& t : stage2_params()) out.push_back(t);
    return out;
}

namespace {

constexpr char kMagic[4] = {'C', '2', 'A', 'E'};
constexpr unsigned char kVersion = 0x01;

struct TensorSlot {
    std::string name;
    std::vector<std::size_t> shape;
    Tensor* tensor;
};

// Checkpoint order: fixed and derived from the network definition.
std::vector<TensorSlot> tensor_slots(OpenSetModel& m) {
    std::vector<TensorSlot> slots;
    auto add_chain = [&](const std::string& prefix, std::vector<AffineLayer>& chain,
                         const std::vector<std::size_t>& widths) {
        for (std::size_t i = 0; i < chain.size(); ++i) {
            slots.push_back({prefix + "." + std::to_string(i) + ".weight",
                             {widths[i], widths[i + 1]},
                             &chain[i].weight});
            slots.push_back(
                {prefix + "." + std::to_string(i) + ".bias", {widths[i + 1]}, &chain[i].bias});
        }
    };
    add_chain("encoder", m.encoder, m.def.encoder_widths);
    add_chain("classifier", m.classifier, m.def.classifier_widths);
    add_chain("decoder", m.decoder, m.def.decoder_widths);
    slots.push_back({"film_scale.weight", {m.def.k, m.def.latent_dim}, &m.film_scale.weight});
    slots.push_back({"film_scale.bias", {m.def.latent_dim}, &m.film_scale.bias});
    slots.push_back({"film_shift.weight", {m.def.k, m.def.latent_dim}, &m.film_shift.weight});
    slots.push_back({"film_shift.bias", {m.def.latent_dim}, &m.film_shift.bias});
    return slots;
}

void write_f32_le(std::ofstream& out, double v) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    const unsigned char b[4] = {
        static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

double read_f32_le(const std::vector<unsigned char>& bytes, std::size_t offset) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[offset]) |
                               (static_cast<std::uint32_t>(bytes[offset + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[offset + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[offset + 3]) << 24);
    return static_cast<double>(std::bit_cast<float>(bits));
}

}  // namespace

void save_checkpoint(const OpenSetModel& model, const std::string& path) {
    model.def.validate();
    OpenSetModel shared = model;  // tensors are shared handles; copies structure only
    auto slots = tensor_slots(shared);

    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& slot : slots) {
        if (slot.tensor->shape() != slot.shape)
            throw ContractError("model parameters inconsistent with its network definition");
        tensors.push_back({{"name", slot.name}, {"shape", slot.shape}});
    }
    nlohmann::json manifest = {{"network", network_def_to_json(model.def)},
                               {"dtype", "f32"},
                               {"tensors", tensors}};
    if (model.threshold) manifest["threshold"] = threshold_to_json(*model.threshold);
    const std::string text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), 1);
    const std::uint64_t len = text.size();
    unsigned char lb[8];
    for (int i = 0; i < 8; ++i) lb[i] = static_cast<unsigned char>(len >> (8 * i));
    out.write(reinterpret_cast<const char*>(lb), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& slot : slots)
        for (double v : slot.tensor->values()) write_f32_le(out, v);
    if (!out) throw Error("checkpoint write failed: " + path);
}

OpenSetModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < 13) throw FormatError("checkpoint shorter than its fixed header", 0);
    if (!std::equal(kMagic, kMagic + 4, bytes.begin()))
        throw FormatError("bad checkpoint magic", 0);
    if (bytes[4] != kVersion) throw FormatError("unsupported checkpoint version", 4);
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(bytes[5 + i]) << (8 * i);
    if (13 + len > bytes.size())
        throw FormatError("checkpoint manifest truncated", bytes.size());

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 13, bytes.begin() + 13 +
                                         static_cast<std::ptrdiff_t>(len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what(), 13);
    }

    OpenSetModel model;
    try {
        model.def = network_def_from_json(manifest.at("network"));
        if (manifest.value("dtype", "") != "f32")
            throw FormatError("unsupported checkpoint dtype", 13);
        if (manifest.contains("threshold"))
            model.threshold = threshold_from_json(manifest.at("threshold"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest incomplete: ") + e.what(), 13);
    }

    // Allocate parameters, then overwrite from the payload.
    auto zero_chain = [&](const std::vector<std::size_t>& widths) {
        std::vector<AffineLayer> chain;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i)
            chain.push_back(AffineLayer{Tensor::zeros({widths[i], widths[i + 1]}, true),
                                        Tensor::zeros({widths[i + 1]}, true)});
        return chain;
    };
    model.encoder = zero_chain(model.def.encoder_widths);
    model.classifier = zero_chain(model.def.classifier_widths);
    model.decoder = zero_chain(model.def.decoder_widths);
    model.film_scale = {Tensor::zeros({model.def.k, model.def.latent_dim}, true),
                        Tensor::zeros({model.def.latent_dim}, true)};
    model.film_shift = {Tensor::zeros({model.def.k, model.def.latent_dim}, true),
                        Tensor::zeros({model.def.latent_dim}, true)};

    auto slots = tensor_slots(model);
    const auto& tensors = manifest.at("tensors");
    if (!tensors.is_array() || tensors.size() != slots.size())
        throw FormatError("checkpoint tensor list does not match the network definition", 13);

    std::size_t offset = 13 + static_cast<std::size_t>(len);
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const auto& entry = tensors[s];
        if (entry.at("name").get<std::string>() != slots[s].name ||
            entry.at("shape").get<std::vector<std::size_t>>() != slots[s].shape)
            throw FormatError("checkpoint tensor '" + slots[s].name +
                                  "' missing or out of order",
                              13);
        auto vals = slots[s].tensor->mutable_values();
        if (offset + 4 * vals.size() > bytes.size())
            throw FormatError("checkpoint payload truncated", bytes.size());
        for (std::size_t i = 0; i < vals.size(); ++i, offset += 4)
            vals[i] = read_f32_le(bytes, offset);
    }
    if (offset != bytes.size())
        throw FormatError("checkpoint has trailing bytes after its payload", offset);
    return model;
}

}  // namespace c2ae
