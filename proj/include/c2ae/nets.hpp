#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "c2ae/evt.hpp"
#include "c2ae/tensor.hpp"

namespace c2ae {

// Widths for the fully connected sub-networks. Each list runs input..output:
// encoder [d_in, ..., latent], classifier [latent, ..., k], decoder
// [latent, ..., d_in]. The conditioning nets are single affine layers k->latent.
struct NetworkDef {
    std::vector<std::size_t> encoder_widths;
    std::vector<std::size_t> classifier_widths;
    std::vector<std::size_t> decoder_widths;
    Activation hidden{Act::sigmoid, 0.01};
    std::size_t k = 0;
    std::size_t latent_dim = 0;

    std::size_t input_dim() const { return encoder_widths.empty() ? 0 : encoder_widths.front(); }
    void validate() const;
};

nlohmann::json network_def_to_json(const NetworkDef& def);
NetworkDef network_def_from_json(const nlohmann::json& j);

// k-length vector over {+1, -1} with +1 only at the conditioning class.
struct LabelConditionVector {
    std::vector<double> values;
    int class_index = 0;
};

LabelConditionVector condition_vector(int j, std::size_t k);

// One row of condition values per label, for batched conditioning.
Tensor condition_batch(std::span<const int> labels, std::size_t k);

struct AffineLayer {
    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
    Tensor forward(const Tensor& x) const { return affine(x, weight, bias); }
};

// Element-wise scale-and-shift of the latent rows.
Tensor film_modulate(const Tensor& z, const Tensor& gamma, const Tensor& beta);
Tensor film_modulate(const Tensor& z, const LabelConditionVector& l, const AffineLayer& h_gamma,
                     const AffineLayer& h_beta);

struct ClosedSetOutput {
    Tensor z;                 // latent rows
    Tensor probs;             // softmax rows
    std::vector<int> y_pred;  // argmax per row, ties toward the lowest index
};

struct OpenSetModel {
    NetworkDef def;
    std::vector<AffineLayer> encoder;
    std::vector<AffineLayer> classifier;
    std::vector<AffineLayer> decoder;
    AffineLayer film_scale;
    AffineLayer film_shift;
    std::optional<ThresholdModel> threshold;

    static OpenSetModel init(const NetworkDef& def, std::uint64_t seed);

    // Hidden activation after every encoder layer, including the last.
    Tensor encode(const Tensor& x) const;
    // Hidden activations between layers; final layer emits raw logits.
    Tensor classify(const Tensor& z) const;
    // Hidden activations between layers; final layer squashed by tanh.
    Tensor decode(const Tensor& z) const;

    ClosedSetOutput forward_closed(const Tensor& x) const;
    Tensor reconstruct_conditioned(const Tensor& x, std::span<const int> labels) const;

    std::vector<Tensor> stage1_params();        // encoder + classifier
    std::vector<Tensor> stage2_params();        // decoder + conditioning nets
    std::vector<Tensor> all_params();
};

// Checkpoint layout: "C2AE", version byte 0x01, u64 little-endian manifest
// length, UTF-8 JSON manifest, then 32-bit little-endian row-major tensor
// payloads in manifest order.
void save_checkpoint(const OpenSetModel& model, const std::string& path);
OpenSetModel load_checkpoint(const std::string& path);

}  // namespace c2ae
