#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "c2ae/common.hpp"

namespace c2ae {

// Row-major feature matrix with one integer class label per row. Loader and
// generator outputs keep every feature inside [-1, 1].
struct LabeledDataset {
    std::size_t dim = 0;
    std::size_t class_count = 0;
    std::vector<double> features;  // size() * dim
    std::vector<int> labels;
    std::vector<std::string> class_names;  // optional; empty or class_count entries

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const;
    void validate() const;
};

enum class ToyKind { two_gauss, four_gauss, uni_gauss };

ToyKind toy_kind_from_name(const std::string& name);
std::string toy_kind_name(ToyKind kind);

// Two-dimensional synthetic classification sets, normalized to [-1, 1] by the
// largest absolute coordinate. two_gauss: isotropic blobs at (-1,0)/(+1,0);
// four_gauss: blobs at the four corners (+1,+1), (-1,+1), (-1,-1), (+1,-1);
// uni_gauss: a blob at the origin plus a uniform annulus around it.
LabeledDataset gen_toy(ToyKind kind, std::size_t n_per_class, std::uint64_t seed,
                       double sigma = 0.2);

// IDX image/label pair (big-endian headers, unsigned byte payloads). Pixels
// map to [-1, 1] via v / 127.5 - 1.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const LabeledDataset& dataset, const std::string& images_path,
              const std::string& labels_path);

// Comma-separated text with header x0,...,x{D-1},label.
LabeledDataset load_csv(const std::string& path);
void save_csv(const LabeledDataset& dataset, const std::string& path);

struct SplitSpec {
    std::vector<int> known_classes;
    std::vector<int> unknown_classes;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct OpenSetSplit {
    LabeledDataset train_known;   // labels remapped to 0..k-1, ascending original id
    LabeledDataset test_known;    // same remapping
    LabeledDataset test_unknown;  // original labels
};

// Stratified known/unknown split: each known class is shuffled and divided by
// train_fraction (round half up); unknown classes go wholly to test_unknown.
OpenSetSplit split_known_unknown(const LabeledDataset& dataset, const SplitSpec& spec);

}  // namespace c2ae
