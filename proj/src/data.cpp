#include "c2ae/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>

namespace c2ae {

std::span<const double> LabeledDataset::row(std::size_t i) const {
    if (i >= size()) throw IndexError("dataset row out of range");
    return std::span<const double>(features).subspan(i * dim, dim);
}

void LabeledDataset::validate() const {
    if (dim == 0) throw ContractError("dataset has zero feature width");
    if (class_count == 0) throw ContractError("dataset has zero classes");
    if (features.size() != labels.size() * dim)
        throw DimensionError("feature matrix does not match label count");
    if (!class_names.empty() && class_names.size() != class_count)
        throw ContractError("class_names must be empty or one per class");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= class_count)
            throw ContractError("label outside [0, class_count)");
    for (double v : features) {
        if (!std::isfinite(v)) throw NumericError("non-finite feature value");
        if (v < -1.0 || v > 1.0) throw ContractError("feature outside [-1, 1]");
    }
}

ToyKind toy_kind_from_name(const std::string& name) {
    if (name == "two_gauss") return ToyKind::two_gauss;
    if (name == "four_gauss") return ToyKind::four_gauss;
    if (name == "uni_gauss") return ToyKind::uni_gauss;
    throw ContractError("unknown toy dataset kind: " + name);
}

std::string toy_kind_name(ToyKind kind) {
    switch (kind) {
        case ToyKind::two_gauss: return "two_gauss";
        case ToyKind::four_gauss: return "four_gauss";
        case ToyKind::uni_gauss: return "uni_gauss";
    }
    throw ContractError("unknown toy dataset kind");
}

LabeledDataset gen_toy(ToyKind kind, std::size_t n_per_class, std::uint64_t seed, double sigma) {
    if (n_per_class < 1) throw ContractError("gen_toy requires n_per_class >= 1");
    if (sigma <= 0.0) throw ContractError("gen_toy requires sigma > 0");

    Rng rng(seed);
    LabeledDataset out;
    out.dim = 2;

    auto gauss_class = [&](double cx, double cy, int label) {
        for (std::size_t i = 0; i < n_per_class; ++i) {
            out.features.push_back(cx + sigma * rng.normal());
            out.features.push_back(cy + sigma * rng.normal());
            out.labels.push_back(label);
        }
    };

    switch (kind) {
        case ToyKind::two_gauss:
            out.class_count = 2;
            gauss_class(-1.0, 0.0, 0);
            gauss_class(+1.0, 0.0, 1);
            break;
        case ToyKind::four_gauss:
            out.class_count = 4;
            gauss_class(+1.0, +1.0, 0);
            gauss_class(-1.0, +1.0, 1);
            gauss_class(-1.0, -1.0, 2);
            gauss_class(+1.0, -1.0, 3);
            break;
        case ToyKind::uni_gauss: {
            out.class_count = 2;
            gauss_class(0.0, 0.0, 0);
            const double r0 = 1.5, r1 = 2.0;
            for (std::size_t i = 0; i < n_per_class; ++i) {
                // Area-uniform draw over the annulus.
                const double r = std::sqrt(rng.uniform(r0 * r0, r1 * r1));
                const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
                out.features.push_back(r * std::cos(theta));
                out.features.push_back(r * std::sin(theta));
                out.labels.push_back(1);
            }
            break;
        }
    }

    double max_abs = 0.0;
    for (double v : out.features) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs > 0.0)
        for (double& v : out.features) v /= max_abs;

    out.validate();
    return out;
}

namespace {

std::vector<unsigned char> read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be_u32(const std::vector<unsigned char>& bytes, std::size_t offset,
                          const std::string& what) {
    if (offset + 4 > bytes.size())
        throw FormatError("truncated IDX header while reading " + what, offset);
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 3]);
}

void write_be_u32(std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = read_binary(images_path);
    const auto lbl = read_binary(labels_path);

    if (read_be_u32(img, 0, "image magic") != kIdxImagesMagic)
        throw FormatError("bad IDX image magic in " + images_path, 0);
    const std::uint32_t n_img = read_be_u32(img, 4, "image count");
    const std::uint32_t rows = read_be_u32(img, 8, "image rows");
    const std::uint32_t cols = read_be_u32(img, 12, "image cols");
    const std::size_t pixels = static_cast<std::size_t>(n_img) * rows * cols;
    if (img.size() != 16 + pixels)
        throw FormatError("IDX image payload length mismatch in " + images_path,
                          std::min(img.size(), static_cast<std::size_t>(16) + pixels));

    if (read_be_u32(lbl, 0, "label magic") != kIdxLabelsMagic)
        throw FormatError("bad IDX label magic in " + labels_path, 0);
    const std::uint32_t n_lbl = read_be_u32(lbl, 4, "label count");
    if (lbl.size() != 8 + n_lbl)
        throw FormatError("IDX label payload length mismatch in " + labels_path,
                          std::min(lbl.size(), static_cast<std::size_t>(8) + n_lbl));
    if (n_img != n_lbl)
        throw FormatError("IDX image/label count mismatch (" + std::to_string(n_img) + " vs " +
                              std::to_string(n_lbl) + ")",
                          4);

    LabeledDataset out;
    out.dim = static_cast<std::size_t>(rows) * cols;
    if (out.dim == 0) throw FormatError("IDX images have zero area", 8);
    out.features.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i)
        out.features[i] = static_cast<double>(img[16 + i]) / 127.5 - 1.0;

    out.labels.resize(n_lbl);
    int max_label = 0;
    for (std::size_t i = 0; i < n_lbl; ++i) {
        out.labels[i] = static_cast<int>(lbl[8 + i]);
        max_label = std::max(max_label, out.labels[i]);
    }
    out.class_count = static_cast<std::size_t>(max_label) + 1;
    out.validate();
    return out;
}

void save_idx(const LabeledDataset& dataset, const std::string& images_path,
              const std::string& labels_path) {
    dataset.validate();
    for (int y : dataset.labels)
        if (y > 255) throw ContractError("IDX labels are single bytes");

    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw Error("cannot write file: " + images_path);
    write_be_u32(img, kIdxImagesMagic);
    write_be_u32(img, static_cast<std::uint32_t>(dataset.size()));
    // Flat vectors: one "row" of dim pixels, one column.
    write_be_u32(img, static_cast<std::uint32_t>(dataset.dim));
    write_be_u32(img, 1);
    for (double v : dataset.features) {
        const double b = std::round((v + 1.0) * 127.5);
        if (b < 0.0 || b > 255.0) throw ContractError("feature outside byte range");
        const unsigned char byte = static_cast<unsigned char>(b);
        img.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!img) throw Error("write failed: " + images_path);

    std::ofstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw Error("cannot write file: " + labels_path);
    write_be_u32(lbl, kIdxLabelsMagic);
    write_be_u32(lbl, static_cast<std::uint32_t>(dataset.size()));
    for (int y : dataset.labels) {
        const unsigned char byte = static_cast<unsigned char>(y);
        lbl.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!lbl) throw Error("write failed: " + labels_path);
}

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& cell, std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw FormatError("bad numeric cell '" + cell + "' on line " + std::to_string(line_no),
                          line_no);
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

}  // namespace

LabeledDataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV file: " + path, 0);
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header.back() != "label")
        throw FormatError("CSV header must end with 'label'", 1);
    const std::size_t dim = header.size() - 1;
    for (std::size_t j = 0; j < dim; ++j)
        if (header[j] != "x" + std::to_string(j))
            throw FormatError("CSV header column " + std::to_string(j) + " must be x" +
                                  std::to_string(j),
                              1);

    LabeledDataset out;
    out.dim = dim;
    std::size_t line_no = 1;
    int max_label = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != dim + 1)
            throw FormatError("CSV row has " + std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(dim + 1),
                              line_no);
        for (std::size_t j = 0; j < dim; ++j)
            out.features.push_back(parse_double(cells[j], line_no));
        const double y = parse_double(cells.back(), line_no);
        if (y < 0.0 || y != std::floor(y))
            throw FormatError("CSV label must be a non-negative integer", line_no);
        out.labels.push_back(static_cast<int>(y));
        max_label = std::max(max_label, out.labels.back());
    }
    if (out.labels.empty()) throw FormatError("CSV file has no data rows: " + path, line_no);
    out.class_count = static_cast<std::size_t>(max_label) + 1;
    out.validate();
    return out;
}

void save_csv(const LabeledDataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    for (std::size_t j = 0; j < dataset.dim; ++j) out << "x" << j << ",";
    out << "label\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto row = dataset.row(i);
        for (double v : row) out << format_double(v) << ",";
        out << dataset.labels[i] << "\n";
    }
    if (!out) throw Error("write failed: " + path);
}

OpenSetSplit split_known_unknown(const LabeledDataset& dataset, const SplitSpec& spec) {
    dataset.validate();
    if (spec.known_classes.empty()) throw ContractError("split requires a non-empty known set");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ContractError("train_fraction must lie in (0, 1)");

    std::vector<int> known = spec.known_classes;
    std::vector<int> unknown = spec.unknown_classes;
    std::sort(known.begin(), known.end());
    std::sort(unknown.begin(), unknown.end());
    known.erase(std::unique(known.begin(), known.end()), known.end());
    unknown.erase(std::unique(unknown.begin(), unknown.end()), unknown.end());

    for (int c : known)
        if (std::binary_search(unknown.begin(), unknown.end(), c))
            throw ContractError("known and unknown class sets overlap");
    auto class_exists = [&](int c) {
        return c >= 0 && static_cast<std::size_t>(c) < dataset.class_count &&
               std::any_of(dataset.labels.begin(), dataset.labels.end(),
                           [c](int y) { return y == c; });
    };
    for (int c : known)
        if (!class_exists(c)) throw ContractError("known class " + std::to_string(c) + " missing");
    for (int c : unknown)
        if (!class_exists(c))
            throw ContractError("unknown class " + std::to_string(c) + " missing");

    OpenSetSplit out;
    out.train_known.dim = out.test_known.dim = out.test_unknown.dim = dataset.dim;
    out.train_known.class_count = out.test_known.class_count = known.size();
    out.test_unknown.class_count = dataset.class_count;

    Rng rng(spec.seed);
    auto append = [&](LabeledDataset& dst, std::size_t i, int label) {
        const auto row = dataset.row(i);
        dst.features.insert(dst.features.end(), row.begin(), row.end());
        dst.labels.push_back(label);
    };

    for (std::size_t ki = 0; ki < known.size(); ++ki) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (dataset.labels[i] == known[ki]) idx.push_back(i);
        rng.shuffle(idx);
        const std::size_t n_train = static_cast<std::size_t>(
            std::floor(spec.train_fraction * static_cast<double>(idx.size()) + 0.5));
        for (std::size_t j = 0; j < idx.size(); ++j)
            append(j < n_train ? out.train_known : out.test_known, idx[j],
                   static_cast<int>(ki));
    }
    for (int c : unknown)
        for (std::size_t i = 0; i < dataset.size(); ++i)
            if (dataset.labels[i] == c) append(out.test_unknown, i, c);

    if (out.train_known.labels.empty())
        throw ContractError("split produced an empty training set");
    out.train_known.validate();
    if (!out.test_known.labels.empty()) out.test_known.validate();
    if (!out.test_unknown.labels.empty()) out.test_unknown.validate();
    return out;
}

}  // namespace c2ae
