#include "opqn/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "opqn/binary_io.hpp"
#include "opqn/kernels.hpp"

namespace opqn {

namespace {

constexpr double kMinCenterAngleRad = 0.5;
constexpr std::size_t kCenterAttempts = 10000;
// IO staging buffer: floats are converted in slices of this many values so the
// peak footprint stays at one full double buffer plus O(chunk).
constexpr std::size_t kIoChunkValues = 1 << 16;

EmbeddingDataset subset(const EmbeddingDataset& ds, const std::vector<std::uint32_t>& ids,
                        const std::string& suffix) {
    EmbeddingDataset out;
    out.count = std::uint32_t(ids.size());
    out.dim = ds.dim;
    out.n_classes = ds.n_classes;
    out.name = ds.name.empty() ? suffix : ds.name + "/" + suffix;
    out.seed = ds.seed;
    out.features.resize(std::size_t(out.count) * ds.dim);
    out.labels.resize(out.count);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto src = ds.row(ids[i]);
        std::copy(src.begin(), src.end(), out.features.begin() + i * ds.dim);
        out.labels[i] = ds.labels[ids[i]];
    }
    return out;
}

}  // namespace

void EmbeddingDataset::validate() const {
    if (count < 1) throw std::invalid_argument("dataset must contain at least one sample");
    if (features.size() != std::size_t(count) * dim || labels.size() != count) {
        throw std::invalid_argument("dataset buffer sizes inconsistent with count/dim");
    }
    for (std::uint32_t l : labels) {
        if (l >= n_classes) throw std::invalid_argument("label out of range");
    }
    for (double v : features) {
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
    }
}

void SyntheticConfig::validate() const {
    if (classes < 2) throw std::invalid_argument("need at least 2 classes");
    if (per_class < 2) throw std::invalid_argument("need at least 2 samples per class");
    if (dim < 1) throw std::invalid_argument("dim must be >= 1");
    if (!(noise_sigma > 0.0)) throw std::invalid_argument("noise_sigma must be > 0");
}

EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double max_cos = std::cos(kMinCenterAngleRad);
    std::vector<std::vector<double>> centers;
    centers.reserve(cfg.classes);
    for (std::uint32_t c = 0; c < cfg.classes; ++c) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kCenterAttempts && !placed; ++attempt) {
            std::vector<double> center(cfg.dim);
            for (double& v : center) v = gauss(rng);
            double norm = std::sqrt(kern::dot(center.data(), center.data(), cfg.dim));
            if (norm < 1e-12) continue;
            for (double& v : center) v /= norm;
            placed = true;
            for (const auto& other : centers) {
                if (kern::dot(center.data(), other.data(), cfg.dim) > max_cos) {
                    placed = false;
                    break;
                }
            }
            if (placed) centers.push_back(std::move(center));
        }
        if (!placed) {
            throw std::invalid_argument("cannot place " + std::to_string(cfg.classes) +
                                        " class centers at 0.5 rad separation in dim " +
                                        std::to_string(cfg.dim));
        }
    }

    EmbeddingDataset ds;
    ds.count = cfg.classes * cfg.per_class;
    ds.dim = cfg.dim;
    ds.n_classes = cfg.classes;
    ds.name = "synthetic";
    ds.seed = cfg.seed;
    ds.features.resize(std::size_t(ds.count) * cfg.dim);
    ds.labels.resize(ds.count);

    std::size_t idx = 0;
    for (std::uint32_t c = 0; c < cfg.classes; ++c) {
        for (std::uint32_t s = 0; s < cfg.per_class; ++s, ++idx) {
            double* row = ds.features.data() + idx * cfg.dim;
            for (std::uint32_t j = 0; j < cfg.dim; ++j) {
                row[j] = centers[c][j] + cfg.noise_sigma * gauss(rng);
            }
            const double norm = std::sqrt(kern::dot(row, row, cfg.dim));
            for (std::uint32_t j = 0; j < cfg.dim; ++j) row[j] /= norm;
            ds.labels[idx] = c;
        }
    }
    return ds;
}

StandardSplit split_standard(const EmbeddingDataset& ds, std::uint32_t per_class_queries) {
    ds.validate();
    if (per_class_queries < 1) throw std::invalid_argument("per_class_queries must be >= 1");
    std::vector<std::uint32_t> taken(ds.n_classes, 0);
    std::vector<std::uint32_t> query_ids, db_ids;
    for (std::uint32_t i = 0; i < ds.count; ++i) {
        const std::uint32_t c = ds.labels[i];
        if (taken[c] < per_class_queries) {
            query_ids.push_back(i);
            ++taken[c];
        } else {
            db_ids.push_back(i);
        }
    }
    std::vector<bool> present(ds.n_classes, false);
    for (std::uint32_t i : db_ids) present[ds.labels[i]] = true;
    for (std::uint32_t c = 0; c < ds.n_classes; ++c) {
        const bool has_any = std::find(ds.labels.begin(), ds.labels.end(), c) != ds.labels.end();
        if (has_any && (taken[c] < per_class_queries || !present[c])) {
            throw std::invalid_argument("class " + std::to_string(c) +
                                        " has too few samples for the requested query count");
        }
    }
    return {subset(ds, db_ids, "database"), subset(ds, query_ids, "queries")};
}

UnseenSplit split_unseen(const EmbeddingDataset& ds, double train_class_fraction,
                         std::uint32_t per_class_queries) {
    ds.validate();
    if (!(train_class_fraction > 0.0 && train_class_fraction < 1.0)) {
        throw std::invalid_argument("train_class_fraction must be in (0, 1)");
    }
    std::vector<std::uint32_t> classes(ds.labels.begin(), ds.labels.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    const std::size_t n_train = std::size_t(std::ceil(train_class_fraction * double(classes.size())));
    if (n_train < 2 || classes.size() - n_train < 2) {
        throw std::invalid_argument("degenerate class split: need >= 2 classes on each side");
    }
    std::vector<bool> is_train_class(ds.n_classes, false);
    for (std::size_t i = 0; i < n_train; ++i) is_train_class[classes[i]] = true;

    std::vector<std::uint32_t> train_ids, eval_ids;
    for (std::uint32_t i = 0; i < ds.count; ++i) {
        (is_train_class[ds.labels[i]] ? train_ids : eval_ids).push_back(i);
    }

    UnseenSplit out;
    out.train = subset(ds, train_ids, "train");
    const EmbeddingDataset eval_ds = subset(ds, eval_ids, "unseen");
    StandardSplit eval_split = split_standard(eval_ds, per_class_queries);
    out.database = std::move(eval_split.database);
    out.queries = std::move(eval_split.queries);
    return out;
}

void save_embeddings(const EmbeddingDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    io::write_magic(os, "OPQE");
    io::write_u32(os, 1);
    io::write_u32(os, ds.count);
    io::write_u32(os, ds.dim);
    io::write_u32(os, ds.n_classes);
    io::write_bytes(os, ds.labels.data(), ds.labels.size() * sizeof(std::uint32_t));

    std::vector<float> stage(std::min(kIoChunkValues, ds.features.size()));
    std::size_t done = 0;
    while (done < ds.features.size()) {
        const std::size_t n = std::min(stage.size(), ds.features.size() - done);
        for (std::size_t i = 0; i < n; ++i) stage[i] = float(ds.features[done + i]);
        io::write_bytes(os, stage.data(), n * sizeof(float));
        done += n;
    }
}

EmbeddingDataset load_embeddings(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    io::expect_magic(is, "OPQE", "embedding file");
    io::expect_version(is, 1, "embedding file");

    EmbeddingDataset ds;
    ds.count = io::read_u32(is);
    ds.dim = io::read_u32(is);
    ds.n_classes = io::read_u32(is);
    ds.labels.resize(ds.count);
    io::read_bytes(is, ds.labels.data(), ds.labels.size() * sizeof(std::uint32_t));

    ds.features.resize(std::size_t(ds.count) * ds.dim);
    std::vector<float> stage(std::min(kIoChunkValues, ds.features.size()));
    std::size_t done = 0;
    while (done < ds.features.size()) {
        const std::size_t n = std::min(stage.size(), ds.features.size() - done);
        io::read_bytes(is, stage.data(), n * sizeof(float));
        for (std::size_t i = 0; i < n; ++i) ds.features[done + i] = double(stage[i]);
        done += n;
    }
    ds.validate();
    return ds;
}

}  // namespace opqn
