#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace opqn {

/// N feature vectors with integer class labels. Features are held in double
/// precision in memory; the file format stores them as float32.
struct EmbeddingDataset {
    std::uint32_t count = 0;
    std::uint32_t dim = 0;
    std::uint32_t n_classes = 0;
    std::vector<double> features;  // row-major count x dim
    std::vector<std::uint32_t> labels;
    std::string name;
    std::uint64_t seed = 0;

    std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
    void validate() const;
};

struct SyntheticConfig {
    std::uint32_t classes = 2;
    std::uint32_t per_class = 2;
    std::uint32_t dim = 2;
    double noise_sigma = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Clustered unit-sphere data: one random unit center per class (resampled
/// until all pairwise center angles are at least 0.5 rad), samples drawn as
/// center + Gaussian noise and re-normalized.
EmbeddingDataset generate_synthetic(const SyntheticConfig& cfg);

struct StandardSplit {
    EmbeddingDataset database;
    EmbeddingDataset queries;
};

/// Stratified split: for every class the first per_class_queries occurrences
/// in dataset order become queries, the rest the database.
StandardSplit split_standard(const EmbeddingDataset& ds, std::uint32_t per_class_queries);

struct UnseenSplit {
    EmbeddingDataset train;
    EmbeddingDataset database;
    EmbeddingDataset queries;
};

/// Class-disjoint protocol: the lowest ceil(fraction*C) class ids form the
/// training set; the remaining classes are split into database and queries
/// with the standard per-class rule. Labels keep their original values.
UnseenSplit split_unseen(const EmbeddingDataset& ds, double train_class_fraction,
                         std::uint32_t per_class_queries);

void save_embeddings(const EmbeddingDataset& ds, const std::string& path);
EmbeddingDataset load_embeddings(const std::string& path);

}  // namespace opqn
