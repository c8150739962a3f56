#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "opqn/codebook.hpp"
#include "opqn/data_io.hpp"
#include "opqn/fingerprint.hpp"
#include "opqn/trainer.hpp"

namespace opqn {

/// PQ codes for a database: one codeword index per subspace per item, stored
/// byte-packed (one byte per code when K <= 256, two little-endian bytes
/// otherwise), plus labels and the fingerprint of the producing checkpoint.
struct EncodedDatabase {
    std::uint32_t count = 0;
    std::uint32_t m_books = 0;
    std::uint32_t k_words = 0;
    std::uint32_t code_bytes = 1;
    std::vector<std::uint8_t> codes;  // count x m_books, row-major
    std::vector<std::uint32_t> labels;
    Fingerprint fingerprint{};
    /// Whether the codes came from an orthonormal codebook set. Not part of
    /// the file format; restored from the checkpoint after loading.
    bool codebooks_orthonormal = false;

    std::uint32_t code(std::size_t i, std::uint32_t m) const {
        const std::size_t off = (i * m_books + m) * code_bytes;
        std::uint32_t c = codes[off];
        if (code_bytes == 2) c |= std::uint32_t(codes[off + 1]) << 8;
        return c;
    }
    void set_code(std::size_t i, std::uint32_t m, std::uint32_t c) {
        const std::size_t off = (i * m_books + m) * code_bytes;
        codes[off] = std::uint8_t(c & 0xff);
        if (code_bytes == 2) codes[off + 1] = std::uint8_t(c >> 8);
    }
    void validate() const;
};

/// Per-subspace assignment probabilities for one query; these vectors are the
/// lookup tables of the retrieval procedure.
struct QuerySoftRep {
    std::vector<std::vector<double>> probs;  // m_books vectors of length k_words
};

/// (database id, score) pairs in descending score order; ties resolved toward
/// the lower id.
struct RankedResult {
    std::vector<std::pair<std::uint32_t, double>> hits;
};

/// Hard-assigns every database item. codes[i][m] comes from the softmax of
/// the transform logits of sub-vector m of item i.
EncodedDatabase encode_database(const ModelParams& model, const EmbeddingDataset& embeddings);

QuerySoftRep query_soft_rep(const ModelParams& model, std::span<const double> embedding);

/// Contiguous m_books x k_words lookup table built from a query's soft
/// representation.
std::vector<double> flatten_lut(const QuerySoftRep& q, std::uint32_t k_words);

/// Inner scoring kernel: for each item the accumulator is seeded with the
/// first table lookup and then receives exactly m_books - 1 additions.
/// Templated over the table and accumulator so tests can count operations.
template <typename Table, typename Acc = double>
void score_codes_kernel(const EncodedDatabase& db, const Table& table, Acc* out) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < std::int64_t(db.count); ++i) {
        Acc acc = table.lookup(0, db.code(std::size_t(i), 0));
        for (std::uint32_t m = 1; m < db.m_books; ++m) {
            acc += table.lookup(m, db.code(std::size_t(i), m));
        }
        out[i] = acc;
    }
}

/// Orthonormality-simplified asymmetric scores: score_i = sum over subspaces
/// of the query probability at the item's code. Higher is better. Refuses
/// databases whose codes did not come from an orthonormal codebook set.
std::vector<double> score_orthonormal(const QuerySoftRep& q, const EncodedDatabase& db);

/// Exact asymmetric quantization distance, valid for any codebook set:
/// distance_i = sum over subspaces of |C_m p_m - codeword(code_i_m)|^2.
/// Lower is better.
std::vector<double> aqd_bruteforce(const QuerySoftRep& q, const EncodedDatabase& db,
                                   const CodebookSet& codebooks);

/// k best ids by descending score (ascending id on ties), via partial
/// selection. Returns all ids when k exceeds the database size.
RankedResult top_k(std::span<const double> scores, std::uint32_t k);

/// Full retrieval for one query. Uses the lookup-table scoring when the
/// model's codebooks are orthonormal and falls back to exact AQD otherwise
/// (reporting negated distances as scores).
RankedResult query(const ModelParams& model, const EncodedDatabase& db,
                   std::span<const double> embedding, std::uint32_t k);

void save_database(const EncodedDatabase& db, const std::string& path);
EncodedDatabase load_database(const std::string& path);

}  // namespace opqn
