#include "opqn/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "opqn/binary_io.hpp"
#include "opqn/kernels.hpp"
#include "opqn/quantizer.hpp"

namespace opqn {

namespace {

struct FlatLut {
    const double* lut;
    std::uint32_t k_words;
    double lookup(std::uint32_t m, std::uint32_t code) const {
        return lut[std::size_t(m) * k_words + code];
    }
};

}  // namespace

void EncodedDatabase::validate() const {
    if (count < 1) throw std::invalid_argument("encoded database must contain at least one item");
    if (m_books < 1 || k_words < 1) throw std::invalid_argument("invalid code geometry");
    if (code_bytes != (k_words > 256 ? 2u : 1u)) {
        throw std::invalid_argument("code width inconsistent with k_words");
    }
    if (codes.size() != std::size_t(count) * m_books * code_bytes || labels.size() != count) {
        throw std::invalid_argument("encoded database buffer sizes inconsistent");
    }
    for (std::size_t i = 0; i < count; ++i) {
        for (std::uint32_t m = 0; m < m_books; ++m) {
            if (code(i, m) >= k_words) throw std::invalid_argument("code out of range");
        }
    }
}

EncodedDatabase encode_database(const ModelParams& model, const EmbeddingDataset& embeddings) {
    model.validate();
    embeddings.validate();
    if (embeddings.dim != model.input_dim) {
        throw std::invalid_argument("encode_database: embedding dim does not match model input");
    }

    EncodedDatabase db;
    db.count = embeddings.count;
    db.m_books = model.m_books();
    db.k_words = model.k_words();
    db.code_bytes = db.k_words > 256 ? 2 : 1;
    db.codes.resize(std::size_t(db.count) * db.m_books * db.code_bytes);
    db.labels = embeddings.labels;
    db.fingerprint = model_fingerprint(model);
    db.codebooks_orthonormal = model.codebooks.orthonormal;

    const std::uint32_t d = model.sub_dim(), bd = model.bottleneck_dim;
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < std::int64_t(db.count); ++ii) {
        const std::size_t i = std::size_t(ii);
        std::vector<double> bottleneck(bd);
        kern::tmatvec(model.encoder, embeddings.row(i).data(), bottleneck.data());
        for (std::uint32_t m = 0; m < db.m_books; ++m) {
            const std::span<const double> x{bottleneck.data() + std::size_t(m) * d, d};
            const std::vector<double> g = assignment_logits(x, model.transforms[m]);
            const std::vector<double> p = assignment_probabilities(g);
            db.set_code(i, m, hard_assign(p));
        }
    }
    return db;
}

QuerySoftRep query_soft_rep(const ModelParams& model, std::span<const double> embedding) {
    model.validate();
    if (embedding.size() != model.input_dim) {
        throw std::invalid_argument("query_soft_rep: embedding dim does not match model input");
    }
    const std::uint32_t d = model.sub_dim();
    std::vector<double> bottleneck(model.bottleneck_dim);
    kern::tmatvec(model.encoder, embedding.data(), bottleneck.data());

    QuerySoftRep rep;
    rep.probs.reserve(model.m_books());
    for (std::uint32_t m = 0; m < model.m_books(); ++m) {
        const std::span<const double> x{bottleneck.data() + std::size_t(m) * d, d};
        rep.probs.push_back(assignment_probabilities(assignment_logits(x, model.transforms[m])));
    }
    return rep;
}

std::vector<double> flatten_lut(const QuerySoftRep& q, std::uint32_t k_words) {
    std::vector<double> lut(q.probs.size() * k_words);
    for (std::size_t m = 0; m < q.probs.size(); ++m) {
        if (q.probs[m].size() != k_words) {
            throw std::invalid_argument("query representation does not match code geometry");
        }
        std::copy(q.probs[m].begin(), q.probs[m].end(), lut.begin() + m * k_words);
    }
    return lut;
}

std::vector<double> score_orthonormal(const QuerySoftRep& q, const EncodedDatabase& db) {
    if (!db.codebooks_orthonormal) {
        throw std::invalid_argument(
            "score_orthonormal requires an orthonormal codebook set; use aqd_bruteforce");
    }
    if (q.probs.size() != db.m_books) {
        throw std::invalid_argument("query representation does not match code geometry");
    }
    const std::vector<double> lut = flatten_lut(q, db.k_words);
    std::vector<double> scores(db.count);
    score_codes_kernel(db, FlatLut{lut.data(), db.k_words}, scores.data());
    return scores;
}

std::vector<double> aqd_bruteforce(const QuerySoftRep& q, const EncodedDatabase& db,
                                   const CodebookSet& codebooks) {
    if (q.probs.size() != db.m_books || codebooks.books.size() != db.m_books) {
        throw std::invalid_argument("aqd_bruteforce: subspace count mismatch");
    }
    const std::uint32_t d = codebooks.spec.sub_dim;
    // reconstruct the query's soft quantization once per subspace
    std::vector<std::vector<double>> soft(db.m_books);
    for (std::uint32_t m = 0; m < db.m_books; ++m) {
        if (q.probs[m].size() != codebooks.books[m].cols) {
            throw std::invalid_argument("aqd_bruteforce: probability length mismatch");
        }
        soft[m] = soft_quantize(q.probs[m], codebooks.books[m]);
    }

    std::vector<double> dist(db.count);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < std::int64_t(db.count); ++ii) {
        const std::size_t i = std::size_t(ii);
        double acc = 0.0;
        for (std::uint32_t m = 0; m < db.m_books; ++m) {
            const double* s = soft[m].data();
            const double* h = codebooks.books[m].col(db.code(i, m));
            for (std::uint32_t j = 0; j < d; ++j) {
                const double diff = s[j] - h[j];
                acc += diff * diff;
            }
        }
        dist[i] = acc;
    }
    return dist;
}

RankedResult top_k(std::span<const double> scores, std::uint32_t k) {
    if (k < 1) throw std::invalid_argument("top_k: k must be >= 1");
    const std::size_t n = scores.size();
    std::vector<std::uint32_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0u);
    const std::size_t take = std::min<std::size_t>(k, n);
    const auto better = [&scores](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(ids.begin(), ids.begin() + take, ids.end(), better);

    RankedResult out;
    out.hits.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.hits.emplace_back(ids[i], scores[ids[i]]);
    return out;
}

RankedResult query(const ModelParams& model, const EncodedDatabase& db,
                   std::span<const double> embedding, std::uint32_t k) {
    if (db.fingerprint != model_fingerprint(model)) {
        throw std::invalid_argument("query: database was encoded by a different checkpoint");
    }
    const QuerySoftRep rep = query_soft_rep(model, embedding);
    if (model.codebooks.orthonormal) {
        return top_k(score_orthonormal(rep, db), k);
    }
    std::vector<double> dist = aqd_bruteforce(rep, db, model.codebooks);
    for (double& v : dist) v = -v;
    return top_k(dist, k);
}

void save_database(const EncodedDatabase& db, const std::string& path) {
    db.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    io::write_magic(os, "OPQB");
    io::write_u32(os, 1);
    io::write_u32(os, db.count);
    io::write_u32(os, db.m_books);
    io::write_u32(os, db.k_words);
    io::write_bytes(os, db.fingerprint.data(), db.fingerprint.size());
    io::write_bytes(os, db.labels.data(), db.labels.size() * sizeof(std::uint32_t));
    io::write_bytes(os, db.codes.data(), db.codes.size());
}

EncodedDatabase load_database(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    io::expect_magic(is, "OPQB", "database file");
    io::expect_version(is, 1, "database file");

    EncodedDatabase db;
    db.count = io::read_u32(is);
    db.m_books = io::read_u32(is);
    db.k_words = io::read_u32(is);
    db.code_bytes = db.k_words > 256 ? 2 : 1;
    io::read_bytes(is, db.fingerprint.data(), db.fingerprint.size());
    db.labels.resize(db.count);
    io::read_bytes(is, db.labels.data(), db.labels.size() * sizeof(std::uint32_t));
    db.codes.resize(std::size_t(db.count) * db.m_books * db.code_bytes);
    io::read_bytes(is, db.codes.data(), db.codes.size());
    db.codebooks_orthonormal = false;  // unknown until paired with a checkpoint
    db.validate();
    return db;
}

}  // namespace opqn
