#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "opqn/matrix.hpp"

namespace opqn {

/// Geometry of a codebook set: M codebooks of K codewords in dimension d.
/// K may not exceed d (the generating transform is a d x d orthogonal matrix)
/// and must be a power of two >= 2 so that the code length M*log2(K) is a
/// whole number of bits.
struct CodebookSpec {
    std::uint32_t m_books = 1;
    std::uint32_t sub_dim = 1;
    std::uint32_t k_words = 2;

    /// Shape constraints needed by the matrix machinery (any K <= d works).
    void validate_dims() const;
    /// Full spec-level validation: dims plus K a power of two >= 2.
    void validate() const;

    std::uint32_t code_bits() const;
};

/// A codebook is a sub_dim x k_words matrix whose columns are the codewords.
using Codebook = ColMat;

struct CodebookSet {
    CodebookSpec spec;
    std::vector<Codebook> books;
    /// True only for the deterministic generator's untouched output. Cleared
    /// by perturbation and by codeword training.
    bool orthonormal = false;
};

struct OrthonormalityReport {
    double max_gram_residual = 0.0;
    bool pass = false;
};

struct AngularHistogram {
    double bin_width_deg = 0.5;
    std::vector<double> counts;  // normalized frequencies over [0, 180] degrees
};

/// Raw DCT-II basis: A[i][j] = cos((j*pi/d) * (i + 1/2)), row-major d x d.
std::vector<double> dct_basis(std::uint32_t sub_dim);

/// Rescales the raw basis into an orthogonal matrix: first column divided by
/// sqrt(2), then the whole matrix scaled by sqrt(2)/sqrt(d).
std::vector<double> orthogonalize_basis(std::vector<double> a, std::uint32_t sub_dim);

/// Deterministic codebook chain: C_1 is the first K columns of the
/// orthogonalized basis, and each following book is that basis times the
/// previous book. Rejects k_words > sub_dim.
CodebookSet generate_orthonormal_codebooks(const CodebookSpec& spec);

OrthonormalityReport validate_orthonormality(const CodebookSet& set, double tol);

/// Adds i.i.d. zero-mean Gaussian noise of the given variance to every entry.
/// variance == 0 returns the input unchanged.
CodebookSet perturb_codebooks(const CodebookSet& set, double variance, std::uint64_t seed);

/// Histogram of angles between all within-codebook codeword pairs, over all
/// books with K >= 2, normalized to sum 1. Throws if no such pair exists.
AngularHistogram angular_histogram(const CodebookSet& set, double bin_width_deg);

void write_codebooks(const CodebookSet& set, std::ostream& os);
CodebookSet read_codebooks(std::istream& is);
void save_codebooks(const CodebookSet& set, const std::string& path);
CodebookSet load_codebooks(const std::string& path);

}  // namespace opqn
