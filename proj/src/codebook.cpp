#include "opqn/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "opqn/binary_io.hpp"
#include "opqn/kernels.hpp"

namespace opqn {

namespace {

bool power_of_two(std::uint32_t v) { return v >= 1 && (v & (v - 1)) == 0; }

}  // namespace

void CodebookSpec::validate_dims() const {
    if (m_books < 1) throw std::invalid_argument("m_books must be >= 1");
    if (sub_dim < 1) throw std::invalid_argument("sub_dim must be >= 1");
    if (k_words < 1) throw std::invalid_argument("k_words must be >= 1");
    if (k_words > sub_dim) {
        throw std::invalid_argument("k_words must not exceed sub_dim (got K=" +
                                    std::to_string(k_words) + ", d=" + std::to_string(sub_dim) +
                                    ")");
    }
}

void CodebookSpec::validate() const {
    validate_dims();
    if (k_words < 2 || !power_of_two(k_words)) {
        throw std::invalid_argument("k_words must be a power of two >= 2 (got " +
                                    std::to_string(k_words) + ")");
    }
}

std::uint32_t CodebookSpec::code_bits() const {
    std::uint32_t bits = 0;
    for (std::uint32_t v = k_words; v > 1; v >>= 1) ++bits;
    return m_books * bits;
}

std::vector<double> dct_basis(std::uint32_t d) {
    if (d < 1) throw std::invalid_argument("sub_dim must be >= 1");
    std::vector<double> a(std::size_t(d) * d);
    for (std::uint32_t i = 0; i < d; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) {
            a[std::size_t(i) * d + j] =
                std::cos((double(j) * std::numbers::pi / double(d)) * (double(i) + 0.5));
        }
    }
    return a;
}

std::vector<double> orthogonalize_basis(std::vector<double> a, std::uint32_t d) {
    if (a.size() != std::size_t(d) * d) throw std::invalid_argument("basis shape mismatch");
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    for (std::uint32_t i = 0; i < d; ++i) a[std::size_t(i) * d] *= inv_sqrt2;
    const double scale = std::sqrt(2.0) / std::sqrt(double(d));
    for (double& v : a) v *= scale;
    return a;
}

CodebookSet generate_orthonormal_codebooks(const CodebookSpec& spec) {
    spec.validate_dims();
    const std::uint32_t d = spec.sub_dim;
    const std::uint32_t k = spec.k_words;

    const std::vector<double> basis = orthogonalize_basis(dct_basis(d), d);

    CodebookSet set;
    set.spec = spec;
    set.orthonormal = true;
    set.books.reserve(spec.m_books);

    Codebook first(d, k);
    for (std::uint32_t c = 0; c < k; ++c) {
        for (std::uint32_t r = 0; r < d; ++r) first.at(r, c) = basis[std::size_t(r) * d + c];
    }
    set.books.push_back(std::move(first));

    for (std::uint32_t m = 1; m < spec.m_books; ++m) {
        Codebook next;
        kern::matmul_rm_cm(basis.data(), d, set.books.back(), next);
        set.books.push_back(std::move(next));
    }
    return set;
}

OrthonormalityReport validate_orthonormality(const CodebookSet& set, double tol) {
    OrthonormalityReport report;
    for (const Codebook& book : set.books) {
        report.max_gram_residual = std::max(report.max_gram_residual, kern::max_gram_residual(book));
    }
    report.pass = report.max_gram_residual <= tol;
    return report;
}

CodebookSet perturb_codebooks(const CodebookSet& set, double variance, std::uint64_t seed) {
    if (variance < 0.0) throw std::invalid_argument("variance must be >= 0");
    CodebookSet out = set;
    if (variance == 0.0) return out;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, std::sqrt(variance));
    for (Codebook& book : out.books) {
        for (double& v : book.data) v += noise(rng);
    }
    out.orthonormal = false;
    return out;
}

AngularHistogram angular_histogram(const CodebookSet& set, double bin_width_deg) {
    if (bin_width_deg <= 0.0) throw std::invalid_argument("bin width must be > 0");

    AngularHistogram hist;
    hist.bin_width_deg = bin_width_deg;
    const std::size_t bins = std::size_t(std::ceil(180.0 / bin_width_deg));
    hist.counts.assign(bins, 0.0);

    std::size_t pairs = 0;
    for (const Codebook& book : set.books) {
        for (std::uint32_t a = 0; a < book.cols; ++a) {
            for (std::uint32_t b = a + 1; b < book.cols; ++b) {
                const double na = std::sqrt(kern::dot(book.col(a), book.col(a), book.rows));
                const double nb = std::sqrt(kern::dot(book.col(b), book.col(b), book.rows));
                double cosv = kern::dot(book.col(a), book.col(b), book.rows) / (na * nb);
                cosv = std::clamp(cosv, -1.0, 1.0);
                const double deg = std::acos(cosv) * 180.0 / std::numbers::pi;
                std::size_t bin = std::size_t(deg / bin_width_deg);
                if (bin >= bins) bin = bins - 1;
                hist.counts[bin] += 1.0;
                ++pairs;
            }
        }
    }
    if (pairs == 0) {
        throw std::invalid_argument("angular histogram needs at least one codebook with K >= 2");
    }
    for (double& c : hist.counts) c /= double(pairs);
    return hist;
}

void write_codebooks(const CodebookSet& set, std::ostream& os) {
    io::write_magic(os, "OPQC");
    io::write_u32(os, 1);
    io::write_u32(os, set.spec.m_books);
    io::write_u32(os, set.spec.sub_dim);
    io::write_u32(os, set.spec.k_words);
    io::write_u8(os, set.orthonormal ? 1 : 0);
    for (const Codebook& book : set.books) {
        // codeword-major: each codeword's d components are contiguous
        io::write_bytes(os, book.data.data(), book.data.size() * sizeof(double));
    }
}

CodebookSet read_codebooks(std::istream& is) {
    io::expect_magic(is, "OPQC", "codebook file");
    io::expect_version(is, 1, "codebook file");

    CodebookSet set;
    set.spec.m_books = io::read_u32(is);
    set.spec.sub_dim = io::read_u32(is);
    set.spec.k_words = io::read_u32(is);
    set.orthonormal = io::read_u8(is) != 0;
    set.spec.validate_dims();

    set.books.reserve(set.spec.m_books);
    for (std::uint32_t m = 0; m < set.spec.m_books; ++m) {
        Codebook book(set.spec.sub_dim, set.spec.k_words);
        io::read_bytes(is, book.data.data(), book.data.size() * sizeof(double));
        set.books.push_back(std::move(book));
    }
    return set;
}

void save_codebooks(const CodebookSet& set, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_codebooks(set, os);
}

CodebookSet load_codebooks(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return read_codebooks(is);
}

}  // namespace opqn
