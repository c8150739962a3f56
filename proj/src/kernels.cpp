#include "opqn/kernels.hpp"

#include <cmath>
#include <cstring>

namespace opqn::kern {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void tmatvec(const ColMat& a, const double* x, double* out) {
    for (std::uint32_t k = 0; k < a.cols; ++k) out[k] = dot(x, a.col(k), a.rows);
}

void colcomb(const ColMat& a, const double* p, double* out) {
    std::memset(out, 0, sizeof(double) * a.rows);
    for (std::uint32_t k = 0; k < a.cols; ++k) axpy(p[k], a.col(k), out, a.rows);
}

void matmul_rm_cm(const double* a, std::uint32_t d, const ColMat& b, ColMat& out) {
    out.rows = d;
    out.cols = b.cols;
    out.data.assign(std::size_t(d) * b.cols, 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < std::int64_t(b.cols); ++k) {
        const double* bk = b.col(std::uint32_t(k));
        double* ok = out.col(std::uint32_t(k));
        for (std::uint32_t i = 0; i < d; ++i) {
            const double* arow = a + std::size_t(i) * d;
            double acc = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) acc += arow[j] * bk[j];
            ok[i] = acc;
        }
    }
}

double max_gram_residual(const ColMat& c) {
    double worst = 0.0;
#pragma omp parallel for schedule(static) reduction(max : worst)
    for (std::int64_t k = 0; k < std::int64_t(c.cols); ++k) {
        for (std::uint32_t j = 0; j < c.cols; ++j) {
            const double g = dot(c.col(std::uint32_t(k)), c.col(j), c.rows);
            const double r = std::fabs(g - (std::uint32_t(k) == j ? 1.0 : 0.0));
            if (r > worst) worst = r;
        }
    }
    return worst;
}

void accum_outer(const double* x0, std::size_t xstride, const double* u0, std::size_t ustride,
                 std::size_t n, ColMat& g) {
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < std::int64_t(g.cols); ++k) {
        double* gk = g.col(std::uint32_t(k));
        for (std::size_t i = 0; i < n; ++i) {
            axpy(u0[i * ustride + std::size_t(k)], x0 + i * xstride, gk, g.rows);
        }
    }
}

}  // namespace opqn::kern

namespace opqn::ref {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void tmatvec(const ColMat& a, const double* x, double* out) {
    for (std::uint32_t k = 0; k < a.cols; ++k) {
        double acc = 0.0;
        for (std::uint32_t i = 0; i < a.rows; ++i) acc += x[i] * a.data[std::size_t(k) * a.rows + i];
        out[k] = acc;
    }
}

void colcomb(const ColMat& a, const double* p, double* out) {
    for (std::uint32_t i = 0; i < a.rows; ++i) {
        double acc = 0.0;
        for (std::uint32_t k = 0; k < a.cols; ++k) acc += p[k] * a.data[std::size_t(k) * a.rows + i];
        out[i] = acc;
    }
}

void matmul_rm_cm(const double* a, std::uint32_t d, const ColMat& b, ColMat& out) {
    out.rows = d;
    out.cols = b.cols;
    out.data.assign(std::size_t(d) * b.cols, 0.0);
    for (std::uint32_t k = 0; k < b.cols; ++k) {
        for (std::uint32_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) {
                acc += a[std::size_t(i) * d + j] * b.data[std::size_t(k) * d + j];
            }
            out.data[std::size_t(k) * d + i] = acc;
        }
    }
}

double max_gram_residual(const ColMat& c) {
    double worst = 0.0;
    for (std::uint32_t k = 0; k < c.cols; ++k) {
        for (std::uint32_t j = 0; j < c.cols; ++j) {
            double g = 0.0;
            for (std::uint32_t i = 0; i < c.rows; ++i) {
                g += c.data[std::size_t(k) * c.rows + i] * c.data[std::size_t(j) * c.rows + i];
            }
            const double r = std::fabs(g - (k == j ? 1.0 : 0.0));
            if (r > worst) worst = r;
        }
    }
    return worst;
}

void accum_outer(const double* x0, std::size_t xstride, const double* u0, std::size_t ustride,
                 std::size_t n, ColMat& g) {
    for (std::uint32_t k = 0; k < g.cols; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            const double u = u0[i * ustride + k];
            for (std::uint32_t r = 0; r < g.rows; ++r) {
                g.data[std::size_t(k) * g.rows + r] += u * x0[i * xstride + r];
            }
        }
    }
}

void score_codes(const std::uint8_t* codes, std::size_t n, std::uint32_t m_books,
                 std::uint32_t code_bytes, const double* lut, std::uint32_t k_words, double* out) {
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::uint32_t m = 0; m < m_books; ++m) {
            std::size_t off = (i * m_books + m) * code_bytes;
            std::uint32_t code = codes[off];
            if (code_bytes == 2) code |= std::uint32_t(codes[off + 1]) << 8;
            if (m == 0) {
                acc = lut[std::size_t(m) * k_words + code];
            } else {
                acc += lut[std::size_t(m) * k_words + code];
            }
        }
        out[i] = acc;
    }
}

}  // namespace opqn::ref
