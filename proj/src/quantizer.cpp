#include "opqn/quantizer.hpp"

#include <cmath>
#include <stdexcept>

#include "opqn/kernels.hpp"

namespace opqn {

std::vector<double> assignment_logits(std::span<const double> x, const ColMat& f) {
    if (x.size() != f.rows) {
        throw std::invalid_argument("assignment_logits: sub-vector length " +
                                    std::to_string(x.size()) + " != transform rows " +
                                    std::to_string(f.rows));
    }
    std::vector<double> g(f.cols);
    kern::tmatvec(f, x.data(), g.data());
    return g;
}

std::vector<double> assignment_probabilities(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("assignment_probabilities: empty logits");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - mx);
        sum += p[k];
    }
    for (double& v : p) v /= sum;
    return p;
}

std::vector<double> soft_quantize(std::span<const double> p, const ColMat& codebook) {
    if (p.size() != codebook.cols) {
        throw std::invalid_argument("soft_quantize: probability length " +
                                    std::to_string(p.size()) + " != codeword count " +
                                    std::to_string(codebook.cols));
    }
    std::vector<double> s(codebook.rows);
    kern::colcomb(codebook, p.data(), s.data());
    return s;
}

std::uint32_t hard_assign(std::span<const double> p) {
    if (p.empty()) throw std::invalid_argument("hard_assign: empty probability vector");
    std::uint32_t best = 0;
    for (std::uint32_t k = 1; k < p.size(); ++k) {
        if (p[k] > p[best]) best = k;
    }
    return best;
}

double quantization_gap(std::span<const double> p, const ColMat& codebook) {
    const std::vector<double> s = soft_quantize(p, codebook);
    const double* h = codebook.col(hard_assign(p));
    double acc = 0.0;
    for (std::uint32_t i = 0; i < codebook.rows; ++i) {
        const double d = s[i] - h[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

}  // namespace opqn
