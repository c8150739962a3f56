#include "opqn/metric_loss.hpp"

#include <cmath>
#include <stdexcept>

#include "opqn/kernels.hpp"

namespace opqn {

void Hyperparams::validate() const {
    if (!(scale_r > 0.0)) throw std::invalid_argument("scale_r must be > 0");
    if (!(margin_u >= 0.0 && margin_u < 1.0)) {
        throw std::invalid_argument("margin_u must be in [0, 1)");
    }
    if (!(entropy_weight >= 0.0)) throw std::invalid_argument("entropy_weight must be >= 0");
}

double normalize_or_throw(double* v, std::size_t n) {
    const double norm = std::sqrt(kern::dot(v, v, n));
    if (norm < 1e-12) throw std::invalid_argument("degenerate sub-vector: norm below 1e-12");
    for (std::size_t i = 0; i < n; ++i) v[i] /= norm;
    return norm;
}

ColMat normalized_columns(const ColMat& w) {
    ColMat out = w;
    for (std::uint32_t c = 0; c < out.cols; ++c) normalize_or_throw(out.col(c), out.rows);
    return out;
}

double margin_loss_subspace(const double* features, std::size_t n, std::uint32_t d,
                            const std::uint32_t* labels, const ColMat& w_unit, double r,
                            double u) {
    if (w_unit.rows != d) throw std::invalid_argument("margin loss: feature/weight dim mismatch");
    const std::uint32_t n_classes = w_unit.cols;

    double acc = 0.0;
    std::vector<double> z(n_classes);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t y = labels[i];
        if (y >= n_classes) throw std::invalid_argument("label out of range");
        const double* f = features + i * d;
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            const double cosv = kern::dot(f, w_unit.col(c), d);
            z[c] = (c == y) ? r * (cosv - u) : r * cosv;
        }
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - mx);
        acc += -(z[y] - mx) + std::log(sum);
    }
    return acc / double(n);
}

double joint_classification_loss(const std::vector<std::vector<double>>& x_subs,
                                 const std::vector<std::vector<double>>& s_subs,
                                 std::span<const std::uint32_t> labels, std::uint32_t d,
                                 const std::vector<ColMat>& w_unit, double r, double u) {
    if (x_subs.size() != s_subs.size() || x_subs.size() != w_unit.size()) {
        throw std::invalid_argument("joint loss: subspace count mismatch");
    }
    const std::size_t m = x_subs.size();
    const std::size_t n = labels.size();
    double acc = 0.0;
    for (std::size_t sub = 0; sub < m; ++sub) {
        acc += margin_loss_subspace(x_subs[sub].data(), n, d, labels.data(), w_unit[sub], r, u);
        acc += margin_loss_subspace(s_subs[sub].data(), n, d, labels.data(), w_unit[sub], r, u);
    }
    return acc / (2.0 * double(m));
}

double entropy_loss(const double* p, std::size_t n, std::uint32_t m, std::uint32_t k) {
    double acc = 0.0;
    const std::size_t total = n * std::size_t(m) * k;
    for (std::size_t i = 0; i < total; ++i) {
        const double v = p[i];
        if (v > 0.0) acc -= v * std::log(v);
    }
    return acc / (double(n) * double(m));
}

LossBreakdown total_loss(double l_x, double l_s, double l_ent, const Hyperparams& hp,
                         const LossFlags& flags) {
    LossBreakdown out;
    out.l_x = l_x;
    out.l_s = l_s;
    out.l_ent = l_ent;
    out.l_clf = ((flags.include_lx ? l_x : 0.0) + l_s) / 2.0;
    const double lambda = flags.include_lent ? hp.entropy_weight : 0.0;
    out.total = out.l_clf + lambda * l_ent;
    return out;
}

}  // namespace opqn
