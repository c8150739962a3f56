#include "opqn/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "opqn/binary_io.hpp"
#include "opqn/kernels.hpp"

namespace opqn {

namespace {

constexpr double kDegenerateNorm = 1e-12;

/// coef[c] = scale * r * (softmax(z)_c - delta_{cy}) with z_c = r*cos_c and
/// the margin folded into the target logit. Shares `z` as scratch.
void margin_coefs(const double* cos_row, std::uint32_t n_classes, std::uint32_t y, double r,
                  double u, double scale, std::vector<double>& z, double* coef) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        z[c] = (c == y) ? r * (cos_row[c] - u) : r * cos_row[c];
        mx = std::max(mx, z[c]);
    }
    double sum = 0.0;
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        z[c] = std::exp(z[c] - mx);
        sum += z[c];
    }
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        const double q = z[c] / sum;
        coef[c] = scale * r * (q - (c == y ? 1.0 : 0.0));
    }
}

/// -log softmax(z)_y with the margin folded into the target logit.
double margin_loss_term(const double* cos_row, std::uint32_t n_classes, std::uint32_t y, double r,
                        double u, std::vector<double>& z) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        z[c] = (c == y) ? r * (cos_row[c] - u) : r * cos_row[c];
        mx = std::max(mx, z[c]);
    }
    double sum = 0.0;
    for (std::uint32_t c = 0; c < n_classes; ++c) sum += std::exp(z[c] - mx);
    return -(z[y] - mx) + std::log(sum);
}

/// d/dv of f(v/|v|) given df = gradient at v_hat: (df - <v_hat,df>v_hat)/|v|.
void chain_through_normalization(const double* v_hat, double norm, const double* upstream,
                                 std::uint32_t d, double* out) {
    const double proj = kern::dot(v_hat, upstream, d);
    for (std::uint32_t i = 0; i < d; ++i) out[i] = (upstream[i] - proj * v_hat[i]) / norm;
}

void fill_uniform(ColMat& m, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : m.data) v = dist(rng);
}

}  // namespace

void ModelParams::validate() const {
    codebooks.spec.validate_dims();
    const std::uint32_t m = m_books(), d = sub_dim(), k = k_words();
    if (input_dim < 1) throw std::invalid_argument("model: input_dim must be >= 1");
    if (bottleneck_dim != m * d) throw std::invalid_argument("model: bottleneck must equal M*d");
    if (n_classes < 1) throw std::invalid_argument("model: n_classes must be >= 1");
    if (encoder.rows != input_dim || encoder.cols != bottleneck_dim) {
        throw std::invalid_argument("model: encoder shape mismatch");
    }
    if (codebooks.books.size() != m) throw std::invalid_argument("model: codebook count mismatch");
    if (transforms.size() != m || classifier.size() != m) {
        throw std::invalid_argument("model: per-subspace tensor count mismatch");
    }
    for (std::uint32_t i = 0; i < m; ++i) {
        if (transforms[i].rows != d || transforms[i].cols != k) {
            throw std::invalid_argument("model: transform shape mismatch");
        }
        if (classifier[i].rows != d || classifier[i].cols != n_classes) {
            throw std::invalid_argument("model: classifier shape mismatch");
        }
        if (codebooks.books[i].rows != d || codebooks.books[i].cols != k) {
            throw std::invalid_argument("model: codebook shape mismatch");
        }
    }
}

LossBreakdown forward(const ModelParams& params, const BatchView& batch, const Hyperparams& hp,
                      const LossFlags& flags, ForwardCache* cache_out) {
    params.validate();
    hp.validate();
    if (batch.count == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.dim != params.input_dim) throw std::invalid_argument("forward: feature dim mismatch");
    for (std::size_t i = 0; i < batch.count; ++i) {
        if (batch.labels[i] >= params.n_classes) {
            throw std::invalid_argument("forward: label out of range");
        }
    }

    const std::size_t n = batch.count;
    const std::uint32_t din = params.input_dim, m_books = params.m_books(), d = params.sub_dim(),
                        k = params.k_words(), n_classes = params.n_classes;
    const std::size_t bd = params.bottleneck_dim;

    ForwardCache local;
    ForwardCache& cc = cache_out ? *cache_out : local;
    cc = ForwardCache{};
    cc.count = n;
    cc.input_dim = din;
    cc.m_books = m_books;
    cc.sub_dim = d;
    cc.k_words = k;
    cc.n_classes = n_classes;
    cc.inputs.assign(batch.features, batch.features + n * din);
    cc.labels.assign(batch.labels, batch.labels + n);
    cc.bottleneck.resize(n * bd);
    cc.x_norm.resize(n * m_books);
    cc.x_hat.resize(n * bd);
    cc.probs.resize(n * std::size_t(m_books) * k);
    cc.soft.resize(n * bd);
    cc.s_norm.resize(n * m_books);
    cc.s_hat.resize(n * bd);
    cc.cos_x.resize(n * std::size_t(m_books) * n_classes);
    cc.cos_s.resize(n * std::size_t(m_books) * n_classes);
    cc.loss_x.resize(n * m_books);
    cc.loss_s.resize(n * m_books);
    cc.loss_ent.resize(n * m_books);

    cc.w_unit.reserve(m_books);
    cc.w_norm.resize(std::size_t(m_books) * n_classes);
    for (std::uint32_t m = 0; m < m_books; ++m) {
        ColMat w = params.classifier[m];
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            cc.w_norm[std::size_t(m) * n_classes + c] = normalize_or_throw(w.col(c), d);
        }
        cc.w_unit.push_back(std::move(w));
    }

    std::atomic<bool> degenerate{false};
    std::vector<std::uint8_t> hit(n, 0);

#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < std::int64_t(n); ++ii) {
        const std::size_t i = std::size_t(ii);
        if (degenerate.load(std::memory_order_relaxed)) continue;
        const std::uint32_t y = cc.labels[i];

        double* v = cc.bottleneck.data() + i * bd;
        kern::tmatvec(params.encoder, cc.inputs.data() + i * din, v);

        std::vector<double> logits(k), z(n_classes);
        bool bad = false;
        for (std::uint32_t m = 0; m < m_books && !bad; ++m) {
            const double* x = v + std::size_t(m) * d;
            const double xn = std::sqrt(kern::dot(x, x, d));
            if (xn < kDegenerateNorm) {
                bad = true;
                break;
            }
            cc.x_norm[i * m_books + m] = xn;
            double* xh = cc.x_hat.data() + i * bd + std::size_t(m) * d;
            for (std::uint32_t j = 0; j < d; ++j) xh[j] = x[j] / xn;

            kern::tmatvec(params.transforms[m], x, logits.data());
            double mx = logits[0];
            for (double g : logits) mx = std::max(mx, g);
            double sum = 0.0;
            double* p = cc.probs.data() + (i * m_books + m) * k;
            for (std::uint32_t j = 0; j < k; ++j) {
                p[j] = std::exp(logits[j] - mx);
                sum += p[j];
            }
            for (std::uint32_t j = 0; j < k; ++j) p[j] /= sum;

            double* s = cc.soft.data() + i * bd + std::size_t(m) * d;
            kern::colcomb(params.codebooks.books[m], p, s);
            const double sn = std::sqrt(kern::dot(s, s, d));
            if (sn < kDegenerateNorm) {
                bad = true;
                break;
            }
            cc.s_norm[i * m_books + m] = sn;
            double* sh = cc.s_hat.data() + i * bd + std::size_t(m) * d;
            for (std::uint32_t j = 0; j < d; ++j) sh[j] = s[j] / sn;

            double* cx = cc.cos_x.data() + (i * m_books + m) * n_classes;
            double* cs = cc.cos_s.data() + (i * m_books + m) * n_classes;
            const ColMat& w = cc.w_unit[m];
            for (std::uint32_t c = 0; c < n_classes; ++c) {
                cx[c] = kern::dot(xh, w.col(c), d);
                cs[c] = kern::dot(sh, w.col(c), d);
            }

            cc.loss_x[i * m_books + m] =
                margin_loss_term(cx, n_classes, y, hp.scale_r, hp.margin_u, z);
            cc.loss_s[i * m_books + m] =
                margin_loss_term(cs, n_classes, y, hp.scale_r, hp.margin_u, z);

            double ent = 0.0;
            for (std::uint32_t j = 0; j < k; ++j) {
                if (p[j] > 0.0) ent -= p[j] * std::log(p[j]);
            }
            cc.loss_ent[i * m_books + m] = ent;
        }
        if (bad) {
            degenerate.store(true, std::memory_order_relaxed);
            continue;
        }

        std::uint32_t pred = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            double acc = 0.0;
            for (std::uint32_t m = 0; m < m_books; ++m) {
                acc += cc.cos_x[(i * m_books + m) * n_classes + c];
            }
            if (acc > best) {
                best = acc;
                pred = c;
            }
        }
        hit[i] = (pred == y) ? 1 : 0;
    }

    if (degenerate.load()) {
        throw std::invalid_argument("forward: degenerate sub-vector (norm below 1e-12)");
    }

    double sum_x = 0.0, sum_s = 0.0, sum_ent = 0.0;
    for (std::size_t i = 0; i < n * m_books; ++i) {
        sum_x += cc.loss_x[i];
        sum_s += cc.loss_s[i];
        sum_ent += cc.loss_ent[i];
    }
    cc.train_hits = 0;
    for (std::size_t i = 0; i < n; ++i) cc.train_hits += hit[i];

    const double denom = double(n) * double(m_books);
    return total_loss(sum_x / denom, sum_s / denom, sum_ent / denom, hp, flags);
}

std::vector<double> softmax_jacobian_apply(std::span<const double> p,
                                           std::span<const double> upstream) {
    if (p.size() != upstream.size()) {
        throw std::invalid_argument("softmax_jacobian_apply: size mismatch");
    }
    const double weighted = kern::dot(p.data(), upstream.data(), p.size());
    std::vector<double> out(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) out[k] = p[k] * (upstream[k] - weighted);
    return out;
}

ColMat grad_soft_quantization(std::span<const double> p, const ColMat& codebook,
                              std::span<const double> s) {
    if (p.size() != codebook.cols || s.size() != codebook.rows) {
        throw std::invalid_argument("grad_soft_quantization: shape mismatch");
    }
    ColMat out(codebook.rows, codebook.cols);
    for (std::uint32_t k = 0; k < codebook.cols; ++k) {
        const double* ck = codebook.col(k);
        double* ok = out.col(k);
        for (std::uint32_t i = 0; i < codebook.rows; ++i) ok[i] = p[k] * (ck[i] - s[i]);
    }
    return out;
}

std::vector<double> grad_entropy(std::span<const double> p) {
    double plogp = 0.0;
    for (double v : p) {
        if (v > 0.0) plogp += v * std::log(v);
    }
    std::vector<double> out(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        out[k] = (p[k] > 0.0) ? p[k] * (plogp - std::log(p[k])) : 0.0;
    }
    return out;
}

Gradients backward(const ModelParams& params, const ForwardCache& cc, const Hyperparams& hp,
                   const LossFlags& flags) {
    if (cc.count == 0 || cc.m_books != params.m_books() || cc.sub_dim != params.sub_dim() ||
        cc.k_words != params.k_words() || cc.n_classes != params.n_classes ||
        cc.input_dim != params.input_dim) {
        throw std::invalid_argument("backward: cache does not match model shape");
    }
    const std::size_t n = cc.count;
    const std::uint32_t din = cc.input_dim, m_books = cc.m_books, d = cc.sub_dim, k = cc.k_words,
                        n_classes = cc.n_classes;
    const std::size_t bd = std::size_t(m_books) * d;
    const bool l2q = params.mode == ModelParams::Mode::l2q;

    const double wx = flags.include_lx ? 1.0 / (2.0 * double(n) * double(m_books)) : 0.0;
    const double ws = 1.0 / (2.0 * double(n) * double(m_books));
    const double went =
        (flags.include_lent ? hp.entropy_weight : 0.0) / (double(n) * double(m_books));

    std::vector<double> vgrad(n * bd, 0.0);
    std::vector<double> upstream_g(n * std::size_t(m_books) * k);
    std::vector<double> coef_x(n * std::size_t(m_books) * n_classes);
    std::vector<double> coef_s(n * std::size_t(m_books) * n_classes);
    std::vector<double> ds_all(l2q ? n * bd : 0);

#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < std::int64_t(n); ++ii) {
        const std::size_t i = std::size_t(ii);
        const std::uint32_t y = cc.labels[i];
        std::vector<double> z(n_classes), dxhat(d), dshat(d), dxdir(d), ds(d), t(k), dxg(d);
        for (std::uint32_t m = 0; m < m_books; ++m) {
            const std::size_t im = i * m_books + m;
            const double* cx = cc.cos_x.data() + im * n_classes;
            const double* cs = cc.cos_s.data() + im * n_classes;
            double* qx = coef_x.data() + im * n_classes;
            double* qs = coef_s.data() + im * n_classes;
            margin_coefs(cx, n_classes, y, hp.scale_r, hp.margin_u, wx, z, qx);
            margin_coefs(cs, n_classes, y, hp.scale_r, hp.margin_u, ws, z, qs);

            const ColMat& w = cc.w_unit[m];
            kern::colcomb(w, qx, dxhat.data());
            kern::colcomb(w, qs, dshat.data());

            const double* xh = cc.x_hat.data() + i * bd + std::size_t(m) * d;
            const double* sh = cc.s_hat.data() + i * bd + std::size_t(m) * d;
            chain_through_normalization(xh, cc.x_norm[im], dxhat.data(), d, dxdir.data());
            chain_through_normalization(sh, cc.s_norm[im], dshat.data(), d, ds.data());
            if (l2q) {
                std::copy(ds.begin(), ds.end(), ds_all.begin() + i * bd + std::size_t(m) * d);
            }

            // s-path into the logits plus the entropy term
            const double* p = cc.probs.data() + im * k;
            const double* s = cc.soft.data() + i * bd + std::size_t(m) * d;
            kern::tmatvec(params.codebooks.books[m], ds.data(), t.data());
            const double sd = kern::dot(s, ds.data(), d);
            double plogp = 0.0;
            for (std::uint32_t j = 0; j < k; ++j) {
                if (p[j] > 0.0) plogp += p[j] * std::log(p[j]);
            }
            double* ug = upstream_g.data() + im * k;
            for (std::uint32_t j = 0; j < k; ++j) {
                double g = p[j] * (t[j] - sd);
                if (went != 0.0 && p[j] > 0.0) g += went * p[j] * (plogp - std::log(p[j]));
                ug[j] = g;
            }

            kern::colcomb(params.transforms[m], ug, dxg.data());
            double* vg = vgrad.data() + i * bd + std::size_t(m) * d;
            for (std::uint32_t j = 0; j < d; ++j) vg[j] = dxdir[j] + dxg[j];
        }
    }

    Gradients grads;
    grads.encoder = ColMat(din, std::uint32_t(bd));
    kern::accum_outer(cc.inputs.data(), din, vgrad.data(), bd, n, grads.encoder);

    grads.transforms.reserve(m_books);
    grads.classifier.reserve(m_books);
    if (l2q) grads.codebooks.reserve(m_books);
    for (std::uint32_t m = 0; m < m_books; ++m) {
        ColMat gf(d, k);
        kern::accum_outer(cc.bottleneck.data() + std::size_t(m) * d, bd,
                          upstream_g.data() + std::size_t(m) * k, std::size_t(m_books) * k, n, gf);
        grads.transforms.push_back(std::move(gf));

        ColMat gw_hat(d, n_classes);
        kern::accum_outer(cc.x_hat.data() + std::size_t(m) * d, bd,
                          coef_x.data() + std::size_t(m) * n_classes,
                          std::size_t(m_books) * n_classes, n, gw_hat);
        kern::accum_outer(cc.s_hat.data() + std::size_t(m) * d, bd,
                          coef_s.data() + std::size_t(m) * n_classes,
                          std::size_t(m_books) * n_classes, n, gw_hat);
        // chain through the per-column weight normalization
        ColMat gw(d, n_classes);
        const ColMat& w = cc.w_unit[m];
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            chain_through_normalization(w.col(c), cc.w_norm[std::size_t(m) * n_classes + c],
                                        gw_hat.col(c), d, gw.col(c));
        }
        grads.classifier.push_back(std::move(gw));

        if (l2q) {
            ColMat gc(d, k);
            kern::accum_outer(ds_all.data() + std::size_t(m) * d, bd,
                              cc.probs.data() + std::size_t(m) * k, std::size_t(m_books) * k, n,
                              gc);
            grads.codebooks.push_back(std::move(gc));
        }
    }
    return grads;
}

OptimizerState OptimizerState::make(const ModelParams& params, double momentum,
                                    double weight_decay) {
    OptimizerState s;
    s.momentum = momentum;
    s.weight_decay = weight_decay;
    s.v_encoder = ColMat(params.encoder.rows, params.encoder.cols);
    for (const ColMat& f : params.transforms) s.v_transforms.emplace_back(f.rows, f.cols);
    for (const ColMat& w : params.classifier) s.v_classifier.emplace_back(w.rows, w.cols);
    if (params.mode == ModelParams::Mode::l2q) {
        for (const Codebook& c : params.codebooks.books) s.v_codebooks.emplace_back(c.rows, c.cols);
    }
    return s;
}

namespace {

void sgd_apply(ColMat& param, const ColMat& grad, ColMat& vel, double lr, double momentum,
               double weight_decay) {
    if (param.data.size() != grad.data.size() || param.data.size() != vel.data.size()) {
        throw std::invalid_argument("sgd_step: shape mismatch");
    }
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        const double g = grad.data[i] + weight_decay * param.data[i];
        vel.data[i] = momentum * vel.data[i] + g;
        param.data[i] -= lr * vel.data[i];
    }
}

}  // namespace

void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state) {
    sgd_apply(params.encoder, grads.encoder, state.v_encoder, state.lr, state.momentum,
              state.weight_decay);
    for (std::size_t m = 0; m < params.transforms.size(); ++m) {
        sgd_apply(params.transforms[m], grads.transforms[m], state.v_transforms[m], state.lr,
                  state.momentum, state.weight_decay);
    }
    for (std::size_t m = 0; m < params.classifier.size(); ++m) {
        sgd_apply(params.classifier[m], grads.classifier[m], state.v_classifier[m], state.lr,
                  state.momentum, 0.0);
    }
    if (params.mode == ModelParams::Mode::l2q) {
        if (grads.codebooks.size() != params.codebooks.books.size()) {
            throw std::invalid_argument("sgd_step: missing codebook gradients in l2q mode");
        }
        for (std::size_t m = 0; m < params.codebooks.books.size(); ++m) {
            sgd_apply(params.codebooks.books[m], grads.codebooks[m], state.v_codebooks[m],
                      state.lr, state.momentum, 0.0);
        }
    }
}

double LrSchedule::at(std::uint32_t epoch) const {
    return initial * std::pow(decay, double(epoch / period));
}

void TrainConfig::validate() const {
    CodebookSpec spec{m_books, sub_dim, k_words};
    spec.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (lr.period < 1) throw std::invalid_argument("lr decay period must be >= 1");
    if (!(lr.initial > 0.0)) throw std::invalid_argument("initial lr must be > 0");
    hp.validate();
    if (codebooks) {
        if (codebooks->spec.m_books != m_books || codebooks->spec.sub_dim != sub_dim ||
            codebooks->spec.k_words != k_words) {
            throw std::invalid_argument("codebook override does not match the configured spec");
        }
    }
}

TrainResult train(const EmbeddingDataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    dataset.validate();

    // Compact the labels that actually occur into dense class ids.
    std::vector<std::uint32_t> class_ids(dataset.labels.begin(), dataset.labels.end());
    std::sort(class_ids.begin(), class_ids.end());
    class_ids.erase(std::unique(class_ids.begin(), class_ids.end()), class_ids.end());
    if (class_ids.size() < 2) throw std::invalid_argument("train: need at least 2 classes");
    const std::uint32_t n_classes = std::uint32_t(class_ids.size());
    std::vector<std::uint32_t> dense_of(dataset.n_classes, 0);
    for (std::uint32_t c = 0; c < n_classes; ++c) dense_of[class_ids[c]] = c;

    const std::uint32_t din = dataset.dim;
    const std::uint32_t bd = cfg.m_books * cfg.sub_dim;
    const std::size_t n = dataset.count;

    ModelParams params;
    params.input_dim = din;
    params.bottleneck_dim = bd;
    params.n_classes = n_classes;
    params.mode = cfg.mode;
    params.codebooks = cfg.codebooks
                           ? *cfg.codebooks
                           : generate_orthonormal_codebooks({cfg.m_books, cfg.sub_dim, cfg.k_words});
    if (cfg.mode == ModelParams::Mode::l2q) params.codebooks.orthonormal = false;

    std::mt19937_64 rng(cfg.seed);
    params.encoder = ColMat(din, bd);
    fill_uniform(params.encoder, 1.0 / std::sqrt(double(din)), rng);
    for (std::uint32_t m = 0; m < cfg.m_books; ++m) {
        ColMat f(cfg.sub_dim, cfg.k_words);
        fill_uniform(f, 1.0 / std::sqrt(double(cfg.sub_dim)), rng);
        params.transforms.push_back(std::move(f));
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::uint32_t m = 0; m < cfg.m_books; ++m) {
        ColMat w(cfg.sub_dim, n_classes);
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            double norm = 0.0;
            do {
                for (std::uint32_t j = 0; j < cfg.sub_dim; ++j) w.at(j, c) = gauss(rng);
                norm = std::sqrt(kern::dot(w.col(c), w.col(c), cfg.sub_dim));
            } while (norm < 1e-6);
            for (std::uint32_t j = 0; j < cfg.sub_dim; ++j) w.at(j, c) /= norm;
        }
        params.classifier.push_back(std::move(w));
    }
    params.validate();

    OptimizerState opt = OptimizerState::make(params, cfg.momentum, cfg.weight_decay);

    std::vector<std::uint32_t> labels_dense(n);
    for (std::size_t i = 0; i < n; ++i) labels_dense[i] = dense_of[dataset.labels[i]];

    std::vector<std::uint32_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = std::uint32_t(i);

    std::vector<double> batch_feats(std::size_t(cfg.batch_size) * din);
    std::vector<std::uint32_t> batch_labels(cfg.batch_size);

    TrainResult result;
    result.class_ids = class_ids;
    result.log.reserve(cfg.epochs);

    ForwardCache cache;
    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.lr = cfg.lr.at(epoch);
        std::shuffle(perm.begin(), perm.end(), rng);

        double sum_total = 0.0, sum_clf = 0.0, sum_ent = 0.0;
        std::size_t hits = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t bn = std::min<std::size_t>(cfg.batch_size, n - start);
            for (std::size_t b = 0; b < bn; ++b) {
                const std::uint32_t src = perm[start + b];
                const auto row = dataset.row(src);
                std::copy(row.begin(), row.end(), batch_feats.begin() + b * din);
                batch_labels[b] = labels_dense[src];
            }
            const BatchView view{batch_feats.data(), batch_labels.data(), bn, din};
            const LossBreakdown bd_loss = forward(params, view, cfg.hp, cfg.flags, &cache);
            const Gradients grads = backward(params, cache, cfg.hp, cfg.flags);
            sgd_step(params, grads, opt);

            sum_total += bd_loss.total * double(bn);
            sum_clf += bd_loss.l_clf * double(bn);
            sum_ent += bd_loss.l_ent * double(bn);
            hits += cache.train_hits;
        }

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.lr = opt.lr;
        entry.loss_total = sum_total / double(n);
        entry.loss_clf = sum_clf / double(n);
        entry.loss_ent = sum_ent / double(n);
        entry.train_acc = double(hits) / double(n);
        result.log.push_back(entry);
    }

    result.params = std::move(params);
    return result;
}

namespace {

void sweep_tensor(ModelParams& p, std::vector<double>& data, const std::vector<double>& analytic,
                  const char* name, const BatchView& batch, const Hyperparams& hp,
                  const LossFlags& flags, double h, GradCheckReport& report) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        data[i] = saved + h;
        const double fp = forward(p, batch, hp, flags).total;
        data[i] = saved - h;
        const double fm = forward(p, batch, hp, flags).total;
        data[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double rel =
            std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_tensor = name;
            report.worst_index = i;
        }
    }
}

}  // namespace

GradCheckReport grad_check_against(const ModelParams& params, const BatchView& batch,
                                   const Hyperparams& hp, const LossFlags& flags, double h,
                                   const Gradients& analytic) {
    ModelParams p = params;
    GradCheckReport report;
    sweep_tensor(p, p.encoder.data, analytic.encoder.data, "encoder", batch, hp, flags, h, report);
    for (std::size_t m = 0; m < p.transforms.size(); ++m) {
        sweep_tensor(p, p.transforms[m].data, analytic.transforms[m].data, "transform", batch, hp,
                     flags, h, report);
    }
    for (std::size_t m = 0; m < p.classifier.size(); ++m) {
        sweep_tensor(p, p.classifier[m].data, analytic.classifier[m].data, "classifier", batch, hp,
                     flags, h, report);
    }
    if (params.mode == ModelParams::Mode::l2q) {
        for (std::size_t m = 0; m < p.codebooks.books.size(); ++m) {
            sweep_tensor(p, p.codebooks.books[m].data, analytic.codebooks[m].data, "codebook",
                         batch, hp, flags, h, report);
        }
    }
    return report;
}

GradCheckReport grad_check(const ModelParams& params, const BatchView& batch,
                           const Hyperparams& hp, const LossFlags& flags, double h) {
    ForwardCache cache;
    forward(params, batch, hp, flags, &cache);
    const Gradients analytic = backward(params, cache, hp, flags);
    return grad_check_against(params, batch, hp, flags, h, analytic);
}

void write_model(const ModelParams& params, std::ostream& os) {
    params.validate();
    io::write_magic(os, "OPQM");
    io::write_u32(os, 1);
    io::write_u32(os, params.input_dim);
    io::write_u32(os, params.bottleneck_dim);
    io::write_u32(os, params.m_books());
    io::write_u32(os, params.sub_dim());
    io::write_u32(os, params.k_words());
    io::write_u32(os, params.n_classes);
    io::write_u8(os, std::uint8_t(params.mode));
    io::write_bytes(os, params.encoder.data.data(), params.encoder.data.size() * sizeof(double));
    for (const ColMat& f : params.transforms) {
        io::write_bytes(os, f.data.data(), f.data.size() * sizeof(double));
    }
    for (const ColMat& w : params.classifier) {
        io::write_bytes(os, w.data.data(), w.data.size() * sizeof(double));
    }
    write_codebooks(params.codebooks, os);
}

ModelParams read_model(std::istream& is) {
    io::expect_magic(is, "OPQM", "model file");
    io::expect_version(is, 1, "model file");

    ModelParams p;
    p.input_dim = io::read_u32(is);
    p.bottleneck_dim = io::read_u32(is);
    const std::uint32_t m = io::read_u32(is);
    const std::uint32_t d = io::read_u32(is);
    const std::uint32_t k = io::read_u32(is);
    p.n_classes = io::read_u32(is);
    p.mode = ModelParams::Mode(io::read_u8(is));

    p.encoder = ColMat(p.input_dim, p.bottleneck_dim);
    io::read_bytes(is, p.encoder.data.data(), p.encoder.data.size() * sizeof(double));
    for (std::uint32_t i = 0; i < m; ++i) {
        ColMat f(d, k);
        io::read_bytes(is, f.data.data(), f.data.size() * sizeof(double));
        p.transforms.push_back(std::move(f));
    }
    for (std::uint32_t i = 0; i < m; ++i) {
        ColMat w(d, p.n_classes);
        io::read_bytes(is, w.data.data(), w.data.size() * sizeof(double));
        p.classifier.push_back(std::move(w));
    }
    p.codebooks = read_codebooks(is);
    if (p.codebooks.spec.m_books != m || p.codebooks.spec.sub_dim != d ||
        p.codebooks.spec.k_words != k) {
        throw std::runtime_error("model file: embedded codebook block disagrees with header");
    }
    p.validate();
    return p;
}

void save_model(const ModelParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_model(params, os);
}

ModelParams load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return read_model(is);
}

std::vector<std::uint8_t> model_bytes(const ModelParams& params) {
    std::ostringstream os(std::ios::binary);
    write_model(params, os);
    const std::string s = os.str();
    return {s.begin(), s.end()};
}

Fingerprint model_fingerprint(const ModelParams& params) {
    const std::vector<std::uint8_t> bytes = model_bytes(params);
    return sha256(bytes);
}

void write_train_log_csv(const std::vector<TrainLogEntry>& log, std::ostream& os) {
    os << "epoch,lr,loss_total,loss_clf,loss_ent,train_acc\n";
    char buf[256];
    for (const TrainLogEntry& e : log) {
        std::snprintf(buf, sizeof(buf), "%u,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.lr,
                      e.loss_total, e.loss_clf, e.loss_ent, e.train_acc);
        os << buf;
    }
}

}  // namespace opqn
