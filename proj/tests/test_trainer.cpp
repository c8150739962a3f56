#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "opqn/codebook.hpp"
#include "opqn/quantizer.hpp"
#include "opqn/trainer.hpp"

using namespace opqn;

namespace {

struct TinySetup {
    ModelParams params;
    std::vector<double> feats;
    std::vector<std::uint32_t> labels;
    BatchView batch() const { return {feats.data(), labels.data(), labels.size(), params.input_dim}; }
};

TinySetup make_tiny(std::uint32_t din, std::uint32_t m, std::uint32_t d, std::uint32_t k,
                    std::uint32_t n_classes, std::size_t n, std::uint64_t seed,
                    ModelParams::Mode mode = ModelParams::Mode::orthonormal) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);

    TinySetup t;
    t.params.input_dim = din;
    t.params.bottleneck_dim = m * d;
    t.params.n_classes = n_classes;
    t.params.mode = mode;
    t.params.codebooks = generate_orthonormal_codebooks({m, d, k});
    if (mode == ModelParams::Mode::l2q) t.params.codebooks.orthonormal = false;
    t.params.encoder = ColMat(din, m * d);
    for (double& v : t.params.encoder.data) v = dist(rng) / std::sqrt(double(din));
    for (std::uint32_t i = 0; i < m; ++i) {
        ColMat f(d, k);
        for (double& v : f.data) v = dist(rng) / std::sqrt(double(d));
        t.params.transforms.push_back(std::move(f));
        ColMat w(d, n_classes);
        for (double& v : w.data) v = dist(rng);
        t.params.classifier.push_back(std::move(w));
    }
    t.feats.resize(n * din);
    for (double& v : t.feats) v = dist(rng);
    t.labels.resize(n);
    std::uniform_int_distribution<std::uint32_t> pick(0, n_classes - 1);
    for (auto& l : t.labels) l = pick(rng);
    return t;
}

// Straight-line reimplementation of the whole objective with plain loops,
// independent of the library's forward path.
double naive_total_loss(const ModelParams& p, const BatchView& b, const Hyperparams& hp,
                        const LossFlags& flags) {
    const std::uint32_t m_books = p.m_books(), d = p.sub_dim(), k = p.k_words(),
                        n_classes = p.n_classes;
    double sum_lx = 0.0, sum_ls = 0.0, sum_ent = 0.0;
    for (std::size_t i = 0; i < b.count; ++i) {
        // normalized classifier columns
        std::vector<std::vector<std::vector<double>>> w_hat(m_books);
        for (std::uint32_t m = 0; m < m_books; ++m) {
            w_hat[m].resize(n_classes);
            for (std::uint32_t c = 0; c < n_classes; ++c) {
                double norm = 0.0;
                for (std::uint32_t j = 0; j < d; ++j) {
                    const double v = p.classifier[m].at(j, c);
                    norm += v * v;
                }
                norm = std::sqrt(norm);
                w_hat[m][c].resize(d);
                for (std::uint32_t j = 0; j < d; ++j) {
                    w_hat[m][c][j] = p.classifier[m].at(j, c) / norm;
                }
            }
        }
        for (std::uint32_t m = 0; m < m_books; ++m) {
            std::vector<double> x(d, 0.0);
            for (std::uint32_t j = 0; j < d; ++j) {
                for (std::uint32_t in = 0; in < p.input_dim; ++in) {
                    x[j] += b.features[i * p.input_dim + in] * p.encoder.at(in, m * d + j);
                }
            }
            std::vector<double> g(k, 0.0);
            for (std::uint32_t kk = 0; kk < k; ++kk) {
                for (std::uint32_t j = 0; j < d; ++j) g[kk] += x[j] * p.transforms[m].at(j, kk);
            }
            double gmax = g[0];
            for (double v : g) gmax = std::max(gmax, v);
            std::vector<double> prob(k);
            double z = 0.0;
            for (std::uint32_t kk = 0; kk < k; ++kk) {
                prob[kk] = std::exp(g[kk] - gmax);
                z += prob[kk];
            }
            for (double& v : prob) v /= z;

            std::vector<double> s(d, 0.0);
            for (std::uint32_t kk = 0; kk < k; ++kk) {
                for (std::uint32_t j = 0; j < d; ++j) {
                    s[j] += prob[kk] * p.codebooks.books[m].at(j, kk);
                }
            }
            double xn = 0.0, sn = 0.0;
            for (std::uint32_t j = 0; j < d; ++j) {
                xn += x[j] * x[j];
                sn += s[j] * s[j];
            }
            xn = std::sqrt(xn);
            sn = std::sqrt(sn);

            auto margin = [&](const std::vector<double>& f, double norm) {
                std::vector<double> logits(n_classes);
                for (std::uint32_t c = 0; c < n_classes; ++c) {
                    double cosv = 0.0;
                    for (std::uint32_t j = 0; j < d; ++j) cosv += f[j] / norm * w_hat[m][c][j];
                    logits[c] = hp.scale_r * (cosv - (c == b.labels[i] ? hp.margin_u : 0.0));
                }
                double mx = logits[0];
                for (double v : logits) mx = std::max(mx, v);
                double lse = 0.0;
                for (double v : logits) lse += std::exp(v - mx);
                return -(logits[b.labels[i]] - mx) + std::log(lse);
            };
            sum_lx += margin(x, xn);
            sum_ls += margin(s, sn);
            for (double v : prob) {
                if (v > 0.0) sum_ent -= v * std::log(v);
            }
        }
    }
    const double denom = double(b.count) * double(m_books);
    const double l_clf = ((flags.include_lx ? sum_lx / denom : 0.0) + sum_ls / denom) / 2.0;
    const double lambda = flags.include_lent ? hp.entropy_weight : 0.0;
    return l_clf + lambda * sum_ent / denom;
}

EmbeddingDataset tiny_clusters(std::uint32_t classes, std::uint32_t per_class, std::uint32_t dim,
                               std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.classes = classes;
    cfg.per_class = per_class;
    cfg.dim = dim;
    cfg.noise_sigma = 0.1;
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

}  // namespace

TEST_CASE("forward matches an independent reimplementation") {
    const Hyperparams hp{3.0, 0.2, 0.1};
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const TinySetup t = make_tiny(8, 2, 4, 4, 3, 6, seed);
        const LossBreakdown got = forward(t.params, t.batch(), hp);
        CHECK(got.total ==
              doctest::Approx(naive_total_loss(t.params, t.batch(), hp, {})).epsilon(1e-9));
        CHECK(got.total == doctest::Approx(got.l_clf + hp.entropy_weight * got.l_ent).epsilon(1e-9));
        CHECK(got.l_clf == doctest::Approx((got.l_x + got.l_s) / 2.0).epsilon(1e-12));
    }
    SUBCASE("flags change the objective consistently") {
        const TinySetup t = make_tiny(8, 2, 4, 4, 3, 6, 9);
        for (const LossFlags flags : {LossFlags{false, true}, LossFlags{true, false}}) {
            const LossBreakdown got = forward(t.params, t.batch(), hp, flags);
            CHECK(got.total ==
                  doctest::Approx(naive_total_loss(t.params, t.batch(), hp, flags)).epsilon(1e-9));
        }
    }
}

TEST_CASE("forward batch semantics") {
    const Hyperparams hp{4.0, 0.1, 0.05};
    const TinySetup t = make_tiny(6, 2, 3, 2, 4, 5, 11);
    SUBCASE("duplicating every sample leaves the mean loss unchanged") {
        std::vector<double> feats2(2 * t.feats.size());
        std::vector<std::uint32_t> labels2(2 * t.labels.size());
        for (std::size_t i = 0; i < t.labels.size(); ++i) {
            std::copy_n(t.feats.begin() + i * 6, 6, feats2.begin() + (2 * i) * 6);
            std::copy_n(t.feats.begin() + i * 6, 6, feats2.begin() + (2 * i + 1) * 6);
            labels2[2 * i] = labels2[2 * i + 1] = t.labels[i];
        }
        const BatchView doubled{feats2.data(), labels2.data(), labels2.size(), 6};
        CHECK(forward(t.params, t.batch(), hp).total ==
              doctest::Approx(forward(t.params, doubled, hp).total).epsilon(1e-12));
    }
    SUBCASE("label out of range") {
        std::vector<std::uint32_t> bad = t.labels;
        bad[0] = 4;
        const BatchView view{t.feats.data(), bad.data(), bad.size(), 6};
        CHECK_THROWS_AS(forward(t.params, view, hp), std::invalid_argument);
    }
    SUBCASE("zero feature vector is degenerate") {
        std::vector<double> feats = t.feats;
        std::fill_n(feats.begin(), 6, 0.0);
        const BatchView view{feats.data(), t.labels.data(), t.labels.size(), 6};
        CHECK_THROWS_AS(forward(t.params, view, hp), std::invalid_argument);
    }
}

TEST_CASE("softmax jacobian apply") {
    SUBCASE("annihilates constant upstream vectors") {
        const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
        for (double v : softmax_jacobian_apply(p, std::vector<double>{7.0, 7.0, 7.0, 7.0})) {
            CHECK(std::fabs(v) < 1e-15);
        }
    }
    SUBCASE("hand value at the uniform point") {
        const auto out =
            softmax_jacobian_apply(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0});
        CHECK(out[0] == doctest::Approx(0.25));
        CHECK(out[1] == doctest::Approx(-0.25));
    }
    SUBCASE("matches finite differences of the softmax") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        const std::size_t k = 5;
        std::vector<double> g(k), up(k);
        for (double& v : g) v = dist(rng);
        for (double& v : up) v = dist(rng);
        auto softmax = [&](const std::vector<double>& logits) {
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            std::vector<double> p(logits.size());
            double sum = 0.0;
            for (std::size_t j = 0; j < logits.size(); ++j) {
                p[j] = std::exp(logits[j] - mx);
                sum += p[j];
            }
            for (double& v : p) v /= sum;
            return p;
        };
        const auto analytic = softmax_jacobian_apply(softmax(g), up);
        const double h = 1e-6;
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> gp = g, gm = g;
            gp[j] += h;
            gm[j] -= h;
            const auto pp = softmax(gp);
            const auto pm = softmax(gm);
            double numeric = 0.0;
            for (std::size_t a = 0; a < k; ++a) numeric += up[a] * (pp[a] - pm[a]) / (2.0 * h);
            CHECK(std::fabs(analytic[j] - numeric) < 1e-6);
        }
    }
}

TEST_CASE("soft quantization gradient") {
    const CodebookSet set = generate_orthonormal_codebooks({1, 4, 2});
    const Codebook& book = set.books[0];
    SUBCASE("one-hot probabilities freeze the quantization") {
        const std::vector<double> p{1.0, 0.0};
        const auto s = soft_quantize(p, book);
        const ColMat g = grad_soft_quantization(p, book, s);
        for (double v : g.data) CHECK(std::fabs(v) < 1e-15);
    }
    SUBCASE("uniform two-word case") {
        const std::vector<double> p{0.5, 0.5};
        const auto s = soft_quantize(p, book);
        const ColMat g = grad_soft_quantization(p, book, s);
        for (std::uint32_t j = 0; j < 4; ++j) {
            CHECK(g.at(j, 0) ==
                  doctest::Approx((book.at(j, 0) - book.at(j, 1)) / 4.0).epsilon(1e-12));
        }
    }
    SUBCASE("matches finite differences through the softmax") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<double> logits{dist(rng), dist(rng)};
        auto soft_of = [&](const std::vector<double>& g) {
            double mx = std::max(g[0], g[1]);
            double e0 = std::exp(g[0] - mx), e1 = std::exp(g[1] - mx);
            const double sum = e0 + e1;
            std::vector<double> s(4, 0.0);
            for (std::uint32_t j = 0; j < 4; ++j) {
                s[j] = (e0 / sum) * book.at(j, 0) + (e1 / sum) * book.at(j, 1);
            }
            return s;
        };
        double mx = std::max(logits[0], logits[1]);
        double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
        const std::vector<double> p{e0 / (e0 + e1), e1 / (e0 + e1)};
        const ColMat analytic = grad_soft_quantization(p, book, soft_of(logits));
        const double h = 1e-6;
        for (std::uint32_t kk = 0; kk < 2; ++kk) {
            std::vector<double> gp = logits, gm = logits;
            gp[kk] += h;
            gm[kk] -= h;
            const auto sp = soft_of(gp);
            const auto sm = soft_of(gm);
            for (std::uint32_t j = 0; j < 4; ++j) {
                CHECK(std::fabs(analytic.at(j, kk) - (sp[j] - sm[j]) / (2.0 * h)) < 1e-6);
            }
        }
    }
}

TEST_CASE("entropy gradient") {
    SUBCASE("uniform distributions are stationary") {
        const std::vector<double> p(4, 0.25);
        for (double v : grad_entropy(p)) CHECK(std::fabs(v) < 1e-15);
    }
    SUBCASE("hand value") {
        const auto g = grad_entropy(std::vector<double>{2.0 / 3.0, 1.0 / 3.0});
        CHECK(g[0] == doctest::Approx(-0.15403).epsilon(1e-4));
        CHECK(g[1] == doctest::Approx(0.15403).epsilon(1e-4));
    }
    SUBCASE("matches finite differences of entropy(softmax(g))") {
        const std::vector<double> logits{0.3, -0.7, 1.1};
        auto ent_of = [](const std::vector<double>& g) {
            double mx = g[0];
            for (double v : g) mx = std::max(mx, v);
            std::vector<double> p(g.size());
            double sum = 0.0;
            for (std::size_t j = 0; j < g.size(); ++j) {
                p[j] = std::exp(g[j] - mx);
                sum += p[j];
            }
            double ent = 0.0;
            for (double& v : p) {
                v /= sum;
                ent -= v * std::log(v);
            }
            return ent;
        };
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        std::vector<double> p(3);
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            p[j] = std::exp(logits[j] - mx);
            sum += p[j];
        }
        for (double& v : p) v /= sum;
        const auto analytic = grad_entropy(p);
        const double h = 1e-6;
        for (std::size_t j = 0; j < 3; ++j) {
            std::vector<double> gp = logits, gm = logits;
            gp[j] += h;
            gm[j] -= h;
            // the entropy loss enters with a positive sign; grad_entropy is
            // the gradient of -sum p log p
            CHECK(std::fabs(analytic[j] - (ent_of(gp) - ent_of(gm)) / (2.0 * h)) < 1e-6);
        }
    }
}

TEST_CASE("backward matches central differences") {
    const double h = 1e-5;
    SUBCASE("orthonormal mode, entropy on") {
        const TinySetup t = make_tiny(8, 2, 4, 4, 3, 6, 21);
        const GradCheckReport r = grad_check(t.params, t.batch(), {5.0, 0.2, 0.1}, {}, h);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("soft-only loss") {
        const TinySetup t = make_tiny(8, 2, 4, 4, 3, 6, 22);
        const GradCheckReport r =
            grad_check(t.params, t.batch(), {5.0, 0.2, 0.1}, {false, true}, h);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("l2q mode trains the codebooks too") {
        const TinySetup t = make_tiny(8, 2, 4, 4, 3, 6, 23, ModelParams::Mode::l2q);
        const GradCheckReport r = grad_check(t.params, t.batch(), {5.0, 0.2, 0.1}, {}, h);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("corrupted gradient is caught (negative control)") {
        const TinySetup t = make_tiny(8, 2, 4, 4, 3, 6, 24);
        const Hyperparams hp{5.0, 0.2, 0.1};
        ForwardCache cache;
        forward(t.params, t.batch(), hp, {}, &cache);
        Gradients g = backward(t.params, cache, hp, {});
        g.transforms[0].data[3] = -g.transforms[0].data[3] - 1.0;
        const GradCheckReport r = grad_check_against(t.params, t.batch(), hp, {}, h, g);
        CHECK(r.max_rel_error > 0.5);
        CHECK(r.worst_tensor == "transform");
    }
    SUBCASE("saturated classifier gradients vanish") {
        // features sit exactly on their class columns, the transforms are a
        // sharpened copy of the codebook, and the classifier reuses codewords
        const std::uint32_t d = 4, k = 4, n_classes = 4, m = 2;
        TinySetup t = make_tiny(2 * d, m, d, k, n_classes, 4, 25);
        t.params.encoder = ColMat::identity(2 * d);
        for (std::uint32_t mm = 0; mm < m; ++mm) {
            t.params.classifier[mm] = t.params.codebooks.books[mm];
            t.params.transforms[mm] = t.params.codebooks.books[mm];
            for (double& v : t.params.transforms[mm].data) v *= 200.0;
        }
        for (std::size_t i = 0; i < 4; ++i) {
            t.labels[i] = std::uint32_t(i);
            for (std::uint32_t mm = 0; mm < m; ++mm) {
                for (std::uint32_t j = 0; j < d; ++j) {
                    t.feats[i * 2 * d + mm * d + j] = t.params.codebooks.books[mm].at(j, i);
                }
            }
        }
        ForwardCache cache;
        forward(t.params, t.batch(), {40.0, 0.4, 0.0}, {true, false}, &cache);
        const Gradients g = backward(t.params, cache, {40.0, 0.4, 0.0}, {true, false});
        double norm = 0.0;
        for (const ColMat& w : g.classifier) {
            for (double v : w.data) norm += v * v;
        }
        CHECK(std::sqrt(norm) < 1e-3);
    }
}

TEST_CASE("sgd step") {
    TinySetup t = make_tiny(4, 1, 3, 2, 2, 2, 31);
    OptimizerState opt = OptimizerState::make(t.params, 0.0, 0.0);
    opt.lr = 0.5;

    Gradients zero;
    zero.encoder = ColMat(4, 3);
    zero.transforms.emplace_back(3, 2);
    zero.classifier.emplace_back(3, 2);

    SUBCASE("zero gradient and zero decay change nothing") {
        const std::vector<double> before = t.params.encoder.data;
        sgd_step(t.params, zero, opt);
        CHECK(t.params.encoder.data == before);
    }
    SUBCASE("plain step without momentum") {
        Gradients g = zero;
        g.encoder.data.assign(g.encoder.data.size(), 2.0);
        const std::vector<double> before = t.params.encoder.data;
        sgd_step(t.params, g, opt);
        for (std::size_t i = 0; i < before.size(); ++i) {
            CHECK(t.params.encoder.data[i] == doctest::Approx(before[i] - 0.5 * 2.0));
        }
    }
    SUBCASE("two momentum steps match the unrolled recurrence") {
        OptimizerState mom = OptimizerState::make(t.params, 0.9, 0.0);
        mom.lr = 0.1;
        Gradients g = zero;
        g.encoder.data.assign(g.encoder.data.size(), 1.0);
        const std::vector<double> before = t.params.encoder.data;
        sgd_step(t.params, g, mom);
        sgd_step(t.params, g, mom);
        // v1 = 1, p1 = p0 - 0.1; v2 = 1.9, p2 = p1 - 0.19
        for (std::size_t i = 0; i < before.size(); ++i) {
            CHECK(t.params.encoder.data[i] == doctest::Approx(before[i] - 0.1 - 0.19).epsilon(1e-12));
        }
    }
    SUBCASE("weight decay hits encoder and transforms but not the classifier") {
        OptimizerState wd = OptimizerState::make(t.params, 0.0, 0.01);
        wd.lr = 1.0;
        const double e0 = t.params.encoder.data[0];
        const double w0 = t.params.classifier[0].data[0];
        sgd_step(t.params, zero, wd);
        CHECK(t.params.encoder.data[0] == doctest::Approx(e0 * (1.0 - 0.01)));
        CHECK(t.params.classifier[0].data[0] == doctest::Approx(w0));
    }
}

TEST_CASE("learning rate schedule") {
    const LrSchedule sched{0.1, 0.5, 35};
    CHECK(sched.at(0) == doctest::Approx(0.1));
    CHECK(sched.at(34) == doctest::Approx(0.1));
    CHECK(sched.at(35) == doctest::Approx(0.05));
    CHECK(sched.at(99) == doctest::Approx(0.025));
}

TEST_CASE("training on separable clusters") {
    const EmbeddingDataset ds = tiny_clusters(8, 24, 16, 5);
    TrainConfig cfg;
    cfg.m_books = 2;
    cfg.sub_dim = 8;
    cfg.k_words = 8;
    cfg.epochs = 40;
    cfg.batch_size = 64;
    cfg.seed = 12;

    const TrainResult result = train(ds, cfg);
    REQUIRE(result.log.size() == 40);

    SUBCASE("loss collapses well below the first epoch") {
        CHECK(result.log.back().loss_total < 0.1 * result.log.front().loss_total);
        CHECK(result.log.back().train_acc > 0.95);
    }
    SUBCASE("windowed loss is non-increasing after warm-up") {
        auto window_mean = [&](std::size_t at) {
            double acc = 0.0;
            for (std::size_t i = at; i < at + 10; ++i) acc += result.log[i].loss_total;
            return acc / 10.0;
        };
        for (std::size_t at = 5; at + 11 < result.log.size(); ++at) {
            CHECK(window_mean(at + 1) <= window_mean(at) + 1e-9);
        }
    }
    SUBCASE("same seed reproduces parameters bit for bit") {
        const TrainResult again = train(ds, cfg);
        CHECK(model_bytes(again.params) == model_bytes(result.params));
        REQUIRE(again.log.size() == result.log.size());
        for (std::size_t i = 0; i < result.log.size(); ++i) {
            CHECK(again.log[i].loss_total == result.log[i].loss_total);
            CHECK(again.log[i].train_acc == result.log[i].train_acc);
        }
    }
    SUBCASE("orthonormal mode never touches the codebooks") {
        std::ostringstream before, after;
        write_codebooks(generate_orthonormal_codebooks({2, 8, 8}), before);
        write_codebooks(result.params.codebooks, after);
        CHECK(before.str() == after.str());
        CHECK(result.params.codebooks.orthonormal);
    }
}

TEST_CASE("l2q mode trains codewords apart") {
    const EmbeddingDataset ds = tiny_clusters(6, 20, 16, 6);
    TrainConfig cfg;
    cfg.m_books = 2;
    cfg.sub_dim = 8;
    cfg.k_words = 4;
    cfg.epochs = 30;
    cfg.batch_size = 64;
    cfg.seed = 3;
    cfg.mode = ModelParams::Mode::l2q;

    const TrainResult result = train(ds, cfg);
    CHECK_FALSE(result.params.codebooks.orthonormal);

    // codebooks moved away from the generator output
    std::ostringstream generated, trained;
    write_codebooks(generate_orthonormal_codebooks({2, 8, 4}), generated);
    write_codebooks(result.params.codebooks, trained);
    CHECK(generated.str() != trained.str());

    // the angle distribution now has spread instead of a delta at 90 degrees
    const AngularHistogram hist = angular_histogram(result.params.codebooks, 0.5);
    double mean = 0.0;
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        mean += hist.counts[b] * (double(b) + 0.5) * 0.5;
    }
    double var = 0.0;
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
        const double deg = (double(b) + 0.5) * 0.5;
        var += hist.counts[b] * (deg - mean) * (deg - mean);
    }
    CHECK(var > 1e-3);
}

TEST_CASE("trainer rejects invalid configs") {
    const EmbeddingDataset ds = tiny_clusters(4, 8, 8, 7);
    TrainConfig cfg;
    cfg.m_books = 2;
    cfg.sub_dim = 4;
    cfg.k_words = 4;
    cfg.epochs = 1;
    SUBCASE("single-class dataset") {
        EmbeddingDataset one = ds;
        std::fill(one.labels.begin(), one.labels.end(), 0u);
        CHECK_THROWS_AS(train(one, cfg), std::invalid_argument);
    }
    SUBCASE("k larger than d") {
        cfg.k_words = 8;
        CHECK_THROWS_AS(train(ds, cfg), std::invalid_argument);
    }
    SUBCASE("mismatched codebook override") {
        cfg.codebooks = generate_orthonormal_codebooks({2, 8, 4});
        CHECK_THROWS_AS(train(ds, cfg), std::invalid_argument);
    }
}

TEST_CASE("checkpoint round trip") {
    const TinySetup t = make_tiny(8, 2, 4, 4, 3, 4, 41);
    const std::string path = "test_trainer_roundtrip.opqm";
    save_model(t.params, path);
    const ModelParams back = load_model(path);
    CHECK(model_bytes(back) == model_bytes(t.params));
    CHECK(model_fingerprint(back) == model_fingerprint(t.params));
    std::remove(path.c_str());

    SUBCASE("corrupted magic is rejected") {
        std::istringstream bad("NOPE");
        CHECK_THROWS_AS(read_model(bad), std::runtime_error);
    }
}
