#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "opqn/codebook.hpp"
#include "opqn/data_io.hpp"
#include "opqn/fingerprint.hpp"
#include "opqn/matrix.hpp"
#include "opqn/metric_loss.hpp"

namespace opqn {

/// The quantization head: a bias-free affine encoder from input embeddings to
/// the D = M*d bottleneck, per-subspace transform matrices, per-subspace
/// classifier weights, and the codebook set. In orthonormal mode the
/// codebooks are fixed; in l2q mode they are trained like any other tensor.
struct ModelParams {
    enum class Mode : std::uint8_t { orthonormal = 0, l2q = 1 };

    std::uint32_t input_dim = 0;       // Din
    std::uint32_t bottleneck_dim = 0;  // D = M*d
    std::uint32_t n_classes = 0;
    Mode mode = Mode::orthonormal;

    ColMat encoder;                  // input_dim x bottleneck_dim, output-major columns
    std::vector<ColMat> transforms;  // M matrices, sub_dim x k_words
    std::vector<ColMat> classifier;  // M matrices, sub_dim x n_classes
    CodebookSet codebooks;

    std::uint32_t m_books() const { return codebooks.spec.m_books; }
    std::uint32_t sub_dim() const { return codebooks.spec.sub_dim; }
    std::uint32_t k_words() const { return codebooks.spec.k_words; }

    void validate() const;
};

/// Borrowed view of a training batch: `count` rows of `dim` features plus
/// dense labels in [0, n_classes).
struct BatchView {
    const double* features = nullptr;
    const std::uint32_t* labels = nullptr;
    std::size_t count = 0;
    std::uint32_t dim = 0;
};

/// Every intermediate the explicit gradients need, for one forward batch.
/// Row-major sample-first layouts; sub-vector and probability blocks for
/// subspace m start at offset m*sub_dim / m*k_words within each row.
struct ForwardCache {
    std::size_t count = 0;
    std::uint32_t input_dim = 0, m_books = 0, sub_dim = 0, k_words = 0, n_classes = 0;

    std::vector<double> inputs;      // n x Din (copied from the batch)
    std::vector<std::uint32_t> labels;
    std::vector<double> bottleneck;  // n x D, raw sub-vectors
    std::vector<double> x_norm;      // n x M
    std::vector<double> x_hat;       // n x M x d
    std::vector<double> probs;       // n x M x K
    std::vector<double> soft;        // n x M x d, raw convex combinations
    std::vector<double> s_norm;      // n x M
    std::vector<double> s_hat;       // n x M x d
    std::vector<double> cos_x;       // n x M x C
    std::vector<double> cos_s;       // n x M x C
    std::vector<double> loss_x;      // n x M
    std::vector<double> loss_s;      // n x M
    std::vector<double> loss_ent;    // n x M
    std::vector<ColMat> w_unit;      // classifier with unit columns
    std::vector<double> w_norm;      // M x C original column norms
    std::size_t train_hits = 0;      // argmax over summed cosines equals label
};

LossBreakdown forward(const ModelParams& params, const BatchView& batch, const Hyperparams& hp,
                      const LossFlags& flags = {}, ForwardCache* cache = nullptr);

struct Gradients {
    ColMat encoder;
    std::vector<ColMat> transforms;
    std::vector<ColMat> classifier;
    std::vector<ColMat> codebooks;  // populated in l2q mode only
};

/// Gradients of the exact scalar forward() returned for this cache, w.r.t.
/// encoder, transforms, classifier (and codebooks in l2q mode).
Gradients backward(const ModelParams& params, const ForwardCache& cache, const Hyperparams& hp,
                   const LossFlags& flags = {});

/// J^T * upstream for the softmax Jacobian J at p.
std::vector<double> softmax_jacobian_apply(std::span<const double> p,
                                           std::span<const double> upstream);

/// d s / d g_k = p_k (C_k - s), returned as a sub_dim x k_words matrix whose
/// column k is the gradient vector for logit k.
ColMat grad_soft_quantization(std::span<const double> p, const ColMat& codebook,
                              std::span<const double> s);

/// Gradient of the per-sample entropy term w.r.t. the logits.
std::vector<double> grad_entropy(std::span<const double> p);

struct OptimizerState {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr = 0.1;
    ColMat v_encoder;
    std::vector<ColMat> v_transforms;
    std::vector<ColMat> v_classifier;
    std::vector<ColMat> v_codebooks;

    static OptimizerState make(const ModelParams& params, double momentum, double weight_decay);
};

/// v <- momentum*v + grad (+ wd*param for encoder and transforms);
/// param <- param - lr*v. Classifier weights and codebooks are not decayed;
/// codebooks are only touched in l2q mode.
void sgd_step(ModelParams& params, const Gradients& grads, OptimizerState& state);

struct LrSchedule {
    double initial = 0.1;
    double decay = 0.5;
    std::uint32_t period = 35;

    double at(std::uint32_t epoch) const;
};

struct TrainConfig {
    std::uint32_t m_books = 2;
    std::uint32_t sub_dim = 16;
    std::uint32_t k_words = 16;
    std::uint32_t epochs = 100;
    std::uint32_t batch_size = 256;
    LrSchedule lr;
    Hyperparams hp;
    LossFlags flags;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    ModelParams::Mode mode = ModelParams::Mode::orthonormal;
    /// Optional codebook override (e.g. a perturbed set); defaults to the
    /// deterministic generator's output for the configured geometry.
    std::optional<CodebookSet> codebooks;

    void validate() const;
};

struct TrainLogEntry {
    std::uint32_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_clf = 0.0;
    double loss_ent = 0.0;
    double train_acc = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainLogEntry> log;
    /// Original dataset label for each dense class index used by the head.
    std::vector<std::uint32_t> class_ids;
};

/// Minibatch SGD over the dataset. Deterministic given the config seed:
/// initialization, shuffling, and every reduction use fixed orders, so the
/// result is bit-identical across runs and thread counts.
TrainResult train(const EmbeddingDataset& dataset, const TrainConfig& cfg);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
};

/// Central-difference verification of every analytic gradient entry.
GradCheckReport grad_check(const ModelParams& params, const BatchView& batch,
                           const Hyperparams& hp, const LossFlags& flags, double h);

/// Same comparison against externally supplied gradients (lets tests run
/// negative controls with corrupted values).
GradCheckReport grad_check_against(const ModelParams& params, const BatchView& batch,
                                   const Hyperparams& hp, const LossFlags& flags, double h,
                                   const Gradients& analytic);

void write_model(const ModelParams& params, std::ostream& os);
ModelParams read_model(std::istream& is);
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

/// Canonical checkpoint byte string; the fingerprint is its SHA-256.
std::vector<std::uint8_t> model_bytes(const ModelParams& params);
Fingerprint model_fingerprint(const ModelParams& params);

/// epoch,lr,loss_total,loss_clf,loss_ent,train_acc with full double precision.
void write_train_log_csv(const std::vector<TrainLogEntry>& log, std::ostream& os);

}  // namespace opqn
