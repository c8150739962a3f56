#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "opqn/matrix.hpp"

namespace opqn {

/// Loss hyperparameters: cosine scale r, additive cosine margin u, and the
/// balance weight of the entropy regularizer.
struct Hyperparams {
    double scale_r = 40.0;
    double margin_u = 0.4;
    double entropy_weight = 0.1;

    void validate() const;
};

/// Which loss terms enter the training objective. Dropping the original
/// feature term trains on soft quantizations alone; dropping the entropy term
/// behaves like entropy_weight = 0.
struct LossFlags {
    bool include_lx = true;
    bool include_lent = true;
};

struct LossBreakdown {
    double l_x = 0.0;    // margin loss on normalized sub-vectors, batch/subspace mean
    double l_s = 0.0;    // margin loss on normalized soft quantizations, same normalization
    double l_clf = 0.0;  // (l_x + l_s) / 2 over included halves
    double l_ent = 0.0;  // mean assignment entropy
    double total = 0.0;  // l_clf + entropy_weight * l_ent (honoring the flags)
};

/// Mean over the batch of the angular-margin softmax loss in one subspace.
/// `features` holds n rows of length d, already unit-norm, as are the columns
/// of `w_unit`. The target class logit is r*(cos - u); every other class uses
/// r*cos. Stable for r up to the exp overflow threshold via max-shifting.
double margin_loss_subspace(const double* features, std::size_t n, std::uint32_t d,
                            const std::uint32_t* labels, const ColMat& w_unit, double r, double u);

/// Joint loss over all subspaces for both the original sub-vectors and the
/// soft quantizations: sum over subspaces of the two batch means, divided by
/// 2M. x_subs and s_subs hold one n x d unit-row batch per subspace.
double joint_classification_loss(const std::vector<std::vector<double>>& x_subs,
                                 const std::vector<std::vector<double>>& s_subs,
                                 std::span<const std::uint32_t> labels, std::uint32_t d,
                                 const std::vector<ColMat>& w_unit, double r, double u);

/// Mean Shannon entropy of the assignment probabilities, averaged over n
/// samples and m subspaces; p is n x m x k flattened. 0*log(0) counts as 0.
double entropy_loss(const double* p, std::size_t n, std::uint32_t m, std::uint32_t k);

/// Assembles the breakdown; total = l_clf + entropy_weight * l_ent with
/// excluded terms dropped per the flags.
LossBreakdown total_loss(double l_x, double l_s, double l_ent, const Hyperparams& hp,
                         const LossFlags& flags = {});

/// Copy of w with every column scaled to unit norm. Columns below the
/// degenerate-norm threshold raise an error.
ColMat normalized_columns(const ColMat& w);

/// In-place l2 normalization; returns the original norm. Norms below 1e-12
/// indicate an upstream bug and raise a degenerate-input error.
double normalize_or_throw(double* v, std::size_t n);

}  // namespace opqn
