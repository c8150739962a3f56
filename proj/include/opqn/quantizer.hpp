#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "opqn/matrix.hpp"

namespace opqn {

/// Codeword-assignment logits for one sub-vector: out[k] = <x, column k of f>.
/// The transform layer has no bias term.
std::vector<double> assignment_logits(std::span<const double> x, const ColMat& f);

/// Max-shifted softmax over the logits; entries are strictly positive and sum
/// to 1 even for logits far beyond the exp overflow threshold.
std::vector<double> assignment_probabilities(std::span<const double> logits);

/// Convex combination of codewords with the assignment probabilities as
/// coefficients: s = sum_k p[k] * codeword_k.
std::vector<double> soft_quantize(std::span<const double> p, const ColMat& codebook);

/// Index of the largest probability; ties break toward the lowest index.
std::uint32_t hard_assign(std::span<const double> p);

/// Euclidean distance between the soft quantization and the hard-assigned
/// codeword. Zero exactly when p is one-hot.
double quantization_gap(std::span<const double> p, const ColMat& codebook);

}  // namespace opqn
