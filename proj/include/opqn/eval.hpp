#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace opqn {

/// Average precision of one ranked list: mean of precision-at-r over the
/// relevant positions, divided by the total number of relevant database
/// items (retrieved or not). Throws when total_relevant is zero; such
/// queries are excluded from MAP by the caller.
double average_precision(std::span<const std::uint8_t> flags, std::size_t total_relevant);

double mean_average_precision(std::span<const double> per_query_ap);

/// Fraction of relevant items among the first T positions. Rankings shorter
/// than T count the missing tail as non-relevant (the divisor stays T).
double precision_at_t(std::span<const std::uint8_t> flags, std::size_t t);

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

/// Precision and recall evaluated at every rank, downsampled to at most
/// `points` evenly spaced ranks (always keeping the last). Recall is
/// non-decreasing along the curve.
std::vector<PrPoint> pr_curve(std::span<const std::uint8_t> flags, std::size_t total_relevant,
                              std::size_t points);

/// Area under a PR curve via sum of precision * recall-increment; equals AP
/// exactly when the curve keeps every rank.
double pr_auc(std::span<const PrPoint> curve);

}  // namespace opqn
