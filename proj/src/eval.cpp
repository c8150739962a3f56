#include "opqn/eval.hpp"

#include <algorithm>
#include <stdexcept>

namespace opqn {

double average_precision(std::span<const std::uint8_t> flags, std::size_t total_relevant) {
    if (total_relevant == 0) {
        throw std::invalid_argument("average_precision: query has no relevant items");
    }
    double acc = 0.0;
    std::size_t seen = 0;
    for (std::size_t r = 0; r < flags.size(); ++r) {
        if (flags[r]) {
            ++seen;
            acc += double(seen) / double(r + 1);
        }
    }
    return acc / double(total_relevant);
}

double mean_average_precision(std::span<const double> per_query_ap) {
    if (per_query_ap.empty()) {
        throw std::invalid_argument("mean_average_precision: no valid queries");
    }
    double acc = 0.0;
    for (double ap : per_query_ap) acc += ap;
    return acc / double(per_query_ap.size());
}

double precision_at_t(std::span<const std::uint8_t> flags, std::size_t t) {
    if (t < 1) throw std::invalid_argument("precision_at_t: T must be >= 1");
    std::size_t relevant = 0;
    const std::size_t upto = std::min(t, flags.size());
    for (std::size_t r = 0; r < upto; ++r) relevant += flags[r] ? 1 : 0;
    return double(relevant) / double(t);
}

std::vector<PrPoint> pr_curve(std::span<const std::uint8_t> flags, std::size_t total_relevant,
                              std::size_t points) {
    if (total_relevant == 0) throw std::invalid_argument("pr_curve: query has no relevant items");
    if (points < 1) throw std::invalid_argument("pr_curve: need at least one point");
    const std::size_t len = flags.size();
    if (len == 0) return {};

    // evenly spaced ranks ceil(j*len/points); the last rank is always kept
    const std::size_t n_points = std::min(points, len);
    std::vector<std::size_t> targets(n_points);
    for (std::size_t j = 0; j < n_points; ++j) {
        targets[j] = ((j + 1) * len + n_points - 1) / n_points;
    }

    std::vector<PrPoint> out;
    out.reserve(n_points);
    std::size_t seen = 0, t = 0;
    for (std::size_t r = 1; r <= len; ++r) {
        seen += flags[r - 1] ? 1 : 0;
        if (t < n_points && r == targets[t]) {
            out.push_back({double(seen) / double(total_relevant), double(seen) / double(r)});
            ++t;
        }
    }
    return out;
}

double pr_auc(std::span<const PrPoint> curve) {
    double acc = 0.0, prev_recall = 0.0;
    for (const PrPoint& p : curve) {
        acc += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    return acc;
}

}  // namespace opqn
