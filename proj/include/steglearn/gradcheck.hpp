#pragma once

#include "steglearn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace steglearn {

/// One scalar evaluation of the graph under test.
template <typename Scalar>
struct GraphValue {
    Scalar value = 0;
    /// Sign pattern of kink inputs (abs/relu); empty when the graph has none.
    std::optional<std::uint64_t> kink_signature;
};

/// A block of coordinates to perturb, with the analytic gradient to compare against.
template <typename Scalar>
struct GradBlock {
    std::string name;
    std::span<Scalar> values;
    std::vector<Scalar> analytic;
    /// Optional per-coordinate exclusion (e.g. |x| < 2*epsilon at an abs input).
    std::function<bool(Index)> exclude;
};

struct GradBlockResult {
    std::string name;
    Index checked = 0;
    Index excluded = 0;
    double max_relative_error = 0;
    double tolerance = 0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradBlockResult> blocks;

    bool passed() const
    {
        return std::all_of(blocks.begin(), blocks.end(), [](const auto& b) { return b.passed; });
    }

    Index failures() const
    {
        return static_cast<Index>(std::count_if(blocks.begin(), blocks.end(), [](const auto& b) { return !b.passed; }));
    }
};

inline double relative_error(double analytic, double numeric)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

/**
 * Central finite differences on every coordinate of every block, compared with
 * the analytic gradients. A coordinate whose +/- evaluations see different
 * kink signatures straddles a non-differentiable point and is excluded.
 */
template <typename Scalar>
GradCheckReport grad_check(const std::function<GraphValue<Scalar>()>& graph, std::vector<GradBlock<Scalar>>& blocks,
                           Scalar epsilon, double tolerance)
{
    GradCheckReport report;
    for (auto& block : blocks) {
        GradBlockResult r;
        r.name = block.name;
        r.tolerance = tolerance;
        for (Index i = 0; i < static_cast<Index>(block.values.size()); ++i) {
            if (block.exclude && block.exclude(i)) {
                ++r.excluded;
                continue;
            }
            Scalar& v = block.values[static_cast<std::size_t>(i)];
            const Scalar saved = v;
            v = saved + epsilon;
            const auto plus = graph();
            v = saved - epsilon;
            const auto minus = graph();
            v = saved;
            if (plus.kink_signature != minus.kink_signature) {
                ++r.excluded;
                continue;
            }
            const double numeric = (double(plus.value) - double(minus.value)) / (2.0 * double(epsilon));
            const double err = relative_error(double(block.analytic[static_cast<std::size_t>(i)]), numeric);
            if (!std::isfinite(err)) {
                r.max_relative_error = std::numeric_limits<double>::infinity();
            }
            r.max_relative_error = std::max(r.max_relative_error, err);
            ++r.checked;
        }
        r.passed = r.max_relative_error < tolerance;
        report.blocks.push_back(std::move(r));
    }
    return report;
}

} // namespace steglearn
