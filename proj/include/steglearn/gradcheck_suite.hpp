#pragma once

#include "steglearn/gradcheck.hpp"
#include "steglearn/tensor.hpp"

#include <cstdint>

namespace steglearn {

struct GradCheckSuiteOptions {
    Index size = 16;        ///< spatial extent of the joint-graph batch
    std::uint64_t seed = 7;
    double primitive_epsilon = 1e-5;
    double graph_epsilon = 1e-6;
    double smooth_tolerance = 1e-4;
    double kink_tolerance = 1e-3;
};

/// Every primitive on small random inputs, each block at its own tolerance.
GradCheckReport check_primitives(const GradCheckSuiteOptions& options = {});

/// Every learnable block of the full joint loss on one cover/stego pair (batch of 2).
GradCheckReport check_joint_graph(const GradCheckSuiteOptions& options = {});

GradCheckReport run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

} // namespace steglearn
