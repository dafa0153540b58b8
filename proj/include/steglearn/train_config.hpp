#pragma once

#include <cstdint>
#include <string>

namespace steglearn {

/// Pixel mapping applied at load time.
enum class Normalization {
    unit,      ///< p / 255, range [0, 1]
    symmetric, ///< p / 127.5 - 1, range [-1, 1]
};

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct TrainConfig {
    double lambda = 0.999;
    double lr0 = 0.001;
    double lr_multiplier = 0.3;
    int lr_drops_max = 5;
    int plateau_epochs = 50;
    double plateau_min_delta = 1e-4;
    double momentum = 0.9;
    int batch_size = 32; // images; always an even number of cover/stego pairs
    double init_std = 0.01;
    double fc_weight_decay = 0.0005;
    std::uint64_t seed = 1;
    int max_epochs = 100;
    Normalization normalization = Normalization::unit;
    /// Diagnostic: drop the classifier gradient before it reaches the residual kernels.
    bool sever_classifier_path = false;

    void validate() const;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Canonical key=value text of every TrainConfig field, fixed order.
std::string canonical_text(const TrainConfig& c);

/// 64-bit FNV-1a of canonical_text; stored in checkpoints.
std::uint64_t config_hash(const TrainConfig& c);

} // namespace steglearn
