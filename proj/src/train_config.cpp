#include "steglearn/train_config.hpp"

#include <cstdio>

#include "steglearn/tensor.hpp"

namespace steglearn {

std::string to_string(Normalization n)
{
    return n == Normalization::unit ? "unit" : "symmetric";
}

Normalization parse_normalization(const std::string& s)
{
    if (s == "unit") {
        return Normalization::unit;
    }
    if (s == "symmetric") {
        return Normalization::symmetric;
    }
    throw ConfigError("unknown normalization '" + s + "' (expected unit or symmetric)");
}

void TrainConfig::validate() const
{
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("lambda must lie in [0, 1]");
    }
    if (!(lr0 >= 0.0) || !(lr_multiplier > 0.0 && lr_multiplier <= 1.0)) {
        throw ConfigError("lr0 must be non-negative and lr_multiplier in (0, 1]");
    }
    if (lr_drops_max < 0 || plateau_epochs <= 0) {
        throw ConfigError("lr_drops_max must be >= 0 and plateau_epochs > 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (batch_size < 2 || batch_size % 2 != 0) {
        throw ConfigError("batch_size must be a positive even number (cover/stego pairs), got " +
                          std::to_string(batch_size));
    }
    if (!(init_std > 0.0) || !(fc_weight_decay >= 0.0)) {
        throw ConfigError("init_std must be positive and fc_weight_decay non-negative");
    }
    if (max_epochs < 0) {
        throw ConfigError("max_epochs must be non-negative");
    }
}

namespace {

std::string real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string canonical_text(const TrainConfig& c)
{
    std::string s;
    s += "lambda=" + real(c.lambda) + "\n";
    s += "lr0=" + real(c.lr0) + "\n";
    s += "lr_multiplier=" + real(c.lr_multiplier) + "\n";
    s += "lr_drops_max=" + std::to_string(c.lr_drops_max) + "\n";
    s += "plateau_epochs=" + std::to_string(c.plateau_epochs) + "\n";
    s += "plateau_min_delta=" + real(c.plateau_min_delta) + "\n";
    s += "momentum=" + real(c.momentum) + "\n";
    s += "batch_size=" + std::to_string(c.batch_size) + "\n";
    s += "init_std=" + real(c.init_std) + "\n";
    s += "fc_weight_decay=" + real(c.fc_weight_decay) + "\n";
    s += "seed=" + std::to_string(c.seed) + "\n";
    s += "max_epochs=" + std::to_string(c.max_epochs) + "\n";
    s += "normalization=" + to_string(c.normalization) + "\n";
    s += "sever_classifier_path=" + std::string(c.sever_classifier_path ? "true" : "false") + "\n";
    return s;
}

std::uint64_t config_hash(const TrainConfig& c)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : canonical_text(c)) {
        h = (h ^ ch) * 0x100000001b3ull;
    }
    return h;
}

} // namespace steglearn
