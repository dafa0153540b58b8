#pragma once

#include "steglearn/stegosim.hpp"
#include "steglearn/train_config.hpp"
#include "steglearn/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace steglearn {

/**
 * Everything one CLI invocation needs. Serialized as flat `key=value` lines;
 * `#` starts a comment; unknown keys are errors.
 */
struct RunConfig {
    TrainConfig train;
    DatasetSpec dataset;
    std::string dataset_dir = "data";
    std::string out_dir = "out";
    int checkpoint_every = 0; // epochs; 0 keeps only best and last
    bool export_filters = false;
    bool export_features = false;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

inline constexpr const char* kHistoryHeader = "epoch,lr,Jc,Jr,J,train_err,val_err";

/// Writes the history with 17 significant digits per real.
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

} // namespace steglearn
