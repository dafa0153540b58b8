#pragma once

// Subcommand implementations behind the `steglearn` executable. Each returns
// a process exit code and writes human-readable progress to `out`.

#include "steglearn/run_config.hpp"
#include "steglearn/stegosim.hpp"
#include "steglearn/trainer.hpp"

#include <filesystem>
#include <optional>
#include <ostream>

namespace steglearn {

enum class LogLevel { quiet, info, debug };

/// Reads STEGLEARN_LOG (quiet | info | debug); defaults to info.
LogLevel log_level_from_env();

/// Exclusive ownership of an output directory for the lifetime of the object.
class OutputLock {
  public:
    explicit OutputLock(const std::filesystem::path& dir);
    ~OutputLock();
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

  private:
    std::filesystem::path path_;
};

inline constexpr const char* kResolvedConfigName = "run_config.txt";
inline constexpr const char* kHistoryName = "history.csv";
inline constexpr const char* kBestCheckpointName = "checkpoint_best.bin";
inline constexpr const char* kLastCheckpointName = "checkpoint_last.bin";

int cmd_generate(const RunConfig& config, std::ostream& out);
int cmd_train(const RunConfig& config, std::ostream& out);

/// Refuses (ConfigError) when the checkpoint's config hash differs from `config.train`.
EvalReport cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, Split split, std::ostream& out);

/// Without a checkpoint the freshly initialized model is exported.
int cmd_export_filters(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
                       std::ostream& out);
int cmd_export_features(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
                        const std::filesystem::path& image, std::ostream& out);

/// Exit code 0 iff every block passes.
int cmd_gradcheck(Index size, std::uint64_t seed, std::ostream& out);

} // namespace steglearn
