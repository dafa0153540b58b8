// steglearn: generate synthetic cover/stego data, train the joint residual +
// classifier model, evaluate it, export learned filters and feature maps, and
// run the gradient checker.

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <iostream>
#include <optional>
#include <string>

#include "steglearn/commands.hpp"

namespace {

steglearn::RunConfig resolve(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                             const std::string& out_dir, bool seed_is_dataset)
{
    steglearn::RunConfig config = config_path.empty() ? steglearn::RunConfig{} : steglearn::load_run_config(config_path);
    if (seed) {
        if (seed_is_dataset) {
            config.dataset.master_seed = *seed;
        } else {
            config.train.seed = *seed;
        }
    }
    if (!out_dir.empty()) {
        config.out_dir = out_dir;
    }
    return config;
}

} // namespace

int main(int argc, char** argv)
{
#if defined(__GLIBC__)
    // Per-batch activations are large; keep them off the mmap/trim path.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Joint residual-learning steganalysis: data, training, evaluation and diagnostics"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, image, split = "test";
    std::optional<std::uint64_t> seed;
    steglearn::Index size = 16;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value run configuration file")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the seed (dataset seed for generate, model seed otherwise)");
        sub->add_option("--out", out_dir, "output directory");
    };

    auto* generate = app.add_subcommand("generate", "write synthetic cover/stego PGM pairs and a manifest");
    common(generate);
    auto* train = app.add_subcommand("train", "train on a generated dataset; writes history.csv and checkpoints");
    common(train);
    auto* eval = app.add_subcommand("eval", "detection error of a checkpoint on one split");
    common(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--split", split, "train, val or test");
    auto* filters = app.add_subcommand("export-filters", "export residual kernels as CSV and PGM heatmaps");
    common(filters);
    filters->add_option("--checkpoint", checkpoint, "checkpoint file (fresh initialization if omitted)")
        ->check(CLI::ExistingFile);
    auto* features = app.add_subcommand("export-features", "export abs-layer feature maps for one PGM image");
    common(features);
    features->add_option("--checkpoint", checkpoint, "checkpoint file (fresh initialization if omitted)")
        ->check(CLI::ExistingFile);
    features->add_option("--image", image, "input PGM")->required()->check(CLI::ExistingFile);
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer and the joint loss");
    gradcheck->add_option("--size", size, "spatial size of the joint-graph batch")->check(CLI::PositiveNumber);
    gradcheck->add_option("--seed", seed, "seed for random inputs");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto optional_checkpoint =
            checkpoint.empty() ? std::nullopt : std::optional<std::filesystem::path>(checkpoint);
        if (*generate) {
            return steglearn::cmd_generate(resolve(config_path, seed, out_dir, true), std::cout);
        }
        if (*train) {
            return steglearn::cmd_train(resolve(config_path, seed, out_dir, false), std::cout);
        }
        if (*eval) {
            steglearn::cmd_eval(resolve(config_path, seed, out_dir, false), checkpoint, steglearn::parse_split(split),
                                std::cout);
            return 0;
        }
        if (*filters) {
            return steglearn::cmd_export_filters(resolve(config_path, seed, out_dir, false), optional_checkpoint,
                                                 std::cout);
        }
        if (*features) {
            return steglearn::cmd_export_features(resolve(config_path, seed, out_dir, false), optional_checkpoint,
                                                  image, std::cout);
        }
        if (*gradcheck) {
            return steglearn::cmd_gradcheck(size, seed.value_or(7), std::cout);
        }
    } catch (const steglearn::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
