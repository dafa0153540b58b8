#include "steglearn/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "steglearn/checkpoint.hpp"
#include "steglearn/gradcheck_suite.hpp"
#include "steglearn/image.hpp"
#include "steglearn/residual_net.hpp"

namespace steglearn {

namespace fs = std::filesystem;

LogLevel log_level_from_env()
{
    const char* v = std::getenv("STEGLEARN_LOG");
    if (!v) {
        return LogLevel::info;
    }
    const std::string s(v);
    if (s == "quiet") {
        return LogLevel::quiet;
    }
    if (s == "debug") {
        return LogLevel::debug;
    }
    return LogLevel::info;
}

OutputLock::OutputLock(const fs::path& dir) : path_{dir / ".steglearn.lock"}
{
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
        throw IoError("output directory " + dir.string() + " is locked by another run (remove " + path_.string() +
                      " if stale)");
    }
    std::fclose(f);
}

OutputLock::~OutputLock()
{
    std::error_code ec;
    fs::remove(path_, ec);
}

namespace {

std::string real17(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

ModelState<Real> load_model(const RunConfig& config, const std::optional<fs::path>& checkpoint)
{
    auto model = init_model<Real>(config.train);
    if (checkpoint) {
        load_checkpoint(*checkpoint, model);
    }
    return model;
}

void write_matrix_csv(const fs::path& path, const std::vector<double>& values, int rows, int cols)
{
    std::ofstream out(path, std::ios::trunc);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            out << real17(values[static_cast<std::size_t>(r * cols + c)]) << (c + 1 < cols ? "," : "\n");
        }
    }
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

void export_kernel(const fs::path& dir, const std::string& name, const LayerParams<Real>& k)
{
    const int size = static_cast<int>(k.shape[2]);
    std::vector<double> raw(k.weights.data(), k.weights.data() + k.weights.size());
    // The residual x - k*x is the response of the high-pass filter (delta - k).
    std::vector<double> effective(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        effective[i] = -raw[i];
    }
    effective[raw.size() / 2] += 1.0;
    write_matrix_csv(dir / (name + ".csv"), raw, size, size);
    write_pgm(dir / (name + ".pgm"), heatmap(raw, size, size));
    write_matrix_csv(dir / (name + "_residual.csv"), effective, size, size);
    write_pgm(dir / (name + "_residual.pgm"), heatmap(effective, size, size));
}

} // namespace

int cmd_generate(const RunConfig& config, std::ostream& out)
{
    const fs::path dir = config.out_dir;
    OutputLock lock(dir);
    const Dataset ds = make_dataset(config.dataset);
    write_dataset(ds, dir);
    save_run_config(dir / kResolvedConfigName, config);
    out << "generated " << ds.pairs.size() << " pairs (" << ds.pairs.size() * 2 << " images) in " << dir.string()
        << ": train " << ds.split.train.size() << ", val " << ds.split.val.size() << ", test " << ds.split.test.size()
        << "\n";
    return 0;
}

int cmd_train(const RunConfig& config, std::ostream& out)
{
    config.train.validate();
    const fs::path dir = config.out_dir;
    OutputLock lock(dir);
    save_run_config(dir / kResolvedConfigName, config);
    const Dataset ds = read_dataset(config.dataset_dir);
    const LogLevel level = log_level_from_env();
    const std::uint64_t hash = config_hash(config.train);

    auto model = init_model<Real>(config.train);
    TrainData data{&ds.pairs, ds.split.train, ds.split.val};
    std::vector<EpochRecord> history;
    EpochRecord best;
    const TrainState state = train<Real>(
        model, config.train, data, [&](const EpochRecord& rec, ModelState<Real>& m, bool improved) {
            history.push_back(rec);
            write_history_csv(dir / kHistoryName, history);
            if (improved) {
                best = rec;
                save_checkpoint(dir / kBestCheckpointName, m, hash);
            }
            if (config.checkpoint_every > 0 && rec.epoch % config.checkpoint_every == 0) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.bin", rec.epoch);
                save_checkpoint(dir / name, m, hash);
            }
            if (level != LogLevel::quiet) {
                out << "epoch " << rec.epoch << " lr " << rec.lr << " Jc " << rec.Jc << " Jr " << rec.Jr << " J "
                    << rec.J << " train_err " << rec.train_error << " val_err " << rec.val_error << "\n";
            }
        });
    if (history.empty()) {
        write_history_csv(dir / kHistoryName, history);
    }
    save_checkpoint(dir / kLastCheckpointName, model, hash);
    if (config.export_filters) {
        export_kernel(dir, "k5", model.residual.k5);
        export_kernel(dir, "k3", model.residual.k3);
    }
    out << "trained " << state.epoch << " epochs; best val error " << best.val_error << " at epoch " << best.epoch
        << "; final lr " << state.lr << "\n";
    return 0;
}

EvalReport cmd_eval(const RunConfig& config, const fs::path& checkpoint, Split split, std::ostream& out)
{
    auto model = init_model<Real>(config.train);
    const std::uint64_t stored = load_checkpoint(checkpoint, model);
    const std::uint64_t expected = config_hash(config.train);
    if (stored != expected) {
        std::ostringstream msg;
        msg << "checkpoint " << checkpoint.string() << " was written under config hash " << std::hex << stored
            << " but the current training configuration hashes to " << expected
            << "; evaluate with the run_config.txt the checkpoint was trained with";
        throw ConfigError(msg.str());
    }
    const Dataset ds = read_dataset(config.dataset_dir);
    const auto& members = ds.split.members(split);
    const EvalReport r = evaluate(model, ds.pairs, members, config.train.normalization);

    std::ostringstream report;
    report << "split=" << to_string(split) << "\n"
           << "pairs=" << members.size() << "\n"
           << "covers=" << r.covers << "\n"
           << "stegos=" << r.stegos << "\n"
           << "false_alarms=" << r.false_alarms << "\n"
           << "missed_detections=" << r.missed << "\n"
           << "misclassified=" << r.misclassified() << "\n"
           << "detection_error=" << real17(r.error()) << "\n";
    const fs::path dir = config.out_dir;
    OutputLock lock(dir);
    std::ofstream file(dir / ("eval_" + to_string(split) + ".txt"), std::ios::trunc);
    file << report.str();
    if (!file) {
        throw IoError("cannot write evaluation report in " + dir.string());
    }
    out << report.str();
    return r;
}

int cmd_export_filters(const RunConfig& config, const std::optional<fs::path>& checkpoint, std::ostream& out)
{
    auto model = load_model(config, checkpoint);
    const fs::path dir = config.out_dir;
    OutputLock lock(dir);
    export_kernel(dir, "k5", model.residual.k5);
    export_kernel(dir, "k3", model.residual.k3);
    out << "exported k5, k3 and their residual filters to " << dir.string() << "\n";
    return 0;
}

int cmd_export_features(const RunConfig& config, const std::optional<fs::path>& checkpoint, const fs::path& image,
                        std::ostream& out)
{
    auto model = load_model(config, checkpoint);
    const GrayImage img = read_pgm(image);
    const GrayImage* one[] = {&img};
    const auto x = image_tensor<Real>(one, config.train.normalization);
    const auto residual = residual_forward(x, model.residual);
    const auto tape = stegnet_forward(stack_residuals(residual), model.steg, Mode::eval);
    const auto& maps = tape.abs_maps();

    const fs::path dir = config.out_dir;
    OutputLock lock(dir);
    for (Index c = 0; c < maps.c(); ++c) {
        const auto plane = maps.plane(0, c);
        std::vector<double> values(static_cast<std::size_t>(plane.size()));
        for (Index y = 0; y < maps.h(); ++y) {
            for (Index x_ = 0; x_ < maps.w(); ++x_) {
                values[static_cast<std::size_t>(y * maps.w() + x_)] = double(plane(y, x_));
            }
        }
        char name[32];
        std::snprintf(name, sizeof name, "abs_g1_ch%d.pgm", static_cast<int>(c));
        write_pgm(dir / name, heatmap(values, static_cast<int>(maps.w()), static_cast<int>(maps.h())));
    }
    out << "exported " << maps.c() << " abs-layer feature maps to " << dir.string() << "\n";
    return 0;
}

int cmd_gradcheck(Index size, std::uint64_t seed, std::ostream& out)
{
    GradCheckSuiteOptions options;
    options.size = size;
    options.seed = seed;
    const GradCheckReport report = run_gradcheck_suite(options);
    out << std::left << std::setw(34) << "block" << std::setw(10) << "checked" << std::setw(10) << "excluded"
        << std::setw(16) << "max_rel_err" << std::setw(12) << "tolerance" << "result\n";
    for (const auto& b : report.blocks) {
        out << std::left << std::setw(34) << b.name << std::setw(10) << b.checked << std::setw(10) << b.excluded
            << std::setw(16) << std::setprecision(4) << b.max_relative_error << std::setw(12) << b.tolerance
            << (b.passed ? "ok" : "FAIL") << "\n";
    }
    out << report.blocks.size() << " blocks, " << report.failures() << " failures\n";
    return report.passed() ? 0 : 1;
}

} // namespace steglearn
