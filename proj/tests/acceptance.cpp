// Acceptance suite: one PASS/FAIL line per criterion, details on the same line.
// Usage: acceptance [work_dir]. Progress of the long training runs goes to
// <work_dir>/acceptance.log.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "steglearn/checkpoint.hpp"
#include "steglearn/commands.hpp"
#include "steglearn/gradcheck_suite.hpp"
#include "steglearn/residual_net.hpp"

using namespace steglearn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<double>> read_matrix(const fs::path& p)
{
    std::vector<std::vector<double>> rows;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        std::vector<double> row;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            row.push_back(std::stod(cell));
        }
        rows.push_back(row);
    }
    return rows;
}

bool identity_holds(double J, double Jc, double Jr, double lambda, double* worst)
{
    const double expect = (1 - lambda) * Jc + lambda * Jr;
    const double rel = std::abs(J - expect) / std::max(std::abs(J), 1e-300);
    *worst = std::max(*worst, rel);
    return rel <= 1e-15;
}

// ---------------------------------------------------------------------------

// The learning-signal configuration; the pilot that fixed it is in docs/pilot.md.
RunConfig learning_config(const fs::path& work)
{
    RunConfig c;
    c.dataset.n_pairs = 2000;
    c.dataset.n_test_pairs = 500;
    c.dataset.width = c.dataset.height = 64;
    c.dataset.rate_bpp = 0.4;
    c.dataset.master_seed = 11;
    c.dataset_dir = (work / "data").string();
    c.train.seed = 5;
    c.train.max_epochs = 10;
    return c;
}

constexpr double kLearningThreshold = 0.40;

struct TrainedRun {
    fs::path dir;
    EvalReport test;
    double seconds = 0;
};

TrainedRun train_and_test(RunConfig config, const fs::path& dir, std::ostream& log)
{
    const auto t0 = Clock::now();
    config.out_dir = dir.string();
    fs::remove_all(dir);
    cmd_train(config, log);
    auto eval_config = config;
    eval_config.out_dir = (dir / "eval").string();
    TrainedRun run{dir, cmd_eval(eval_config, dir / kBestCheckpointName, Split::test, log), 0};
    run.seconds = seconds_since(t0);
    return run;
}

// ---------------------------------------------------------------------------

Verdict gradient_correctness()
{
    const auto t0 = Clock::now();
    const auto report = run_gradcheck_suite();
    const double secs = seconds_since(t0);
    double worst = 0;
    std::string worst_name;
    for (const auto& b : report.blocks) {
        if (b.max_relative_error / b.tolerance > worst) {
            worst = b.max_relative_error / b.tolerance;
            worst_name = b.name;
        }
    }
    return {report.passed() && secs < 120,
            std::to_string(report.blocks.size()) + " blocks, " + std::to_string(report.failures()) +
                " failures; worst err/tol " + fmt("%.3g", worst) + " (" + worst_name + "); " + fmt("%.1f", secs) +
                " s (limit 120 s)"};
}

Verdict init_fidelity(const fs::path& work)
{
    RunConfig c;
    c.out_dir = (work / "filters").string();
    fs::remove_all(c.out_dir);
    std::ostringstream sink;
    cmd_export_filters(c, std::nullopt, sink);
    const auto k5 = read_matrix(work / "filters" / "k5.csv");
    const auto k3 = read_matrix(work / "filters" / "k3.csv");
    const auto eff = read_matrix(work / "filters" / "k5_residual.csv");
    bool exact = k5.size() == 5 && k3.size() == 3 && eff.size() == 5;
    double eff_err = 0;
    for (std::size_t y = 0; exact && y < 5; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
            exact = exact && k5[y][x] == kInitK5Numerators[y * 5 + x] / 12.0;
            eff_err = std::max(eff_err, std::abs(eff[y][x] + kKvNumerators[y * 5 + x] / 12.0));
        }
    }
    for (std::size_t y = 0; exact && y < 3; ++y) {
        for (std::size_t x = 0; x < 3; ++x) {
            exact = exact && k3[y][x] == kInitK3Numerators[y * 3 + x] / 4.0;
        }
    }

    // Flat images, every gray level. k3 (dyadic entries) must give exactly 0.
    // k5's entries n/12 have no binary representation: the stored kernel sums
    // to 1 - 1.7e-16, so the exact residual of a flat image c is that defect
    // times c. We require exactly that and nothing from the padding.
    const auto p = init_residual_params<Real>();
    Real sum5 = 0;
    for (Index i = 0; i < 25; ++i) {
        sum5 += p.k5.weights[i];
    }
    bool flat = true;
    double flat_max = 0;
    for (int level = 0; level < 256; ++level) {
        const Real v = normalize_pixel<Real>(static_cast<std::uint8_t>(level), Normalization::unit);
        const auto out = residual_forward(Tensor4<Real>::constant({1, 1, 16, 16}, v), p);
        flat = flat && (out.res3.data() == Real(0)).all() && (out.res5.data() == (Real(1) - sum5) * v).all();
        flat_max = std::max(flat_max, double(out.res5.data().abs().maxCoeff()));
    }
    return {exact && eff_err <= 1e-12 && flat,
            std::string("k5/k3 exact: ") + (exact ? "yes" : "NO") + "; effective filter vs -KV " +
                fmt("%.2g", eff_err) + " (tol 1e-12); flat images 0..255: res3 exactly 0 and res5 = kernel-sum defect only: " +
                (flat ? "yes" : "NO") + " (max |res5| " + fmt("%.2g", flat_max) + ")"};
}

struct SmokeResult {
    Verdict verdict;
    std::vector<StepResult> steps;
    double lambda = 0;
};

SmokeResult overfit_smoke()
{
    DatasetSpec spec;
    spec.n_pairs = 10;
    spec.n_test_pairs = 0;
    spec.width = spec.height = 32;
    spec.master_seed = 5;
    const auto ds = make_dataset(spec);
    TrainConfig cfg;
    // The default 1e-3 reaches only ~0.19 of J0 in 200 steps; see the decision log.
    cfg.lr0 = 0.01;
    auto model = init_model<Real>(cfg);
    const std::vector<std::size_t> sel = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto batch = compose_pair_batch<Real>(ds.pairs, sel, cfg.normalization);
    TrainState state = TrainState::start(cfg);

    SmokeResult r;
    r.lambda = cfg.lambda;
    const auto t0 = Clock::now();
    for (int s = 0; s < 200; ++s) {
        r.steps.push_back(train_step(batch, model, state, cfg));
    }
    const double secs = seconds_since(t0);
    const double J0 = r.steps.front().J, J = r.steps.back().J;
    r.verdict = {J < 0.1 * J0 && secs < 300,
                 "8 pairs 32x32, lr 0.01: J0 " + fmt("%.4g", J0) + " -> " + fmt("%.4g", J) + " after 200 steps (ratio " +
                     fmt("%.3f", J / J0) + ", limit 0.1); " + fmt("%.1f", secs) + " s (limit 300 s)"};
    return r;
}

Verdict loss_identities(const SmokeResult& smoke, const std::vector<fs::path>& histories, double lambda)
{
    double worst = 0;
    bool ok = true;
    std::size_t rows = 0;
    for (const auto& s : smoke.steps) {
        ok = identity_holds(s.J, s.Jc, s.Jr, smoke.lambda, &worst) && ok;
        ++rows;
    }
    for (const auto& h : histories) {
        for (const auto& rec : read_history_csv(h)) {
            ok = identity_holds(rec.J, rec.Jc, rec.Jr, lambda, &worst) && ok;
            ++rows;
        }
    }
    const bool branches = smooth_l1_element(0.5) == 0.125 && smooth_l1_element(3.0) == 2.5;
    Eigen::Matrix<double, Eigen::Dynamic, 2> half(1, 2);
    half << 0.5, 0.5;
    const int one[] = {1};
    const double nll = nll_loss<double>(half, one).loss;
    const bool ln2 = std::abs(nll - std::log(2.0)) <= 1e-15;
    return {ok && branches && ln2 && rows > 200,
            std::to_string(rows) + " logged steps/epochs, worst relative deviation " + fmt("%.2g", worst) +
                " (tol 1e-15, lambda " + fmt("%g", lambda) + "); smooth-L1(0.5)=0.125, smooth-L1(3)=2.5: " +
                (branches ? "yes" : "NO") + "; NLL(f=0.5) = " + fmt("%.17g", nll)};
}

Verdict schedule_conformance()
{
    TrainConfig cfg; // lr0 1e-3, multiplier 0.3, 5 drops, 50-epoch plateaus
    TrainState s = TrainState::start(cfg);
    std::vector<double> sequence;
    std::vector<int> lengths;
    int epochs = 0;
    while (!s.stop && epochs < 1000) {
        if (sequence.empty() || sequence.back() != s.lr) {
            sequence.push_back(s.lr);
            lengths.push_back(0);
        }
        ++lengths.back();
        ++epochs;
        lr_schedule_update(s, 0.3, cfg); // flat validation error: every epoch after the first is a plateau epoch
    }
    const std::vector<double> expected = {1e-3, 3e-4, 9e-5, 2.7e-5, 8.1e-6, 2.43e-6};
    bool ok = sequence.size() == expected.size() && s.stop;
    std::string seq;
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        seq += (i ? ", " : "") + fmt("%.3g", sequence[i]) + "x" + std::to_string(lengths[i]);
        if (i < expected.size()) {
            ok = ok && std::abs(sequence[i] - expected[i]) <= 1e-12 * expected[i];
        }
        // a drop happens after 50 epochs without improvement; the first epoch sets the best
        ok = ok && lengths[i] == (i == 0 ? 51 : 50);
    }
    return {ok, "lr x epochs: " + seq + "; stopped after " + std::to_string(epochs) + " epochs"};
}

Verdict dual_path_toggle(const RunConfig& config, const Dataset& ds)
{
    const std::vector<std::size_t> sel(ds.split.train.begin(), ds.split.train.begin() + 16);
    const auto batch = compose_pair_batch<Real>(ds.pairs, sel, config.train.normalization);
    double diff = 0;
    {
        auto joined = init_model<Real>(config.train);
        auto severed = init_model<Real>(config.train);
        auto a = joint_forward(joined, batch, Real(config.train.lambda), Mode::train);
        joint_backward(joined, a, batch, Real(config.train.lambda), true);
        auto b = joint_forward(severed, batch, Real(config.train.lambda), Mode::train);
        joint_backward(severed, b, batch, Real(config.train.lambda), false);
        diff = std::max((joined.residual.k5.grad - severed.residual.k5.grad).abs().maxCoeff(),
                        (joined.residual.k3.grad - severed.residual.k3.grad).abs().maxCoeff());
    }
    return {diff > 1e-12, "max |d theta_r grad| joined vs severed on one batch " + fmt("%.3g", diff)};
}

Verdict simulator_statistics()
{
    const double rate = 0.4;
    std::size_t changes = 0, pixels = 0, identical = 0, outside = 0;
    for (std::uint64_t i = 0; i < 100; ++i) {
        const auto cover = gen_cover(64, 64, derive_seed(77, 2 * i));
        const auto stego = embed_lsbm(cover, rate, derive_seed(77, 2 * i + 1));
        std::size_t k = 0;
        for (std::size_t j = 0; j < cover.pixels.size(); ++j) {
            k += cover.pixels[j] != stego.pixels[j];
        }
        const double n = double(cover.pixels.size());
        outside += std::abs(double(k) - n * rate / 2) > 3 * std::sqrt(n * rate / 2 * (1 - rate / 2));
        changes += k;
        pixels += cover.pixels.size();
        identical += embed_lsbm(cover, 0.0, derive_seed(77, 2 * i + 1)) == cover;
    }
    const double p = rate / 2, n = double(pixels);
    const double sigma = std::sqrt(n * p * (1 - p));
    const double dev = (double(changes) - n * p) / sigma;
    return {std::abs(dev) <= 3 && identical == 100,
            "100 images 64x64 at 0.4 bpp: change rate " + fmt("%.5f", double(changes) / n) + " vs 0.2, " +
                fmt("%+.2f", dev) + " sigma pooled (limit 3); " + std::to_string(outside) +
                " single images outside 3 sigma; rate 0 bit-identical " + std::to_string(identical) + "/100"};
}

} // namespace

int main(int argc, char** argv)
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "steglearn_acceptance";
    fs::create_directories(work);
    std::ofstream log(work / "acceptance.log", std::ios::trunc);

    std::vector<std::pair<std::string, Verdict>> results;
    auto run = [&](const std::string& id, const std::function<Verdict()>& fn) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        results.emplace_back(id, v);
        const std::string line = (v.pass ? "PASS " : "FAIL ") + id + "  " + v.detail;
        std::cout << line << std::endl;
        log << line << std::endl;
    };

    std::cout << "INFO C1  not reproducible at desk scale: the published error rates need BOSSbase 512x512, "
                 "four adaptive embedders and long GPU training; C2-C10 are the scaled-down substitutes"
              << std::endl;

    run("C2 ", gradient_correctness);
    run("C3 ", [&] { return init_fidelity(work); });
    SmokeResult smoke;
    run("C5 ", [&] {
        smoke = overfit_smoke();
        return smoke.verdict;
    });
    run("C8 ", schedule_conformance);
    run("C10", simulator_statistics);

    // Long runs: learning signal, its repeat, and the severed-path ablation.
    const RunConfig config = learning_config(work);
    std::optional<TrainedRun> joined, repeat, severed;
    std::optional<Dataset> ds;
    run("C6 ", [&] {
        fs::remove_all(config.dataset_dir);
        auto gen = config;
        gen.out_dir = config.dataset_dir;
        cmd_generate(gen, log);
        ds = read_dataset(config.dataset_dir);
        joined = train_and_test(config, work / "run_joint", log);
        const double e = joined->test.error();
        return Verdict{e < kLearningThreshold,
                       "2000 pairs 64x64 @0.4 bpp, " + std::to_string(config.train.max_epochs) +
                           " epochs: held-out error " + fmt("%.4f", e) + " on " +
                           std::to_string(joined->test.covers + joined->test.stegos) + " images (limit " +
                           fmt("%.2f", kLearningThreshold) + ", chance 0.50); " + fmt("%.0f", joined->seconds) + " s"};
    });
    run("C9 ", [&] {
        if (!joined) {
            return Verdict{false, "learning-signal run unavailable"};
        }
        repeat = train_and_test(config, work / "run_repeat", log);
        const bool same = slurp(joined->dir / kHistoryName) == slurp(repeat->dir / kHistoryName);
        return Verdict{same, std::string("history.csv of two seeded runs ") +
                                 (same ? "bitwise identical" : "DIFFER") + " (" +
                                 std::to_string(read_history_csv(joined->dir / kHistoryName).size()) + " epochs)"};
    });
    run("C7 ", [&] {
        if (!joined || !ds) {
            return Verdict{false, "learning-signal run unavailable"};
        }
        Verdict toggle = dual_path_toggle(config, *ds);
        auto sev = config;
        sev.train.sever_classifier_path = true;
        severed = train_and_test(sev, work / "run_severed", log);
        const double margin = severed->test.error() - joined->test.error();
        toggle.detail += "; held-out error joined " + fmt("%.4f", joined->test.error()) + ", severed " +
                         fmt("%.4f", severed->test.error()) + ", degradation " + fmt("%+.4f", margin) +
                         " (report only)";
        return toggle;
    });
    run("C4 ", [&] {
        std::vector<fs::path> histories;
        for (const auto* r : {&joined, &repeat, &severed}) {
            if (*r) {
                histories.push_back((*r)->dir / kHistoryName);
            }
        }
        return loss_identities(smoke, histories, config.train.lambda);
    });

    int failures = 0;
    for (const auto& [id, v] : results) {
        failures += !v.pass;
    }
    std::cout << results.size() << " criteria checked, " << failures << " failed" << std::endl;
    return failures == 0 ? 0 : 1;
}
