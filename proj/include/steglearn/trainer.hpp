#pragma once

// Joint SGD training of the residual network and the classifier, the
// plateau learning-rate schedule, and detection-error evaluation.

#include "steglearn/model.hpp"
#include "steglearn/stegosim.hpp"
#include "steglearn/train_config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace steglearn {

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/**
 * Residual kernels take their fixed initial matrices. Classifier conv weights
 * are N(0, init_std^2), the dense layer is uniform Xavier with zero bias, BN is
 * gamma 1 / beta 0. Only the dense weights carry weight decay.
 */
template <typename Scalar>
ModelState<Scalar> init_model(const TrainConfig& config)
{
    ModelState<Scalar> model;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, config.init_std);
    for (auto& g : model.steg.groups) {
        for (Index i = 0; i < g.conv.weights.size(); ++i) {
            g.conv.weights[i] = Scalar(normal(rng));
        }
    }
    auto& dense = model.steg.dense;
    const double limit = std::sqrt(6.0 / double(dense.shape[0] + dense.shape[1]));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (Index i = 0; i < dense.weights.size(); ++i) {
        dense.weights[i] = Scalar(uniform(rng));
    }
    dense.bias->setZero();
    dense.weight_decay = Scalar(config.fc_weight_decay);
    return model;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar normalize_pixel(std::uint8_t p, Normalization n)
{
    return n == Normalization::unit ? Scalar(p) / Scalar(255) : Scalar(p) / Scalar(127.5) - Scalar(1);
}

template <typename Scalar>
Tensor4<Scalar> image_tensor(std::span<const GrayImage* const> images, Normalization norm)
{
    if (images.empty()) {
        throw ConfigError("image_tensor: empty image list");
    }
    const int w = images.front()->width, h = images.front()->height;
    Tensor4<Scalar> t(static_cast<Index>(images.size()), 1, h, w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->width != w || images[i]->height != h) {
            throw DimensionError("image_tensor: mixed image sizes in one batch");
        }
        const Index base = t.offset(static_cast<Index>(i), 0, 0, 0);
        for (std::size_t j = 0; j < images[i]->pixels.size(); ++j) {
            t.data()[base + static_cast<Index>(j)] = normalize_pixel<Scalar>(images[i]->pixels[j], norm);
        }
    }
    return t;
}

/// Interleaves each selected pair as (cover, label 0), (stego, label 1); both target the cover.
template <typename Scalar>
Batch<Scalar> compose_pair_batch(const std::vector<ImagePair>& pairs, std::span<const std::size_t> selection,
                                 Normalization norm)
{
    std::vector<const GrayImage*> images, covers;
    std::vector<int> labels;
    for (std::size_t idx : selection) {
        const auto& p = pairs.at(idx);
        images.push_back(&p.cover);
        images.push_back(&p.stego);
        covers.push_back(&p.cover);
        covers.push_back(&p.cover);
        labels.push_back(0);
        labels.push_back(1);
    }
    Batch<Scalar> b{image_tensor<Scalar>(images, norm), image_tensor<Scalar>(covers, norm), std::move(labels)};
    return b;
}

/// Every batch holds whole cover/stego pairs: even size, (cover, stego) adjacent, both targeting the cover.
template <typename Scalar>
bool has_pair_structure(const Batch<Scalar>& b)
{
    const Index n = b.images.n();
    if (n == 0 || n % 2 != 0 || static_cast<Index>(b.labels.size()) != n) {
        return false;
    }
    const Index m = b.images.shape().sample();
    for (Index i = 0; i < n; i += 2) {
        if (b.labels[static_cast<std::size_t>(i)] != 0 || b.labels[static_cast<std::size_t>(i + 1)] != 1) {
            return false;
        }
        const auto cover_img = b.images.data().segment(i * m, m);
        if ((b.covers.data().segment(i * m, m) != cover_img).any() ||
            (b.covers.data().segment((i + 1) * m, m) != cover_img).any()) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double Jc = 0;
    double Jr = 0;
    double J = 0;
    double train_error = 0;
    double val_error = 0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
    int epoch = 0;
    double lr = 0;
    int drops_used = 0;
    double best_val_error = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;
    bool stop = false;
    std::mt19937_64 rng;
    std::vector<EpochRecord> history;

    static TrainState start(const TrainConfig& config)
    {
        TrainState s;
        s.lr = config.lr0;
        s.rng.seed(derive_seed(config.seed, 0x5eed));
        return s;
    }
};

/**
 * Plateau rule on validation error: an epoch improves when it beats the best
 * by more than plateau_min_delta. After plateau_epochs epochs without
 * improvement lr drops by lr_multiplier, at most lr_drops_max times; a full
 * plateau after the last drop sets `stop`.
 */
inline TrainState& lr_schedule_update(TrainState& state, double val_error, const TrainConfig& config)
{
    if (val_error < state.best_val_error - config.plateau_min_delta) {
        state.best_val_error = val_error;
        state.epochs_since_best = 0;
        return state;
    }
    ++state.epochs_since_best;
    if (state.epochs_since_best >= config.plateau_epochs) {
        if (state.drops_used < config.lr_drops_max) {
            ++state.drops_used;
            state.lr = config.lr0 * std::pow(config.lr_multiplier, state.drops_used);
            state.epochs_since_best = 0;
        } else {
            state.stop = true;
        }
    }
    return state;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
    Index covers = 0;
    Index stegos = 0;
    Index false_alarms = 0; // covers called stego
    Index missed = 0;       // stegos called cover

    Index misclassified() const { return false_alarms + missed; }
    double error() const { return double(misclassified()) / double(covers + stegos); }
    double false_alarm_rate() const { return covers ? double(false_alarms) / double(covers) : 0.0; }
    double missed_rate() const { return stegos ? double(missed) / double(stegos) : 0.0; }
};

/// Stego only when its probability strictly exceeds the cover probability; ties go to cover.
template <typename Scalar>
int predicted_class(const Eigen::Matrix<Scalar, Eigen::Dynamic, 2>& probabilities, Index row)
{
    return probabilities(row, 1) > probabilities(row, 0) ? 1 : 0;
}

template <typename Scalar>
void tally(EvalReport& report, const Eigen::Matrix<Scalar, Eigen::Dynamic, 2>& probabilities,
           std::span<const int> labels)
{
    for (Index i = 0; i < probabilities.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const int p = predicted_class(probabilities, i);
        if (y == 0) {
            ++report.covers;
            report.false_alarms += p == 1;
        } else {
            ++report.stegos;
            report.missed += p == 0;
        }
    }
}

template <typename Scalar>
EvalReport detection_report(const Eigen::Matrix<Scalar, Eigen::Dynamic, 2>& probabilities, std::span<const int> labels)
{
    if (labels.empty()) {
        throw ConfigError("evaluate: empty evaluation set");
    }
    EvalReport r;
    tally(r, probabilities, labels);
    return r;
}

template <typename Scalar>
EvalReport evaluate(ModelState<Scalar>& model, const std::vector<ImagePair>& pairs,
                    std::span<const std::size_t> selection, Normalization norm, std::size_t chunk_pairs = 16)
{
    if (selection.empty()) {
        throw ConfigError("evaluate: empty evaluation set");
    }
    EvalReport report;
    for (std::size_t start = 0; start < selection.size(); start += chunk_pairs) {
        const auto part = selection.subspan(start, std::min(chunk_pairs, selection.size() - start));
        const auto batch = compose_pair_batch<Scalar>(pairs, part, norm);
        const auto residual = residual_forward(batch.images, model.residual);
        const auto probs = stegnet_probabilities(stack_residuals(residual), model.steg, Mode::eval);
        tally(report, probs, batch.labels);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

struct StepResult {
    double J = 0;
    double Jc = 0;
    double Jr = 0;
    Index images = 0;
    Index errors = 0;
    Index clamp_count = 0;
};

template <typename Scalar>
void check_gradients_finite(ModelState<Scalar>& model)
{
    for_each_layer(model, [](const std::string& name, LayerParams<Scalar>& p) {
        if (!p.grad.isFinite().all() || (p.bias_grad && !p.bias_grad->isFinite().all())) {
            throw NumericError("train_step: non-finite gradient in block " + name);
        }
    });
}

/// Classical momentum: v <- mu*v - lr*(g + wd*w), w <- w + v. Biases carry no decay.
template <typename Scalar>
void sgd_update(ModelState<Scalar>& model, Scalar lr, Scalar momentum)
{
    for_each_layer(model, [&](const std::string&, LayerParams<Scalar>& p) {
        p.momentum = momentum * p.momentum - lr * (p.grad + p.weight_decay * p.weights);
        p.weights += p.momentum;
        if (p.bias) {
            *p.bias_momentum = momentum * *p.bias_momentum - lr * *p.bias_grad;
            *p.bias += *p.bias_momentum;
        }
    });
}

/// One forward/backward/update on a pair batch, both sub-networks in the same step.
template <typename Scalar>
StepResult train_step(const Batch<Scalar>& batch, ModelState<Scalar>& model, const TrainState& state,
                      const TrainConfig& config)
{
    if (!has_pair_structure(batch)) {
        throw ConfigError("train_step: batch is not composed of adjacent cover/stego pairs");
    }
    const Scalar lambda = Scalar(config.lambda);
    zero_grad(model);
    auto pass = joint_forward(model, batch, lambda, Mode::train);
    if (!std::isfinite(double(pass.loss.J))) {
        throw NumericError("train_step: non-finite loss (Jc=" + std::to_string(double(pass.loss.Jc)) +
                           ", Jr=" + std::to_string(double(pass.loss.Jr)) + ")");
    }
    joint_backward(model, pass, batch, lambda, !config.sever_classifier_path);
    check_gradients_finite(model);
    sgd_update(model, Scalar(state.lr), Scalar(config.momentum));

    StepResult r;
    r.J = double(pass.loss.J);
    r.Jc = double(pass.loss.Jc);
    r.Jr = double(pass.loss.Jr);
    r.images = batch.images.n();
    r.clamp_count = pass.clamp_count;
    for (Index i = 0; i < r.images; ++i) {
        r.errors += predicted_class(pass.steg.probabilities, i) != batch.labels[static_cast<std::size_t>(i)];
    }
    return r;
}

struct TrainData {
    const std::vector<ImagePair>* pairs = nullptr;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
};

/// Shuffles the training pairs and runs one pass of pair batches. Returns the epoch record without val_error.
template <typename Scalar>
EpochRecord train_epoch(ModelState<Scalar>& model, TrainState& state, const TrainConfig& config, const TrainData& data)
{
    std::vector<std::size_t> order = data.train;
    std::shuffle(order.begin(), order.end(), state.rng);
    const std::size_t pairs_per_batch = static_cast<std::size_t>(config.batch_size / 2);
    double sum_jc = 0, sum_jr = 0;
    Index images = 0, errors = 0;
    for (std::size_t start = 0; start < order.size(); start += pairs_per_batch) {
        const std::span<const std::size_t> sel(order.data() + start, std::min(pairs_per_batch, order.size() - start));
        const auto batch = compose_pair_batch<Scalar>(*data.pairs, sel, config.normalization);
        const auto r = train_step(batch, model, state, config);
        sum_jc += r.Jc * double(r.images);
        sum_jr += r.Jr * double(r.images);
        images += r.images;
        errors += r.errors;
    }
    EpochRecord rec;
    rec.epoch = state.epoch + 1;
    rec.lr = state.lr;
    rec.Jc = sum_jc / double(images);
    rec.Jr = sum_jr / double(images);
    rec.J = combine_losses(rec.Jc, rec.Jr, config.lambda);
    rec.train_error = double(errors) / double(images);
    return rec;
}

/// Called after every epoch; `improved` is true when the validation error set a new best.
template <typename Scalar>
using EpochCallback = std::function<void(const EpochRecord&, ModelState<Scalar>&, bool improved)>;

/**
 * Trains until max_epochs or until the schedule signals stop. The record's lr
 * is the rate used during that epoch.
 */
template <typename Scalar>
TrainState train(ModelState<Scalar>& model, const TrainConfig& config, const TrainData& data,
                 const EpochCallback<Scalar>& on_epoch = {})
{
    config.validate();
    if (data.train.empty() || data.val.empty()) {
        throw ConfigError("train: training and validation splits must be non-empty");
    }
    TrainState state = TrainState::start(config);
    while (state.epoch < config.max_epochs && !state.stop) {
        EpochRecord rec = train_epoch(model, state, config, data);
        rec.val_error = evaluate(model, *data.pairs, data.val, config.normalization).error();
        const double previous_best = state.best_val_error;
        lr_schedule_update(state, rec.val_error, config);
        ++state.epoch;
        state.history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec, model, state.best_val_error < previous_best);
        }
    }
    return state;
}

} // namespace steglearn
