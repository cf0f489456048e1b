#pragma once

// Flow-matching training. train() runs minibatch Adam over the kept subset;
// pretrain_trace() runs the short scoring phase and records per-sample probe
// losses after every epoch at a fixed timestep with per-sample fixed noise,
// so losses are comparable across epochs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/dataset.hpp"
#include "prunelab/manifest.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

struct TrainConfig {
    int steps = 2000;
    int batch_size = 128;
    double learning_rate = 1e-3;
    double lr_decay = 0.01;        // cosine decay to learning_rate * lr_decay; 1 = constant
    double ema_decay = 0.999;      // weight EMA returned as the trained model; 0 = off
    double time_bias = 1.0;        // t = u^p with u ~ U(0,1); p > 1 emphasizes small t
    std::uint64_t seed = 0;
    int pretrain_epochs = 5;       // scoring phase length
    double probe_timestep = 0.1;   // fixed t* for scorer probes
    int log_window = 50;           // steps per loss-curve point

    void validate() const {
        if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (learning_rate <= 0.0) throw std::invalid_argument("train: learning_rate must be > 0");
        if (lr_decay <= 0.0 || lr_decay > 1.0)
            throw std::invalid_argument("train: lr_decay must lie in (0,1]");
        if (ema_decay < 0.0 || ema_decay >= 1.0)
            throw std::invalid_argument("train: ema_decay must lie in [0,1)");
        if (time_bias < 1.0)
            throw std::invalid_argument("train: time_bias must be >= 1");
        if (probe_timestep <= 0.0 || probe_timestep >= 1.0)
            throw std::invalid_argument("train: probe_timestep must lie in (0,1)");
        if (log_window < 1) throw std::invalid_argument("train: log_window must be >= 1");
    }

    // Cosine schedule from learning_rate down to learning_rate * lr_decay.
    double lr_at(int step, int total) const {
        const double floor = learning_rate * lr_decay;
        const double phase = total <= 1 ? 1.0 : static_cast<double>(step) / (total - 1);
        return floor + 0.5 * (learning_rate - floor) * (1.0 + std::cos(phase * std::numbers::pi));
    }
};

struct LossTrace {
    Eigen::MatrixXd losses;  // n x E, nonnegative

    Eigen::Index samples() const { return losses.rows(); }
    Eigen::Index epochs() const { return losses.cols(); }
};

namespace detail {

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(Eigen::Index params)
        : m(Eigen::VectorXd::Zero(params)), v(Eigen::VectorXd::Zero(params)) {}

    void update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
        ++step;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        theta -= (lr / c1) * m.cwiseQuotient(((v / c2).cwiseSqrt().array() + eps).matrix());
    }
};

// t is drawn from (eps, 1-eps) so every draw stays inside the loss domain.
constexpr double kTimeMargin = 1e-6;

inline void check_finite_params(const VelocityModel& model, long step) {
    if (!model.params_finite()) {
        std::ostringstream msg;
        msg << "training step " << step << " produced non-finite parameters";
        throw std::runtime_error(msg.str());
    }
}

// Batched probe losses: ||v(x_t, t*) - (noise - x0)||^2 per row.
inline Eigen::VectorXd probe_losses(const VelocityModel& model, const Eigen::MatrixXd& x0,
                                    const Eigen::MatrixXd& noise, double t_star,
                                    const Eigen::VectorXi& labels) {
    const Eigen::Index n = x0.rows();
    const Eigen::VectorXd t = Eigen::VectorXd::Constant(n, t_star);
    const Eigen::MatrixXd xt = (1.0 - t_star) * x0 + t_star * noise;
    const Eigen::MatrixXd v = model.velocity(xt, t, labels);
    return (v - (noise - x0)).rowwise().squaredNorm();
}

}  // namespace detail

struct TrainResult {
    VelocityModel model;
    std::vector<double> loss_curve;  // mean loss per logging window
};

inline TrainResult train(const VelocityModel& init, const Dataset& ds, const SubsetManifest& manifest,
                         const TrainConfig& cfg) {
    cfg.validate();
    validate_manifest(manifest);
    if (manifest.kept_ids.empty()) throw std::invalid_argument("train: pruned to zero samples");
    if (cfg.batch_size > ds.n()) throw std::invalid_argument("train: batch_size exceeds dataset size");
    const bool conditional = init.shape().label_count > 0;
    if (conditional && !ds.labels) throw std::invalid_argument("train: conditional model needs labels");
    for (auto id : manifest.kept_ids)
        if (id < 0 || id >= ds.n()) throw std::out_of_range("train: manifest id out of range");

    const Eigen::Index d = ds.dim();
    const auto& kept = manifest.kept_ids;
    auto rng = make_rng(cfg.seed, "train");
    std::uniform_int_distribution<size_t> pick(0, kept.size() - 1);
    std::uniform_real_distribution<double> tdist(detail::kTimeMargin, 1.0 - detail::kTimeMargin);
    std::normal_distribution<double> normal(0.0, 1.0);

    VelocityModel model = init;
    Eigen::VectorXd params = model.flat_params();
    detail::AdamState adam(params.size());
    Eigen::VectorXd grad(params.size());
    Eigen::VectorXd ema = params;

    Eigen::MatrixXd x0(cfg.batch_size, d), x1(cfg.batch_size, d);
    Eigen::VectorXd t(cfg.batch_size);
    Eigen::VectorXi labels;
    if (conditional) labels.resize(cfg.batch_size);

    TrainResult result;
    double window_sum = 0.0;
    int window_fill = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto id = kept[pick(rng)];
            x0.row(b) = ds.features.row(id);
            if (conditional) labels(b) = (*ds.labels)(id);
            // time_bias > 1 spends more draws near t = 0, where the field
            // must resolve the data sharply; the regression target at each
            // (x, t) is unaffected by the t prior
            const double u = tdist(rng);
            t(b) = cfg.time_bias == 1.0 ? u : std::max(std::pow(u, cfg.time_bias), detail::kTimeMargin);
            for (Eigen::Index c = 0; c < d; ++c) x1(b, c) = normal(rng);
        }
        grad.setZero();
        const double loss = model.loss_and_grad(x0, x1, t, labels, &grad);
        if (!std::isfinite(loss) || loss < 0.0)
            throw std::runtime_error("training step " + std::to_string(step) +
                                     " produced an invalid loss");
        adam.update(params, grad, cfg.lr_at(step, cfg.steps));
        model.set_flat_params(params);
        detail::check_finite_params(model, step);
        if (cfg.ema_decay > 0.0) ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * params;

        window_sum += loss;
        if (++window_fill == cfg.log_window || step + 1 == cfg.steps) {
            result.loss_curve.push_back(window_sum / window_fill);
            window_sum = 0.0;
            window_fill = 0;
        }
    }
    if (cfg.ema_decay > 0.0) model.set_flat_params(ema);
    result.model = std::move(model);
    return result;
}

struct PretrainResult {
    VelocityModel model;          // final-epoch model, feeds GraNd/EL2N probes
    LossTrace trace;              // n x E probe losses
    Eigen::MatrixXd probe_noise;  // n x d, drawn once and reused every epoch
    double probe_timestep = 0.1;
};

inline PretrainResult pretrain_trace(const VelocityModel& init, const Dataset& ds,
                                     const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.pretrain_epochs < 2)
        throw std::invalid_argument("pretrain_trace: need at least 2 epochs for a loss delta");
    const bool conditional = init.shape().label_count > 0;
    if (conditional && !ds.labels) throw std::invalid_argument("pretrain_trace: conditional model needs labels");

    const Eigen::Index n = ds.n(), d = ds.dim();
    auto noise_rng = make_rng(cfg.seed, "probe_noise");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd probe_noise(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < d; ++c) probe_noise(i, c) = normal(noise_rng);

    auto rng = make_rng(cfg.seed, "pretrain");
    std::uniform_real_distribution<double> tdist(detail::kTimeMargin, 1.0 - detail::kTimeMargin);

    Eigen::VectorXi all_labels;
    if (conditional) all_labels = *ds.labels;

    VelocityModel model = init;
    Eigen::VectorXd params = model.flat_params();
    detail::AdamState adam(params.size());
    Eigen::VectorXd grad(params.size());

    std::vector<Eigen::Index> order(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    LossTrace trace;
    trace.losses.resize(n, cfg.pretrain_epochs);

    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(n));
    long step = 0;
    for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < n; start += batch) {
            const Eigen::Index bsz = std::min<Eigen::Index>(batch, n - start);
            Eigen::MatrixXd x0(bsz, d), x1(bsz, d);
            Eigen::VectorXd t(bsz);
            Eigen::VectorXi labels;
            if (conditional) labels.resize(bsz);
            for (Eigen::Index b = 0; b < bsz; ++b) {
                const Eigen::Index id = order[static_cast<size_t>(start + b)];
                x0.row(b) = ds.features.row(id);
                if (conditional) labels(b) = (*ds.labels)(id);
                t(b) = tdist(rng);
                for (Eigen::Index c = 0; c < d; ++c) x1(b, c) = normal(rng);
            }
            grad.setZero();
            const double loss = model.loss_and_grad(x0, x1, t, labels, &grad);
            if (!std::isfinite(loss) || loss < 0.0)
                throw std::runtime_error("pretraining step " + std::to_string(step) +
                                         " produced an invalid loss");
            adam.update(params, grad, cfg.learning_rate);
            model.set_flat_params(params);
            detail::check_finite_params(model, step++);
        }
        trace.losses.col(epoch) =
            detail::probe_losses(model, ds.features, probe_noise, cfg.probe_timestep, all_labels);
    }

    PretrainResult result;
    result.model = std::move(model);
    result.trace = std::move(trace);
    result.probe_noise = std::move(probe_noise);
    result.probe_timestep = cfg.probe_timestep;
    return result;
}

}  // namespace prunelab
