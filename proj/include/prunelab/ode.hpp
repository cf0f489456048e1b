#pragma once

// Probability-flow ODE integration with fixed-step Heun (explicit
// trapezoid, second order). The generic integrator takes any velocity
// field so analytic fields can drive the convergence checks.

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>

#include "prunelab/common.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

// field(X, t) -> velocity rows for every row of X. Integrates dX/dt = field
// from t_start to t_end (either direction) in `steps` equal steps.
template <typename Field>
Eigen::MatrixXd heun_integrate(Field&& field, Eigen::MatrixXd x, double t_start, double t_end,
                               int steps) {
    if (steps < 1) throw std::invalid_argument("heun_integrate: steps must be >= 1");
    const double dt = (t_end - t_start) / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = t_start + k * dt;
        const Eigen::MatrixXd k1 = field(x, t);
        const Eigen::MatrixXd x_pred = x + dt * k1;
        const Eigen::MatrixXd k2 = field(x_pred, t + dt);
        x += (dt / 2.0) * (k1 + k2);
        if (!x.allFinite()) {
            std::ostringstream msg;
            msg << "heun_integrate: non-finite state at step " << k << " (t = " << t + dt << ")";
            throw std::runtime_error(msg.str());
        }
    }
    return x;
}

// Draws x1 ~ N(0, I) and integrates the learned field from t = 1 to t = 0.
// Conditional models take one label per requested sample.
inline Eigen::MatrixXd sample_ode(const VelocityModel& model, Eigen::Index count, int steps,
                                  std::uint64_t seed, const Eigen::VectorXi& labels = {}) {
    if (count < 1) throw std::invalid_argument("sample_ode: count must be >= 1");
    if (steps < 1) throw std::invalid_argument("sample_ode: steps must be >= 1");
    if (model.shape().label_count > 0 && labels.size() != count)
        throw std::invalid_argument("sample_ode: conditional model needs one label per sample");

    auto rng = make_rng(seed, "sample_ode");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(count, model.shape().dim);
    for (Eigen::Index i = 0; i < count; ++i)
        for (Eigen::Index c = 0; c < x.cols(); ++c) x(i, c) = normal(rng);

    auto field = [&](const Eigen::MatrixXd& state, double t) {
        return model.velocity(state, Eigen::VectorXd::Constant(state.rows(), t), labels);
    };
    return heun_integrate(field, std::move(x), 1.0, 0.0, steps);
}

}  // namespace prunelab
