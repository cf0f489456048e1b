#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "prunelab/model.hpp"
#include "test_util.hpp"

using namespace prunelab;

namespace {

// Independent scalar re-implementation of the interpolant MSE: plain loops,
// no Eigen expressions, used as the dual-implementation oracle.
double scalar_loss_oracle(const VelocityModel& model, const Eigen::VectorXd& x0,
                          const Eigen::VectorXd& noise, double t) {
    const int d = model.shape().dim;
    std::vector<double> input(static_cast<size_t>(model.shape().input_size()), 0.0);
    for (int c = 0; c < d; ++c) input[static_cast<size_t>(c)] = (1.0 - t) * x0(c) + t * noise(c);
    input[static_cast<size_t>(d)] = t;
    input[static_cast<size_t>(d) + 1] = 1.0 - t;

    const Eigen::VectorXd params = model.flat_params();
    Eigen::Index at = 0;
    std::vector<double> h = input;
    std::vector<int> outs(model.shape().hidden);
    outs.push_back(d);
    for (size_t layer = 0; layer < outs.size(); ++layer) {
        const int out = outs[layer];
        const int in = static_cast<int>(h.size());
        std::vector<double> z(static_cast<size_t>(out), 0.0);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) z[static_cast<size_t>(r)] += params(at++) * h[static_cast<size_t>(c)];
        for (int r = 0; r < out; ++r) z[static_cast<size_t>(r)] += params(at++);
        if (layer + 1 < outs.size())
            for (double& v : z) v = std::tanh(v);
        h = std::move(z);
    }
    double loss = 0.0;
    for (int c = 0; c < d; ++c) {
        const double diff = h[static_cast<size_t>(c)] - (noise(c) - x0(c));
        loss += diff * diff;
    }
    return loss;
}

}  // namespace

TEST_CASE("loss is zero when the model outputs the exact target", "[model]") {
    // one linear layer, weights picked so v(x,t) = noise - x0 for this input
    ModelShape shape{.dim = 1, .hidden = {}, .label_count = 0};
    VelocityModel m = VelocityModel::init(shape, 0);
    // input = [x_t, t, 1-t]; choose x0 = 0, noise = 2, t arbitrary:
    // x_t = 2t, target = 2. v = w0 x_t + w1 t + w2 (1-t) + b = 2 when
    // w0 = 0, w1 = w2 = 0, b = 2.
    Eigen::VectorXd params = Eigen::VectorXd::Zero(m.param_count());
    params(3) = 2.0;  // bias
    m.set_flat_params(params);
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd noise(1);
    noise << 2.0;
    CHECK(per_sample_loss(m, x0, noise, 0.3) == Catch::Approx(0.0).margin(1e-15));
    CHECK(per_sample_grad(m, x0, noise, 0.3).norm() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("zero model on a unit target gives loss 1", "[model]") {
    ModelShape shape{.dim = 3, .hidden = {4}, .label_count = 0};
    VelocityModel m = VelocityModel::init(shape, 1);
    m.set_flat_params(Eigen::VectorXd::Zero(m.param_count()));
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(3);
    e1(0) = 1.0;
    for (double t : {0.1, 0.5, 0.9})
        CHECK(per_sample_loss(m, x0, e1, t) == Catch::Approx(1.0));
}

TEST_CASE("loss matches the independent scalar implementation", "[model]") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> tdist(0.05, 0.95);
    for (int trial = 0; trial < 20; ++trial) {
        ModelShape shape{.dim = 2 + trial % 3, .hidden = {5, 3}, .label_count = 0};
        const VelocityModel m = VelocityModel::init(shape, rng());
        Eigen::VectorXd x0(shape.dim), noise(shape.dim);
        for (int c = 0; c < shape.dim; ++c) {
            x0(c) = normal(rng);
            noise(c) = normal(rng);
        }
        const double t = tdist(rng);
        CHECK(per_sample_loss(m, x0, noise, t) ==
              Catch::Approx(scalar_loss_oracle(m, x0, noise, t)).epsilon(1e-12));
    }
}

TEST_CASE("gradient matches central finite differences", "[model]") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> tdist(0.05, 0.95);
    for (int trial = 0; trial < 10; ++trial) {
        ModelShape shape{.dim = 1 + trial % 2, .hidden = {4, 3}, .label_count = trial % 2 ? 2 : 0};
        VelocityModel m = VelocityModel::init(shape, rng());
        // nonzero biases so no gradient coordinate is structurally zero
        Eigen::VectorXd params = m.flat_params();
        for (Eigen::Index i = 0; i < params.size(); ++i) params(i) += 0.05 * normal(rng);
        m.set_flat_params(params);

        Eigen::VectorXd x0(shape.dim), noise(shape.dim);
        for (int c = 0; c < shape.dim; ++c) {
            x0(c) = normal(rng);
            noise(c) = normal(rng);
        }
        const double t = tdist(rng);
        const int label = shape.label_count > 0 ? trial % shape.label_count : -1;

        const Eigen::VectorXd analytic = per_sample_grad(m, x0, noise, t, label);
        VelocityModel probe = m;
        Eigen::VectorXd p = m.flat_params();
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double keep = p(i);
            const double h = 1e-5;
            p(i) = keep + h;
            probe.set_flat_params(p);
            const double up = per_sample_loss(probe, x0, noise, t, label);
            p(i) = keep - h;
            probe.set_flat_params(p);
            const double down = per_sample_loss(probe, x0, noise, t, label);
            p(i) = keep;
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::abs(analytic(i) - fd) /
                               std::max({std::abs(analytic(i)), std::abs(fd), 1e-6});
            CHECK(rel < 1e-4);
        }
    }
}

TEST_CASE("gradient of a duplicated sample is identical", "[model]") {
    ModelShape shape{.dim = 2, .hidden = {8}, .label_count = 0};
    const VelocityModel m = VelocityModel::init(shape, 3);
    Eigen::VectorXd x0(2), noise(2);
    x0 << 0.3, -0.7;
    noise << 1.1, 0.2;
    const Eigen::VectorXd g1 = per_sample_grad(m, x0, noise, 0.25);
    const Eigen::VectorXd g2 = per_sample_grad(m, x0, noise, 0.25);
    CHECK(testutil::bits_equal(g1, g2));
}

TEST_CASE("tiny one-hidden-unit model matches the hand-derived gradient", "[model]") {
    // v(x_t, t) = w2 * tanh(w0 x_t + w1 t + w1b (1-t) + b1) + b2, d = 1.
    // L = (v - (x1 - x0))^2. Gradient components derived symbolically below.
    ModelShape shape{.dim = 1, .hidden = {1}, .label_count = 0};
    VelocityModel m = VelocityModel::init(shape, 0);
    Eigen::VectorXd params(6);
    // order: W0 = [w0 w1 w1b], b0, W1 = [w2], b2
    params << 0.7, -0.4, 0.2, 0.1, 1.3, -0.5;
    m.set_flat_params(params);

    const double x0 = 0.6, x1 = -0.9, t = 0.3;
    const double xt = (1 - t) * x0 + t * x1;
    const double z = 0.7 * xt + (-0.4) * t + 0.2 * (1 - t) + 0.1;
    const double a = std::tanh(z);
    const double v = 1.3 * a + (-0.5);
    const double resid = v - (x1 - x0);
    const double dv = 2.0 * resid;
    const double da = dv * 1.3;
    const double dz = da * (1.0 - a * a);
    Eigen::VectorXd expected(6);
    expected << dz * xt, dz * t, dz * (1 - t), dz, dv * a, dv;

    Eigen::VectorXd x0v(1), x1v(1);
    x0v << x0;
    x1v << x1;
    const Eigen::VectorXd grad = per_sample_grad(m, x0v, x1v, t);
    REQUIRE(grad.size() == 6);
    for (Eigen::Index i = 0; i < 6; ++i)
        CHECK(grad(i) == Catch::Approx(expected(i)).margin(1e-10));
}

TEST_CASE("loss rejects bad inputs", "[model]") {
    ModelShape shape{.dim = 1, .hidden = {2}, .label_count = 0};
    const VelocityModel m = VelocityModel::init(shape, 0);
    Eigen::VectorXd x0(1), noise(1);
    x0 << 0.0;
    noise << 1.0;
    CHECK_THROWS_AS(per_sample_loss(m, x0, noise, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(per_sample_loss(m, x0, noise, 1.0), std::invalid_argument);
    Eigen::VectorXd bad(1);
    bad << std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(per_sample_loss(m, bad, noise, 0.5), std::runtime_error);
}

TEST_CASE("parameter count is a pure function of the shape", "[model]") {
    ModelShape shape{.dim = 3, .hidden = {5, 4}, .label_count = 2};
    const VelocityModel a = VelocityModel::init(shape, 1);
    const VelocityModel b = VelocityModel::init(shape, 99);
    // input = 3 + 2 + 2 = 7: (7*5+5) + (5*4+4) + (4*3+3) = 40 + 24 + 15
    CHECK(a.param_count() == 79);
    CHECK(a.param_count() == b.param_count());
}

TEST_CASE("checkpoints round-trip exactly", "[model]") {
    testutil::TempDir tmp;
    ModelShape shape{.dim = 2, .hidden = {6, 5}, .label_count = 3};
    const VelocityModel m = VelocityModel::init(shape, 17);
    m.save(tmp.file("model.json"));
    const VelocityModel back = VelocityModel::load(tmp.file("model.json"));
    CHECK(back.shape() == m.shape());
    CHECK(back.seed() == m.seed());
    CHECK(testutil::bits_equal(back.flat_params(), m.flat_params()));
}
