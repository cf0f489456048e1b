#pragma once

// Velocity-field MLP for flow matching. The network maps (x_t, t, 1-t,
// optional one-hot label) to a velocity in data space and is trained to
// regress the interpolant derivative x1 - x0, where x_t = (1-t) x0 + t x1
// (t = 0 is data, t = 1 is noise).
//
// Parameters flatten in a fixed order: for each layer, the weight matrix
// row by row (out x in), then the bias. per_sample_grad returns the exact
// gradient of per_sample_loss in that order.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/common.hpp"

namespace prunelab {

struct ModelShape {
    int dim = 2;                        // data dimension
    std::vector<int> hidden = {128, 128, 128};
    int label_count = 0;                // 0 = unconditional

    int input_size() const { return dim + 2 + label_count; }

    void validate() const {
        if (dim < 1) throw std::invalid_argument("model: dim must be >= 1");
        if (label_count < 0) throw std::invalid_argument("model: label_count must be >= 0");
        for (int h : hidden)
            if (h < 1) throw std::invalid_argument("model: hidden sizes must be >= 1");
    }

    bool operator==(const ModelShape&) const = default;
};

class VelocityModel {
public:
    VelocityModel() = default;

    // Glorot-uniform init, deterministic per seed.
    static VelocityModel init(const ModelShape& shape, std::uint64_t seed) {
        shape.validate();
        VelocityModel m;
        m.shape_ = shape;
        m.seed_ = seed;
        auto rng = make_rng(seed, "model_init");
        int in = shape.input_size();
        std::vector<int> outs(shape.hidden);
        outs.push_back(shape.dim);
        for (int out : outs) {
            const double bound = std::sqrt(6.0 / (in + out));
            std::uniform_real_distribution<double> unif(-bound, bound);
            Eigen::MatrixXd w(out, in);
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = unif(rng);
            m.weights_.push_back(std::move(w));
            m.biases_.push_back(Eigen::VectorXd::Zero(out));
            in = out;
        }
        return m;
    }

    const ModelShape& shape() const { return shape_; }
    std::uint64_t seed() const { return seed_; }
    size_t layer_count() const { return weights_.size(); }

    Eigen::Index param_count() const {
        Eigen::Index total = 0;
        for (size_t l = 0; l < weights_.size(); ++l) total += weights_[l].size() + biases_[l].size();
        return total;
    }

    Eigen::VectorXd flat_params() const {
        Eigen::VectorXd out(param_count());
        Eigen::Index at = 0;
        for (size_t l = 0; l < weights_.size(); ++l) {
            const auto& w = weights_[l];
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c) out(at++) = w(r, c);
            for (Eigen::Index r = 0; r < biases_[l].size(); ++r) out(at++) = biases_[l](r);
        }
        return out;
    }

    void set_flat_params(const Eigen::VectorXd& p) {
        if (p.size() != param_count()) throw std::invalid_argument("set_flat_params: size mismatch");
        Eigen::Index at = 0;
        for (size_t l = 0; l < weights_.size(); ++l) {
            auto& w = weights_[l];
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = p(at++);
            for (Eigen::Index r = 0; r < biases_[l].size(); ++r) biases_[l](r) = p(at++);
        }
    }

    bool params_finite() const {
        for (size_t l = 0; l < weights_.size(); ++l)
            if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
        return true;
    }

    // Builds the network input rows [x, t, 1-t, one-hot(label)].
    Eigen::MatrixXd make_input(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                               const Eigen::VectorXi& labels) const {
        const Eigen::Index batch = x.rows();
        if (x.cols() != shape_.dim) throw std::invalid_argument("forward: x dimension mismatch");
        if (t.size() != batch) throw std::invalid_argument("forward: t size mismatch");
        const bool conditional = shape_.label_count > 0;
        if (conditional && labels.size() != batch)
            throw std::invalid_argument("forward: conditional model needs one label per row");
        Eigen::MatrixXd in = Eigen::MatrixXd::Zero(batch, shape_.input_size());
        in.leftCols(shape_.dim) = x;
        in.col(shape_.dim) = t;
        in.col(shape_.dim + 1) = Eigen::VectorXd::Ones(batch) - t;
        if (conditional) {
            for (Eigen::Index i = 0; i < batch; ++i) {
                const int lab = labels(i);
                if (lab < 0 || lab >= shape_.label_count)
                    throw std::invalid_argument("forward: label out of range");
                in(i, shape_.dim + 2 + lab) = 1.0;
            }
        }
        return in;
    }

    // Velocity for a batch of states at (possibly distinct) times.
    Eigen::MatrixXd velocity(const Eigen::MatrixXd& x, const Eigen::VectorXd& t,
                             const Eigen::VectorXi& labels = {}) const {
        Eigen::MatrixXd h = make_input(x, t, labels);
        for (size_t l = 0; l < weights_.size(); ++l) {
            Eigen::MatrixXd z = (h * weights_[l].transpose()).rowwise() + biases_[l].transpose();
            h = (l + 1 == weights_.size()) ? z : z.array().tanh().matrix();
        }
        return h;
    }

    Eigen::VectorXd velocity_one(const Eigen::VectorXd& x, double t, int label = -1) const {
        Eigen::VectorXi labels;
        if (shape_.label_count > 0) {
            labels.resize(1);
            labels(0) = label;
        }
        Eigen::VectorXd tv(1);
        tv(0) = t;
        return velocity(x.transpose(), tv, labels).row(0).transpose();
    }

    // Mean over the batch of ||v(x_t) - (x1 - x0)||^2; accumulates the exact
    // gradient of that mean into `grad` (flat order) when grad != nullptr.
    double loss_and_grad(const Eigen::MatrixXd& x0, const Eigen::MatrixXd& x1,
                         const Eigen::VectorXd& t, const Eigen::VectorXi& labels,
                         Eigen::VectorXd* grad) const {
        const Eigen::Index batch = x0.rows();
        if (x1.rows() != batch || x1.cols() != x0.cols())
            throw std::invalid_argument("loss: x0/x1 shape mismatch");
        if (!x0.allFinite() || !x1.allFinite() || !t.allFinite())
            throw std::runtime_error("loss: non-finite input");
        for (Eigen::Index i = 0; i < batch; ++i)
            if (t(i) <= 0.0 || t(i) >= 1.0)
                throw std::invalid_argument("loss: t must lie in (0,1)");

        const Eigen::MatrixXd xt = ((x0.array().colwise() * (1.0 - t.array())) +
                                    (x1.array().colwise() * t.array()))
                                       .matrix();

        // Forward, keeping activations for the backward pass.
        std::vector<Eigen::MatrixXd> acts;
        acts.push_back(make_input(xt, t, labels));
        for (size_t l = 0; l < weights_.size(); ++l) {
            Eigen::MatrixXd z = (acts.back() * weights_[l].transpose()).rowwise() + biases_[l].transpose();
            acts.push_back((l + 1 == weights_.size()) ? z : z.array().tanh().matrix());
        }
        const Eigen::MatrixXd target = x1 - x0;
        const Eigen::MatrixXd resid = acts.back() - target;
        const double loss = resid.squaredNorm() / static_cast<double>(batch);

        if (grad != nullptr) {
            if (grad->size() != param_count()) {
                grad->resize(param_count());
                grad->setZero();
            }
            Eigen::MatrixXd delta = resid * (2.0 / static_cast<double>(batch));
            Eigen::Index tail = param_count();
            for (size_t li = weights_.size(); li-- > 0;) {
                const Eigen::MatrixXd& h_in = acts[li];
                Eigen::MatrixXd grad_w = delta.transpose() * h_in;     // out x in
                Eigen::VectorXd grad_b = delta.colwise().sum().transpose();
                tail -= grad_w.size() + grad_b.size();
                Eigen::Index at = tail;
                for (Eigen::Index r = 0; r < grad_w.rows(); ++r)
                    for (Eigen::Index c = 0; c < grad_w.cols(); ++c) (*grad)(at++) += grad_w(r, c);
                for (Eigen::Index r = 0; r < grad_b.size(); ++r) (*grad)(at++) += grad_b(r);
                if (li > 0) {
                    // acts[li] holds tanh(z) of the previous layer
                    const Eigen::MatrixXd d_act = delta * weights_[li];
                    delta = (d_act.array() * (1.0 - acts[li].array().square())).matrix();
                }
            }
        }
        return loss;
    }

    void save(const std::filesystem::path& path) const;
    static VelocityModel load(const std::filesystem::path& path);

private:
    ModelShape shape_;
    std::uint64_t seed_ = 0;
    std::vector<Eigen::MatrixXd> weights_;  // out x in
    std::vector<Eigen::VectorXd> biases_;
};

// ---------------------------------------------------------------------------
// Per-sample probes used by the scorers.

inline double per_sample_loss(const VelocityModel& model, const Eigen::VectorXd& x0,
                              const Eigen::VectorXd& noise, double t, int label = -1) {
    Eigen::VectorXi labels;
    if (model.shape().label_count > 0) {
        labels.resize(1);
        labels(0) = label;
    }
    Eigen::VectorXd tv(1);
    tv(0) = t;
    return model.loss_and_grad(x0.transpose(), noise.transpose(), tv, labels, nullptr);
}

inline Eigen::VectorXd per_sample_grad(const VelocityModel& model, const Eigen::VectorXd& x0,
                                       const Eigen::VectorXd& noise, double t, int label = -1) {
    Eigen::VectorXi labels;
    if (model.shape().label_count > 0) {
        labels.resize(1);
        labels(0) = label;
    }
    Eigen::VectorXd tv(1);
    tv(0) = t;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.param_count());
    model.loss_and_grad(x0.transpose(), noise.transpose(), tv, labels, &grad);
    return grad;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with a shape header and the flat parameter array.
// Doubles are serialized with 17 significant digits and round-trip exactly.

inline void VelocityModel::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "prunelab-model-v1";
    j["d"] = shape_.dim;
    j["hidden_sizes"] = shape_.hidden;
    j["label_count"] = shape_.label_count;
    j["seed"] = seed_;
    Eigen::VectorXd p = flat_params();
    j["params"] = std::vector<double>(p.data(), p.data() + p.size());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << j.dump() << "\n";
    }
    std::filesystem::rename(tmp, path);
}

inline VelocityModel VelocityModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "prunelab-model-v1")
        throw std::runtime_error(path.string() + ": unknown checkpoint format");
    ModelShape shape;
    shape.dim = j.at("d").get<int>();
    shape.hidden = j.at("hidden_sizes").get<std::vector<int>>();
    shape.label_count = j.at("label_count").get<int>();
    VelocityModel m = VelocityModel::init(shape, j.at("seed").get<std::uint64_t>());
    auto params = j.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(params.size()) != m.param_count())
        throw std::runtime_error(path.string() + ": parameter count mismatch");
    m.set_flat_params(Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size())));
    return m;
}

}  // namespace prunelab
