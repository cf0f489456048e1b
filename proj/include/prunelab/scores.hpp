#pragma once

// Per-sample importance scores. Higher score = more likely kept under
// direction "top"; every method's inverse is the same table selected from
// the other end. Tables persist as CSV with a provenance comment line.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "prunelab/common.hpp"
#include "prunelab/csv.hpp"
#include "prunelab/dataset.hpp"
#include "prunelab/model.hpp"
#include "prunelab/train.hpp"

namespace prunelab {

struct ScoreTable {
    Eigen::VectorXd scores;  // length n, all finite
    std::string method_tag;
    std::uint64_t seed = 0;
    std::string config_note;

    Eigen::Index n() const { return scores.size(); }

    void validate() const {
        if (scores.size() < 1) throw std::invalid_argument("score table: empty");
        if (!scores.allFinite()) throw std::invalid_argument("score table: non-finite score");
    }
};

// Samples are pruned without being assessed: i.i.d. uniforms, so any
// direction yields a uniformly random subset of the right size.
inline ScoreTable score_random(Eigen::Index n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("score_random: need n >= 1");
    auto rng = make_rng(seed, "score_random");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ScoreTable table;
    table.scores.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) table.scores(i) = unif(rng);
    table.method_tag = "random";
    table.seed = seed;
    return table;
}

// Number of epoch-to-epoch increases of the probe loss.
inline ScoreTable score_monotonicity(const LossTrace& trace) {
    if (trace.epochs() < 2)
        throw std::invalid_argument("score_monotonicity: trace needs at least 2 epochs");
    ScoreTable table;
    table.scores.resize(trace.samples());
    for (Eigen::Index i = 0; i < trace.samples(); ++i) {
        int increases = 0;
        for (Eigen::Index j = 1; j < trace.epochs(); ++j)
            if (trace.losses(i, j) > trace.losses(i, j - 1)) ++increases;
        table.scores(i) = static_cast<double>(increases);
    }
    table.method_tag = "monotonicity";
    return table;
}

namespace detail {

inline Eigen::VectorXi probe_labels(const VelocityModel& model, const Dataset& ds) {
    if (model.shape().label_count == 0) return {};
    if (!ds.labels) throw std::invalid_argument("scorer: conditional model needs labels");
    return *ds.labels;
}

[[noreturn]] inline void rethrow_with_sample(Eigen::Index i, const std::exception& e) {
    std::ostringstream msg;
    msg << "sample " << i << ": " << e.what();
    throw std::runtime_error(msg.str());
}

}  // namespace detail

// Gradient norm of the probe loss at the final pretrain checkpoint.
inline ScoreTable score_grand(const VelocityModel& model, const Dataset& ds,
                              const Eigen::MatrixXd& probe_noise, double t_star) {
    if (probe_noise.rows() != ds.n() || probe_noise.cols() != ds.dim())
        throw std::invalid_argument("score_grand: probe noise shape mismatch");
    const Eigen::VectorXi labels = detail::probe_labels(model, ds);
    ScoreTable table;
    table.scores.resize(ds.n());
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        try {
            const Eigen::VectorXd g =
                per_sample_grad(model, ds.features.row(i).transpose(), probe_noise.row(i).transpose(),
                                t_star, labels.size() ? labels(i) : -1);
            table.scores(i) = g.norm();
        } catch (const std::exception& e) {
            detail::rethrow_with_sample(i, e);
        }
    }
    table.method_tag = "grand";
    return table;
}

// Probe loss magnitude at the final pretrain checkpoint. Evaluated through
// the single-sample path on purpose: the trace's final column comes from the
// batched evaluator, and the two must agree.
inline ScoreTable score_el2n(const VelocityModel& model, const Dataset& ds,
                             const Eigen::MatrixXd& probe_noise, double t_star) {
    if (probe_noise.rows() != ds.n() || probe_noise.cols() != ds.dim())
        throw std::invalid_argument("score_el2n: probe noise shape mismatch");
    const Eigen::VectorXi labels = detail::probe_labels(model, ds);
    ScoreTable table;
    table.scores.resize(ds.n());
    for (Eigen::Index i = 0; i < ds.n(); ++i) {
        try {
            table.scores(i) =
                per_sample_loss(model, ds.features.row(i).transpose(), probe_noise.row(i).transpose(),
                                t_star, labels.size() ? labels(i) : -1);
        } catch (const std::exception& e) {
            detail::rethrow_with_sample(i, e);
        }
    }
    table.method_tag = "el2n";
    return table;
}

// Moving-one-sample-out, first-order form: average over M surrogate models
// of the dot product between a sample's gradient and the dataset-mean
// gradient. Surrogates train on independent seeded half subsets.
inline ScoreTable score_moso(const Dataset& ds, const TrainConfig& cfg, int surrogates,
                             std::uint64_t seed, const ModelShape& shape,
                             Eigen::MatrixXd probe_noise = {}) {
    if (surrogates < 1) throw std::invalid_argument("score_moso: need at least one surrogate");
    const Eigen::Index n = ds.n();
    const Eigen::Index half = n / 2;
    if (half < cfg.batch_size)
        throw std::invalid_argument("score_moso: half subset smaller than batch size");

    if (probe_noise.size() == 0) {
        auto noise_rng = make_rng(cfg.seed, "probe_noise");
        std::normal_distribution<double> normal(0.0, 1.0);
        probe_noise.resize(n, ds.dim());
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index c = 0; c < ds.dim(); ++c) probe_noise(i, c) = normal(noise_rng);
    }
    if (probe_noise.rows() != n || probe_noise.cols() != ds.dim())
        throw std::invalid_argument("score_moso: probe noise shape mismatch");

    ScoreTable table;
    table.scores = Eigen::VectorXd::Zero(n);
    for (int m = 0; m < surrogates; ++m) {
        const std::string tag = "moso_surrogate/" + std::to_string(m);
        std::vector<Eigen::Index> perm(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        auto half_rng = make_rng(seed, "moso_half/" + std::to_string(m));
        std::shuffle(perm.begin(), perm.end(), half_rng);

        SubsetManifest half_manifest;
        half_manifest.kept_ids.assign(perm.begin(), perm.begin() + half);
        std::sort(half_manifest.kept_ids.begin(), half_manifest.kept_ids.end());
        half_manifest.pruning_ratio = 0.5;
        half_manifest.method_tag = tag;
        half_manifest.seed = derive_seed(seed, tag);

        TrainConfig surrogate_cfg = cfg;
        surrogate_cfg.seed = derive_seed(seed, tag);
        const Dataset half_ds = apply_manifest(ds, half_manifest);
        const VelocityModel init = VelocityModel::init(shape, derive_seed(seed, tag + "/init"));
        const VelocityModel surrogate = pretrain_trace(init, half_ds, surrogate_cfg).model;

        const Eigen::VectorXi labels = detail::probe_labels(surrogate, ds);
        // Two passes keep memory at one gradient vector: mean first, dots second.
        Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(surrogate.param_count());
        for (Eigen::Index i = 0; i < n; ++i) {
            mean_grad += per_sample_grad(surrogate, ds.features.row(i).transpose(),
                                         probe_noise.row(i).transpose(), cfg.probe_timestep,
                                         labels.size() ? labels(i) : -1);
        }
        mean_grad /= static_cast<double>(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd g =
                per_sample_grad(surrogate, ds.features.row(i).transpose(),
                                probe_noise.row(i).transpose(), cfg.probe_timestep,
                                labels.size() ? labels(i) : -1);
            table.scores(i) += g.dot(mean_grad);
        }
    }
    table.scores /= static_cast<double>(surrogates);
    table.method_tag = "moso";
    table.seed = seed;
    table.config_note = "surrogates=" + std::to_string(surrogates);
    return table;
}

// ---------------------------------------------------------------------------
// CSV persistence: "# method=<tag> seed=<seed> [note]" then id,score rows.

inline void save_score_table(const ScoreTable& table, const std::filesystem::path& path) {
    table.validate();
    Eigen::MatrixXd values(table.n(), 2);
    for (Eigen::Index i = 0; i < table.n(); ++i) {
        values(i, 0) = static_cast<double>(i);
        values(i, 1) = table.scores(i);
    }
    std::string comment = "method=" + table.method_tag + " seed=" + std::to_string(table.seed);
    if (!table.config_note.empty()) comment += " " + table.config_note;
    write_csv(path, {"id", "score"}, values, comment);
}

inline ScoreTable load_score_table(const std::filesystem::path& path) {
    ScoreTable table;
    {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        std::string first;
        std::getline(in, first);
        if (!first.empty() && first.front() == '#') {
            std::istringstream ss(first.substr(1));
            std::string token;
            while (ss >> token) {
                if (token.rfind("method=", 0) == 0) table.method_tag = token.substr(7);
                else if (token.rfind("seed=", 0) == 0) table.seed = std::stoull(token.substr(5));
            }
        }
    }
    CsvTable csv = read_csv(path);
    if (csv.header != std::vector<std::string>{"id", "score"})
        throw std::runtime_error(path.string() + ": expected header id,score");
    table.scores.resize(csv.values.rows());
    for (Eigen::Index i = 0; i < csv.values.rows(); ++i) {
        if (csv.values(i, 0) != static_cast<double>(i))
            throw std::runtime_error(path.string() + ": ids must be 0..n-1 in order");
        table.scores(i) = csv.values(i, 1);
    }
    table.validate();
    return table;
}

}  // namespace prunelab
