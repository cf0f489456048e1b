#pragma once

// Datasets: synthetic generators (Gaussian mixtures, two moons), CSV
// ingestion of precomputed feature/embedding vectors, and subset
// application. Every generator is a pure function of its arguments
// including the seed.

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prunelab/common.hpp"
#include "prunelab/csv.hpp"
#include "prunelab/manifest.hpp"

namespace prunelab {

struct Dataset {
    Eigen::MatrixXd features;                  // n x d
    std::optional<Eigen::VectorXi> labels;     // n
    std::optional<Eigen::MatrixXd> embeddings; // n x e
    std::vector<std::int64_t> ids;             // row identity, 0..n-1 for a fresh universe

    Eigen::Index n() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }

    void validate() const {
        if (n() < 1 || dim() < 1) throw std::invalid_argument("dataset: need n >= 1 and d >= 1");
        if (!features.allFinite()) throw std::invalid_argument("dataset: non-finite feature entry");
        if (labels && labels->size() != n()) throw std::invalid_argument("dataset: label count != n");
        if (embeddings && embeddings->rows() != n())
            throw std::invalid_argument("dataset: embedding rows != n");
        if (static_cast<Eigen::Index>(ids.size()) != n())
            throw std::invalid_argument("dataset: id count != n");
    }
};

inline std::vector<std::int64_t> identity_ids(Eigen::Index n) {
    std::vector<std::int64_t> ids(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
    return ids;
}

// ---------------------------------------------------------------------------
// Gaussian mixtures

struct MixtureMode {
    Eigen::VectorXd mean;
    double stddev = 1.0;
    double weight = 1.0;
};

struct MixtureSpec {
    std::vector<MixtureMode> modes;

    Eigen::Index dim() const { return modes.empty() ? 0 : modes.front().mean.size(); }

    void validate() const {
        if (modes.empty()) throw std::invalid_argument("mixture: no modes");
        double total = 0.0;
        for (const auto& m : modes) {
            if (m.stddev <= 0.0) throw std::invalid_argument("mixture: stddev must be positive");
            if (m.weight <= 0.0) throw std::invalid_argument("mixture: weight must be positive");
            if (m.mean.size() != dim()) throw std::invalid_argument("mixture: mean dimension mismatch");
            total += m.weight;
        }
        if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights must sum to 1");
    }

    // Exact class posterior p(mode | x), evaluated in the log domain. Used as
    // the pluggable classifier behind the inception-style score.
    Eigen::MatrixXd posterior(const Eigen::MatrixXd& X) const {
        validate();
        const Eigen::Index n = X.rows(), k = static_cast<Eigen::Index>(modes.size());
        const double d = static_cast<double>(X.cols());
        Eigen::MatrixXd logp(n, k);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto& m = modes[static_cast<size_t>(j)];
            const double inv2 = 1.0 / (2.0 * m.stddev * m.stddev);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double sq = (X.row(i).transpose() - m.mean).squaredNorm();
                logp(i, j) = std::log(m.weight) - sq * inv2 - d * std::log(m.stddev);
            }
        }
        Eigen::MatrixXd probs(n, k);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = logp.row(i).maxCoeff();
            Eigen::ArrayXd e = (logp.row(i).array() - mx).exp();
            probs.row(i) = (e / e.sum()).matrix();
        }
        return probs;
    }
};

inline nlohmann::json mixture_to_json(const MixtureSpec& spec) {
    nlohmann::json modes = nlohmann::json::array();
    for (const auto& m : spec.modes) {
        std::vector<double> mean(m.mean.data(), m.mean.data() + m.mean.size());
        modes.push_back({{"mean", mean}, {"stddev", m.stddev}, {"weight", m.weight}});
    }
    return nlohmann::json{{"modes", modes}};
}

inline MixtureSpec mixture_from_json(const nlohmann::json& j) {
    MixtureSpec spec;
    for (const auto& jm : j.at("modes")) {
        MixtureMode m;
        auto mean = jm.at("mean").get<std::vector<double>>();
        m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        m.stddev = jm.at("stddev").get<double>();
        m.weight = jm.at("weight").get<double>();
        spec.modes.push_back(std::move(m));
    }
    spec.validate();
    return spec;
}

// k modes equally spaced on a circle of the given radius, embedded in the
// first two of `dim` coordinates; noise is isotropic in all of them.
inline MixtureSpec ring_mixture(int k, double radius, double sigma,
                                const std::vector<double>& weights = {}, Eigen::Index dim = 2) {
    if (k < 1) throw std::invalid_argument("ring_mixture: need k >= 1");
    if (dim < 2) throw std::invalid_argument("ring_mixture: need dim >= 2");
    if (!weights.empty() && static_cast<int>(weights.size()) != k)
        throw std::invalid_argument("ring_mixture: weight count != k");
    MixtureSpec spec;
    for (int j = 0; j < k; ++j) {
        const double angle = 2.0 * std::numbers::pi * j / k;
        MixtureMode m;
        m.mean = Eigen::VectorXd::Zero(dim);
        m.mean(0) = radius * std::cos(angle);
        m.mean(1) = radius * std::sin(angle);
        m.stddev = sigma;
        m.weight = weights.empty() ? 1.0 / k : weights[static_cast<size_t>(j)];
        spec.modes.push_back(std::move(m));
    }
    return spec;
}

inline Dataset gen_gaussian_mixture(Eigen::Index n, const MixtureSpec& spec, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("gen_gaussian_mixture: need n >= 1");
    spec.validate();
    const Eigen::Index d = spec.dim();

    // CDF inversion keeps the draw count at one uniform per mode pick.
    std::vector<double> cdf(spec.modes.size());
    double acc = 0.0;
    for (size_t j = 0; j < spec.modes.size(); ++j) {
        acc += spec.modes[j].weight;
        cdf[j] = acc;
    }
    cdf.back() = 1.0;

    auto rng = make_rng(seed, "gen_gaussian_mixture");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    Dataset ds;
    ds.features.resize(n, d);
    Eigen::VectorXi labels(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = unif(rng);
        size_t mode = 0;
        while (mode + 1 < cdf.size() && u > cdf[mode]) ++mode;
        const auto& m = spec.modes[mode];
        for (Eigen::Index c = 0; c < d; ++c) ds.features(i, c) = m.mean(c) + m.stddev * normal(rng);
        labels(i) = static_cast<int>(mode);
    }
    ds.labels = labels;
    ds.ids = identity_ids(n);
    ds.validate();
    return ds;
}

// Two interleaved unit half-circles with Gaussian jitter, n/2 samples each.
// Arc angles are evenly spaced so noise_std = 0 puts points exactly on the arcs.
inline Dataset gen_two_moons(Eigen::Index n, double noise_std, std::uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("gen_two_moons: n must be even and >= 2");
    if (noise_std < 0.0) throw std::invalid_argument("gen_two_moons: noise_std must be >= 0");

    auto rng = make_rng(seed, "gen_two_moons");
    std::normal_distribution<double> normal(0.0, 1.0);

    const Eigen::Index half = n / 2;
    Dataset ds;
    ds.features.resize(n, 2);
    Eigen::VectorXi labels(n);
    for (Eigen::Index i = 0; i < half; ++i) {
        const double t = std::numbers::pi * i / std::max<Eigen::Index>(half - 1, 1);
        ds.features(i, 0) = std::cos(t) + noise_std * normal(rng);
        ds.features(i, 1) = std::sin(t) + noise_std * normal(rng);
        labels(i) = 0;
        ds.features(half + i, 0) = 1.0 - std::cos(t) + noise_std * normal(rng);
        ds.features(half + i, 1) = 0.5 - std::sin(t) + noise_std * normal(rng);
        labels(half + i) = 1;
    }
    ds.labels = labels;
    ds.ids = identity_ids(n);
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// CSV ingestion

inline Dataset load_features_csv(const std::filesystem::path& path, bool has_labels) {
    CsvTable table = read_csv(path);
    const Eigen::Index cols = table.values.cols();
    if (table.values.rows() == 0) throw std::runtime_error(path.string() + ": no data rows");
    if (has_labels && cols < 2)
        throw std::runtime_error(path.string() + ": need at least one feature column besides the label");

    Dataset ds;
    if (has_labels) {
        ds.features = table.values.leftCols(cols - 1);
        Eigen::VectorXi labels(table.values.rows());
        for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
            const double v = table.values(i, cols - 1);
            if (v != std::floor(v)) {
                std::ostringstream msg;
                msg << path.string() << ": row " << i + 1 << ": label " << v << " is not an integer";
                throw std::runtime_error(msg.str());
            }
            labels(i) = static_cast<int>(v);
        }
        ds.labels = labels;
    } else {
        ds.features = table.values;
    }
    ds.ids = identity_ids(ds.features.rows());
    ds.validate();
    return ds;
}

inline Dataset attach_embeddings(Dataset ds, const std::filesystem::path& path) {
    CsvTable table = read_csv(path);
    if (table.values.rows() != ds.n()) {
        std::ostringstream msg;
        msg << path.string() << ": embedding rows (" << table.values.rows()
            << ") do not match dataset size (" << ds.n() << ")";
        throw std::runtime_error(msg.str());
    }
    ds.embeddings = table.values;
    ds.validate();
    return ds;
}

// Embedding source priority: external embeddings when attached, else raw features.
inline const Eigen::MatrixXd& clustering_matrix(const Dataset& ds) {
    return ds.embeddings ? *ds.embeddings : ds.features;
}

// Per-feature affine standardization. The velocity model trains and samples
// in standardized coordinates (unit-scale data conditions the flow well);
// metrics stay in the raw feature space.
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;  // per-feature stddev, floored to avoid blowups

    static Standardizer fit(const Eigen::MatrixXd& X) {
        Standardizer s;
        s.mean = X.colwise().mean().transpose();
        const Eigen::MatrixXd centered = X.rowwise() - s.mean.transpose();
        s.scale = (centered.array().square().colwise().mean()).sqrt().transpose().matrix();
        for (Eigen::Index c = 0; c < s.scale.size(); ++c)
            if (s.scale(c) < 1e-12) s.scale(c) = 1.0;
        return s;
    }

    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const {
        return (X.rowwise() - mean.transpose()).array().rowwise() /
               scale.transpose().array();
    }

    Eigen::MatrixXd inverse(const Eigen::MatrixXd& Z) const {
        return (Z.array().rowwise() * scale.transpose().array()).matrix().rowwise() +
               mean.transpose();
    }
};

// ---------------------------------------------------------------------------
// Subsets and splits

// Applies a manifest to the universe it was computed on (ids 0..n-1 index
// rows directly). Kept rows retain their original identity.
inline Dataset apply_manifest(const Dataset& ds, const SubsetManifest& m) {
    validate_manifest(m);
    if (m.kept_ids.empty()) throw std::invalid_argument("apply_manifest: pruned to zero samples");
    for (auto id : m.kept_ids)
        if (id < 0 || id >= ds.n()) {
            std::ostringstream msg;
            msg << "apply_manifest: id " << id << " out of range for dataset of size " << ds.n();
            throw std::out_of_range(msg.str());
        }

    const Eigen::Index k = static_cast<Eigen::Index>(m.kept_ids.size());
    Dataset out;
    out.features.resize(k, ds.dim());
    if (ds.labels) out.labels = Eigen::VectorXi(k);
    if (ds.embeddings) out.embeddings = Eigen::MatrixXd(k, ds.embeddings->cols());
    out.ids.resize(static_cast<size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto id = m.kept_ids[static_cast<size_t>(i)];
        out.features.row(i) = ds.features.row(id);
        if (ds.labels) (*out.labels)(i) = (*ds.labels)(id);
        if (ds.embeddings) out.embeddings->row(i) = ds.embeddings->row(id);
        out.ids[static_cast<size_t>(i)] = ds.ids[static_cast<size_t>(id)];
    }
    out.validate();
    return out;
}

// Seeded holdout split. Both halves are fresh universes (ids relabeled
// 0..m-1); used by the runner to carve out the metric reference set before
// any pruning happens.
inline std::pair<Dataset, Dataset> split_reference(const Dataset& ds, double reference_fraction,
                                                   std::uint64_t seed) {
    if (reference_fraction <= 0.0 || reference_fraction >= 1.0)
        throw std::invalid_argument("split_reference: fraction must lie in (0,1)");
    const Eigen::Index n = ds.n();
    const Eigen::Index n_ref = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(
                                                             static_cast<double>(n) * reference_fraction)));
    if (n_ref >= n) throw std::invalid_argument("split_reference: nothing left to train on");

    std::vector<Eigen::Index> perm(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    auto rng = make_rng(seed, "split_reference");
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<Eigen::Index> ref_rows(perm.begin(), perm.begin() + n_ref);
    std::vector<Eigen::Index> train_rows(perm.begin() + n_ref, perm.end());
    std::sort(ref_rows.begin(), ref_rows.end());
    std::sort(train_rows.begin(), train_rows.end());

    auto take = [&](const std::vector<Eigen::Index>& rows) {
        Dataset out;
        const Eigen::Index k = static_cast<Eigen::Index>(rows.size());
        out.features.resize(k, ds.dim());
        if (ds.labels) out.labels = Eigen::VectorXi(k);
        if (ds.embeddings) out.embeddings = Eigen::MatrixXd(k, ds.embeddings->cols());
        for (Eigen::Index i = 0; i < k; ++i) {
            out.features.row(i) = ds.features.row(rows[static_cast<size_t>(i)]);
            if (ds.labels) (*out.labels)(i) = (*ds.labels)(rows[static_cast<size_t>(i)]);
            if (ds.embeddings) out.embeddings->row(i) = ds.embeddings->row(rows[static_cast<size_t>(i)]);
        }
        out.ids = identity_ids(k);
        out.validate();
        return out;
    };
    return {take(train_rows), take(ref_rows)};
}

}  // namespace prunelab
