#pragma once

// Evaluation metrics for generated sample sets: Frechet distance between
// Gaussian fits, manifold k-NN precision/recall and F-score, Vendi score,
// inception-style score over a pluggable classifier, and the nearest-match
// memorization test. All pure and deterministic.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace prunelab {

struct GaussianSummary {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;  // symmetric, PSD up to round-off
};

inline GaussianSummary fit_gaussian(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 rows");
    GaussianSummary g;
    g.mean = X.colwise().mean().transpose();
    const Eigen::MatrixXd centered = X.rowwise() - g.mean.transpose();
    g.covariance = (centered.transpose() * centered) / static_cast<double>(X.rows() - 1);
    g.covariance = ((g.covariance + g.covariance.transpose()) / 2.0).eval();
    return g;
}

namespace detail {

// Symmetric PSD square root; eigenvalues below the clamp are treated as 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double clamp = 1e-10) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
    if (solver.info() != Eigen::Success) throw std::runtime_error("psd_sqrt: eigendecomposition failed");
    Eigen::VectorXd ev = solver.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > clamp ? std::sqrt(ev(i)) : 0.0;
    return solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose();
}

inline void check_symmetric(const Eigen::MatrixXd& m, const char* what) {
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument(std::string(what) + ": covariance not symmetric");
}

}  // namespace detail

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), clamped at 0.
inline double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
    if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows())
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    if (!a.mean.allFinite() || !b.mean.allFinite() || !a.covariance.allFinite() ||
        !b.covariance.allFinite())
        throw std::runtime_error("frechet_distance: non-finite summary");
    detail::check_symmetric(a.covariance, "frechet_distance");
    detail::check_symmetric(b.covariance, "frechet_distance");

    const Eigen::MatrixXd root_a = detail::psd_sqrt(a.covariance);
    Eigen::MatrixXd inner = root_a * b.covariance * root_a;
    inner = ((inner + inner.transpose()) / 2.0).eval();
    const Eigen::MatrixXd cross = detail::psd_sqrt(inner);

    const double value = (a.mean - b.mean).squaredNorm() + a.covariance.trace() +
                         b.covariance.trace() - 2.0 * cross.trace();
    return std::max(0.0, value);
}

// Manifold k-NN estimator: a generated point is "covered" when it falls
// inside some real point's ball of radius = distance to that point's k-th
// nearest real neighbor. Recall swaps the roles.
inline std::pair<double, double> knn_precision_recall(const Eigen::MatrixXd& real_feats,
                                                      const Eigen::MatrixXd& gen_feats, int k_nn) {
    if (k_nn < 1) throw std::invalid_argument("knn_precision_recall: need k_nn >= 1");
    if (real_feats.cols() != gen_feats.cols())
        throw std::invalid_argument("knn_precision_recall: dimension mismatch");
    if (real_feats.rows() <= k_nn || gen_feats.rows() <= k_nn)
        throw std::invalid_argument("knn_precision_recall: need more than k_nn points per side");

    auto knn_radii = [k_nn](const Eigen::MatrixXd& pts) {
        const Eigen::Index n = pts.rows();
        Eigen::VectorXd radii(n);
        std::vector<double> d2(static_cast<size_t>(n - 1));
        for (Eigen::Index i = 0; i < n; ++i) {
            size_t at = 0;
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i) d2[at++] = (pts.row(i) - pts.row(j)).squaredNorm();
            std::nth_element(d2.begin(), d2.begin() + (k_nn - 1), d2.end());
            radii(i) = std::sqrt(d2[static_cast<size_t>(k_nn - 1)]);
        }
        return radii;
    };
    auto covered_fraction = [](const Eigen::MatrixXd& queries, const Eigen::MatrixXd& support,
                               const Eigen::VectorXd& radii) {
        Eigen::Index covered = 0;
        for (Eigen::Index q = 0; q < queries.rows(); ++q) {
            for (Eigen::Index s = 0; s < support.rows(); ++s) {
                if ((queries.row(q) - support.row(s)).norm() <= radii(s)) {
                    ++covered;
                    break;
                }
            }
        }
        return static_cast<double>(covered) / static_cast<double>(queries.rows());
    };

    const Eigen::VectorXd real_radii = knn_radii(real_feats);
    const Eigen::VectorXd gen_radii = knn_radii(gen_feats);
    const double precision = covered_fraction(gen_feats, real_feats, real_radii);
    const double recall = covered_fraction(real_feats, gen_feats, gen_radii);
    return {precision, recall};
}

inline double f_score(double precision, double recall) {
    if (precision < 0.0 || precision > 1.0 || recall < 0.0 || recall > 1.0)
        throw std::invalid_argument("f_score: inputs must lie in [0,1]");
    const double sum = precision + recall;
    return sum == 0.0 ? 0.0 : 2.0 * precision * recall / sum;
}

// exp of the Shannon entropy of the cosine-similarity spectrum. The nonzero
// eigenvalues of K/n = X X^T / n equal those of the e x e Gram matrix
// X^T X / n, so the decomposition runs on the smaller side.
inline double vendi_score(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    if (n < 1) throw std::invalid_argument("vendi_score: need n >= 1");
    Eigen::MatrixXd unit(n, X.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = X.row(i).norm();
        if (norm == 0.0 || !std::isfinite(norm)) {
            std::ostringstream msg;
            msg << "vendi_score: row " << i << " has zero or non-finite norm";
            throw std::invalid_argument(msg.str());
        }
        unit.row(i) = X.row(i) / norm;
    }

    const bool gram_side = X.cols() < n;
    const Eigen::MatrixXd small = gram_side
                                      ? Eigen::MatrixXd(unit.transpose() * unit / static_cast<double>(n))
                                      : Eigen::MatrixXd(unit * unit.transpose() / static_cast<double>(n));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(small);
    if (solver.info() != Eigen::Success) throw std::runtime_error("vendi_score: eigendecomposition failed");
    Eigen::VectorXd ev = solver.eigenvalues().cwiseMax(0.0);
    const double total = ev.sum();
    if (total <= 0.0) throw std::runtime_error("vendi_score: degenerate spectrum");
    ev /= total;
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > 0.0) entropy -= ev(i) * std::log(ev(i));
    return std::exp(entropy);
}

// exp(mean KL(p(y|x_i) || mean posterior)). Rows must be distributions.
inline double inception_score(const Eigen::MatrixXd& probs) {
    const Eigen::Index m = probs.rows(), c = probs.cols();
    if (m < 1 || c < 1) throw std::invalid_argument("inception_score: empty input");
    for (Eigen::Index i = 0; i < m; ++i) {
        if (probs.row(i).minCoeff() < 0.0)
            throw std::invalid_argument("inception_score: negative probability");
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-8)
            throw std::invalid_argument("inception_score: row does not sum to 1");
    }
    const Eigen::VectorXd marginal = probs.colwise().mean().transpose();
    double mean_kl = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        double kl = 0.0;
        for (Eigen::Index j = 0; j < c; ++j) {
            const double p = probs(i, j);
            if (p > 0.0) kl += p * std::log(p / marginal(j));
        }
        mean_kl += kl;
    }
    return std::exp(mean_kl / static_cast<double>(m));
}

// Euclidean distance of each generated row to its nearest training row.
inline std::pair<double, Eigen::VectorXd> memorization_distance(const Eigen::MatrixXd& gen_feats,
                                                                const Eigen::MatrixXd& train_feats) {
    if (train_feats.rows() < 1) throw std::invalid_argument("memorization_distance: empty training set");
    if (gen_feats.cols() != train_feats.cols())
        throw std::invalid_argument("memorization_distance: dimension mismatch");
    Eigen::VectorXd dists(gen_feats.rows());
    for (Eigen::Index g = 0; g < gen_feats.rows(); ++g) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index t = 0; t < train_feats.rows(); ++t)
            best = std::min(best, (gen_feats.row(g) - train_feats.row(t)).squaredNorm());
        dists(g) = std::sqrt(best);
    }
    return {dists.mean(), dists};
}

// ---------------------------------------------------------------------------
// Report bundle

struct MetricsReport {
    std::optional<double> fid;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f_score;
    std::optional<double> vendi;
    std::optional<double> inception;
    std::optional<double> mem_distance;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;

    bool operator==(const MetricsReport&) const = default;
};

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    put("fid", r.fid);
    put("precision", r.precision);
    put("recall", r.recall);
    put("f_score", r.f_score);
    put("vendi", r.vendi);
    put("inception", r.inception);
    put("mem_distance", r.mem_distance);
    j["config"] = r.config;
    j["seed"] = r.seed;
    return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    auto get = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<double>();
    };
    r.fid = get("fid");
    r.precision = get("precision");
    r.recall = get("recall");
    r.f_score = get("f_score");
    r.vendi = get("vendi");
    r.inception = get("inception");
    r.mem_distance = get("mem_distance");
    r.config = j.value("config", nlohmann::json::object());
    r.seed = j.value("seed", 0ull);
    return r;
}

inline void save_report(const MetricsReport& r, const std::filesystem::path& path) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << report_to_json(r).dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

inline MetricsReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("malformed report " + path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

}  // namespace prunelab
