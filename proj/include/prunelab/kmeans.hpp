#pragma once

// Seeded k-means with k-means++ initialization, Lloyd iterations, empty
// cluster repair, and restarts. All tie-breaks are by lowest index so a
// fixed seed gives a fixed model.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/scores.hpp"

namespace prunelab {

struct ClusterModel {
    Eigen::MatrixXd centers;    // k x e
    Eigen::VectorXi assignment; // n, values in [0,k)
    Eigen::VectorXd distances;  // n, Euclidean distance to assigned center
    int k = 0;
    double inertia = 0.0;       // sum of squared distances
    std::vector<double> inertia_history;  // per Lloyd iteration of the winning restart

    Eigen::Index n() const { return assignment.size(); }

    std::vector<long> cluster_sizes() const {
        std::vector<long> sizes(static_cast<size_t>(k), 0);
        for (Eigen::Index i = 0; i < assignment.size(); ++i) ++sizes[static_cast<size_t>(assignment(i))];
        return sizes;
    }
};

namespace detail {

// Nearest center per row; ties go to the lowest center index.
inline void assign_points(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centers,
                          Eigen::VectorXi& assignment, Eigen::VectorXd& sq_dist) {
    const Eigen::Index n = points.rows(), k = centers.rows();
    assignment.resize(n);
    sq_dist.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double best_d = (points.row(i) - centers.row(0)).squaredNorm();
        for (Eigen::Index c = 1; c < k; ++c) {
            const double d = (points.row(i) - centers.row(c)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(c);
            }
        }
        assignment(i) = best;
        sq_dist(i) = best_d;
    }
}

inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng) {
    const Eigen::Index n = points.rows();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd centers(k, points.cols());
    std::vector<bool> used(static_cast<size_t>(n), false);

    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    Eigen::Index idx = first(rng);
    centers.row(0) = points.row(idx);
    used[static_cast<size_t>(idx)] = true;

    Eigen::VectorXd d2 = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index next = -1;
        if (total > 0.0) {
            const double target = unif(rng) * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= target) {
                    next = i;
                    break;
                }
            }
            if (next < 0) next = n - 1;
        } else {
            // all remaining points coincide with chosen centers
            for (Eigen::Index i = 0; i < n; ++i)
                if (!used[static_cast<size_t>(i)]) {
                    next = i;
                    break;
                }
            if (next < 0) next = 0;
        }
        centers.row(c) = points.row(next);
        used[static_cast<size_t>(next)] = true;
        d2 = d2.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
    }
    return centers;
}

// Donates the farthest point of the largest (>= 2 point) cluster to each
// empty cluster.
inline void repair_empty_clusters(const Eigen::MatrixXd& points, Eigen::MatrixXd& centers,
                                  Eigen::VectorXi& assignment, Eigen::VectorXd& sq_dist, int k) {
    std::vector<long> sizes(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < assignment.size(); ++i) ++sizes[static_cast<size_t>(assignment(i))];
    for (int empty = 0; empty < k; ++empty) {
        if (sizes[static_cast<size_t>(empty)] > 0) continue;
        int donor = -1;
        for (int c = 0; c < k; ++c)
            if (sizes[static_cast<size_t>(c)] >= 2 &&
                (donor < 0 || sizes[static_cast<size_t>(c)] > sizes[static_cast<size_t>(donor)]))
                donor = c;
        if (donor < 0) throw std::runtime_error("kmeans: cannot repair empty cluster");
        Eigen::Index far = -1;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < assignment.size(); ++i)
            if (assignment(i) == donor && sq_dist(i) > far_d) {
                far_d = sq_dist(i);
                far = i;
            }
        assignment(far) = empty;
        centers.row(empty) = points.row(far);
        sq_dist(far) = 0.0;
        --sizes[static_cast<size_t>(donor)];
        ++sizes[static_cast<size_t>(empty)];
    }
}

struct KmeansRun {
    Eigen::MatrixXd centers;
    Eigen::VectorXi assignment;
    Eigen::VectorXd sq_dist;
    double inertia = std::numeric_limits<double>::infinity();
    std::vector<double> inertia_history;
};

inline KmeansRun lloyd(const Eigen::MatrixXd& points, int k, std::mt19937_64& rng, int max_iters,
                       double tol) {
    KmeansRun run;
    run.centers = kmeanspp_init(points, k, rng);
    for (int iter = 0; iter < max_iters; ++iter) {
        assign_points(points, run.centers, run.assignment, run.sq_dist);
        repair_empty_clusters(points, run.centers, run.assignment, run.sq_dist, k);

        Eigen::MatrixXd new_centers = Eigen::MatrixXd::Zero(k, points.cols());
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            new_centers.row(run.assignment(i)) += points.row(i);
            counts(run.assignment(i)) += 1.0;
        }
        for (int c = 0; c < k; ++c) new_centers.row(c) /= counts(c);

        const double shift = (new_centers - run.centers).rowwise().norm().maxCoeff();
        run.centers = new_centers;
        double inertia = 0.0;
        for (Eigen::Index i = 0; i < points.rows(); ++i)
            inertia += (points.row(i) - run.centers.row(run.assignment(i))).squaredNorm();
        run.inertia_history.push_back(inertia);
        if (shift < tol) break;
    }
    // Final pass so the assignment is a fixed point of the final centers.
    assign_points(points, run.centers, run.assignment, run.sq_dist);
    run.inertia = run.sq_dist.sum();
    run.inertia_history.push_back(run.inertia);
    return run;
}

}  // namespace detail

inline ClusterModel kmeans_fit(const Eigen::MatrixXd& embeddings, int k, std::uint64_t seed,
                               int max_iters = 100, double tol = 1e-7, int restarts = 10) {
    const Eigen::Index n = embeddings.rows();
    if (k < 1) throw std::invalid_argument("kmeans_fit: need k >= 1");
    if (k > n) throw std::invalid_argument("kmeans_fit: k exceeds sample count");
    if (!embeddings.allFinite()) throw std::invalid_argument("kmeans_fit: non-finite embedding");
    if (max_iters < 1 || restarts < 1) throw std::invalid_argument("kmeans_fit: bad iteration counts");

    detail::KmeansRun best;
    for (int r = 0; r < restarts; ++r) {
        auto rng = make_rng(seed, "kmeans/restart=" + std::to_string(r));
        detail::KmeansRun run = detail::lloyd(embeddings, k, rng, max_iters, tol);
        if (run.inertia < best.inertia) best = std::move(run);
    }

    ClusterModel cm;
    cm.centers = std::move(best.centers);
    cm.assignment = std::move(best.assignment);
    cm.distances = best.sq_dist.cwiseSqrt();
    cm.k = k;
    cm.inertia = best.inertia;
    cm.inertia_history = std::move(best.inertia_history);
    for (long s : cm.cluster_sizes())
        if (s == 0) throw std::runtime_error("kmeans_fit: empty cluster after fit");
    return cm;
}

// Nearest trained center for new points (e.g. generated samples).
inline Eigen::VectorXi assign_to_centers(const Eigen::MatrixXd& points,
                                         const Eigen::MatrixXd& centers) {
    if (points.cols() != centers.cols())
        throw std::invalid_argument("assign_to_centers: dimension mismatch");
    Eigen::VectorXi assignment;
    Eigen::VectorXd sq_dist;
    detail::assign_points(points, centers, assignment, sq_dist);
    return assignment;
}

// Negated distance to the assigned center, so direction "top" keeps the
// samples nearest to their centers. Meant for per-cluster selection.
inline ScoreTable score_cluster_distance(const ClusterModel& cm) {
    ScoreTable table;
    table.scores = -cm.distances;
    table.method_tag = "cluster_distance";
    return table;
}

inline std::vector<long> cluster_histogram(const Eigen::VectorXi& assignment, int k) {
    std::vector<long> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < assignment.size(); ++i) {
        const int c = assignment(i);
        if (c < 0 || c >= k) throw std::invalid_argument("cluster_histogram: assignment out of range");
        ++counts[static_cast<size_t>(c)];
    }
    return counts;
}

}  // namespace prunelab
