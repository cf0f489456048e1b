#pragma once

// Resolves selection specs into subset manifests. Ranking is always by
// (score descending, id ascending); "top" keeps the head of that order,
// "bottom" the tail, "middle" a centered window. Cluster policies apply the
// same rule per cluster with proportional or equal quotas.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunelab/kmeans.hpp"
#include "prunelab/manifest.hpp"
#include "prunelab/scores.hpp"

namespace prunelab {

enum class Direction { top, bottom, middle };
enum class ClusterPolicy { none, proportional, balanced };

inline std::string to_string(Direction d) {
    switch (d) {
        case Direction::top: return "top";
        case Direction::bottom: return "bottom";
        case Direction::middle: return "middle";
    }
    throw std::logic_error("bad direction");
}

inline Direction direction_from_string(const std::string& s) {
    if (s == "top") return Direction::top;
    if (s == "bottom") return Direction::bottom;
    if (s == "middle") return Direction::middle;
    throw std::invalid_argument("unknown direction '" + s + "'");
}

struct SelectionSpec {
    std::string method_tag;
    double pruning_ratio = 0.0;  // in [0,1); ignored by the balanced policy
    Direction direction = Direction::top;
    ClusterPolicy cluster_policy = ClusterPolicy::none;
    std::uint64_t seed = 0;
};

namespace detail {

// Ids ordered by score descending, ties by ascending id.
inline std::vector<std::int64_t> ranked_ids(const Eigen::VectorXd& scores,
                                            const std::vector<std::int64_t>& ids) {
    std::vector<std::int64_t> order(ids);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        const double sa = scores(a), sb = scores(b);
        if (sa != sb) return sa > sb;
        return a < b;
    });
    return order;
}

// Window of m ranks inside [0, n): head for top, tail for bottom, the
// centered window [floor((n-m)/2), +m) for middle.
inline std::pair<size_t, size_t> rank_window(Direction dir, size_t n, size_t m) {
    switch (dir) {
        case Direction::top: return {0, m};
        case Direction::bottom: return {n - m, n};
        case Direction::middle: {
            const size_t start = (n - m) / 2;
            return {start, start + m};
        }
    }
    throw std::logic_error("bad direction");
}

inline std::vector<std::int64_t> take_window(const std::vector<std::int64_t>& ranked, Direction dir,
                                             size_t m) {
    auto [lo, hi] = rank_window(dir, ranked.size(), m);
    std::vector<std::int64_t> kept(ranked.begin() + static_cast<std::ptrdiff_t>(lo),
                                   ranked.begin() + static_cast<std::ptrdiff_t>(hi));
    std::sort(kept.begin(), kept.end());
    return kept;
}

inline std::int64_t kept_count(Eigen::Index n, double pruning_ratio) {
    return std::llround(static_cast<double>(n) * (1.0 - pruning_ratio));
}

}  // namespace detail

inline SubsetManifest select_by_score(const ScoreTable& table, const SelectionSpec& spec) {
    table.validate();
    if (spec.cluster_policy != ClusterPolicy::none)
        throw std::invalid_argument("select_by_score: expects cluster_policy = none");
    if (spec.pruning_ratio < 0.0 || spec.pruning_ratio >= 1.0)
        throw std::invalid_argument("select_by_score: pruning_ratio must lie in [0,1)");
    const Eigen::Index n = table.n();
    const std::int64_t m = detail::kept_count(n, spec.pruning_ratio);
    if (m <= 0) throw std::invalid_argument("select_by_score: selection rounds to zero samples");

    std::vector<std::int64_t> ids(static_cast<size_t>(n));
    std::iota(ids.begin(), ids.end(), 0);
    const auto ranked = detail::ranked_ids(table.scores, ids);

    SubsetManifest manifest;
    manifest.kept_ids = detail::take_window(ranked, spec.direction, static_cast<size_t>(m));
    manifest.pruning_ratio = spec.pruning_ratio;
    manifest.method_tag = spec.method_tag.empty()
                              ? table.method_tag + "/" + to_string(spec.direction)
                              : spec.method_tag;
    manifest.seed = spec.seed;
    validate_manifest(manifest);
    return manifest;
}

// Per-cluster quotas proportional to cluster size, rounded by largest
// remainder (ties by cluster index) so the total matches round(n*(1-PR)).
inline SubsetManifest select_proportional_clusters(const ScoreTable& table, const ClusterModel& cm,
                                                   const SelectionSpec& spec) {
    table.validate();
    if (spec.cluster_policy != ClusterPolicy::proportional)
        throw std::invalid_argument("select_proportional_clusters: expects proportional policy");
    if (spec.pruning_ratio < 0.0 || spec.pruning_ratio >= 1.0)
        throw std::invalid_argument("select_proportional_clusters: pruning_ratio must lie in [0,1)");
    if (table.n() != cm.n())
        throw std::invalid_argument("select_proportional_clusters: table/cluster size mismatch");

    const Eigen::Index n = table.n();
    const std::int64_t target = detail::kept_count(n, spec.pruning_ratio);
    if (target <= 0)
        throw std::invalid_argument("select_proportional_clusters: selection rounds to zero samples");

    const auto sizes = cm.cluster_sizes();
    const int k = cm.k;
    std::vector<std::int64_t> quota(static_cast<size_t>(k), 0);
    std::vector<double> remainder(static_cast<size_t>(k), 0.0);
    std::int64_t assigned = 0;
    for (int c = 0; c < k; ++c) {
        const double exact = static_cast<double>(sizes[static_cast<size_t>(c)]) * (1.0 - spec.pruning_ratio);
        quota[static_cast<size_t>(c)] = static_cast<std::int64_t>(std::floor(exact));
        remainder[static_cast<size_t>(c)] = exact - std::floor(exact);
        assigned += quota[static_cast<size_t>(c)];
    }
    std::vector<int> by_remainder(static_cast<size_t>(k));
    std::iota(by_remainder.begin(), by_remainder.end(), 0);
    std::stable_sort(by_remainder.begin(), by_remainder.end(), [&](int a, int b) {
        if (remainder[static_cast<size_t>(a)] != remainder[static_cast<size_t>(b)])
            return remainder[static_cast<size_t>(a)] > remainder[static_cast<size_t>(b)];
        return a < b;
    });
    const std::int64_t leftover = target - assigned;
    if (leftover < 0 || leftover > k)
        throw std::logic_error("select_proportional_clusters: quota rounding out of range");
    for (std::int64_t i = 0; i < leftover; ++i)
        ++quota[static_cast<size_t>(by_remainder[static_cast<size_t>(i)])];

    SubsetManifest manifest;
    for (int c = 0; c < k; ++c) {
        const auto m_c = quota[static_cast<size_t>(c)];
        if (m_c == 0) {
            if (sizes[static_cast<size_t>(c)] > 0)
                std::cerr << "prunelab: cluster " << c << " fully pruned at PR=" << spec.pruning_ratio
                          << "\n";
            continue;
        }
        std::vector<std::int64_t> members;
        for (Eigen::Index i = 0; i < n; ++i)
            if (cm.assignment(i) == c) members.push_back(i);
        const auto ranked = detail::ranked_ids(table.scores, members);
        const auto kept = detail::take_window(ranked, spec.direction, static_cast<size_t>(m_c));
        manifest.kept_ids.insert(manifest.kept_ids.end(), kept.begin(), kept.end());
    }
    std::sort(manifest.kept_ids.begin(), manifest.kept_ids.end());
    manifest.pruning_ratio = spec.pruning_ratio;
    manifest.method_tag = spec.method_tag.empty() ? "cluster/" + to_string(spec.direction)
                                                  : spec.method_tag;
    manifest.seed = spec.seed;
    validate_manifest(manifest);
    return manifest;
}

// Equal quotas: exactly s = min cluster size ids from every cluster. The
// effective pruning ratio 1 - s*k/n is derived, not configured.
inline SubsetManifest select_balanced_clusters(const ClusterModel& cm, Direction direction,
                                               std::uint64_t seed) {
    const auto sizes = cm.cluster_sizes();
    const long s = *std::min_element(sizes.begin(), sizes.end());
    const Eigen::Index n = cm.n();

    const ScoreTable table = score_cluster_distance(cm);
    SubsetManifest manifest;
    for (int c = 0; c < cm.k; ++c) {
        std::vector<std::int64_t> members;
        for (Eigen::Index i = 0; i < n; ++i)
            if (cm.assignment(i) == c) members.push_back(i);
        const auto ranked = detail::ranked_ids(table.scores, members);
        const auto kept = detail::take_window(ranked, direction, static_cast<size_t>(s));
        manifest.kept_ids.insert(manifest.kept_ids.end(), kept.begin(), kept.end());
    }
    std::sort(manifest.kept_ids.begin(), manifest.kept_ids.end());
    manifest.pruning_ratio =
        1.0 - static_cast<double>(s) * static_cast<double>(cm.k) / static_cast<double>(n);
    manifest.method_tag = "cluster_balanced/" + to_string(direction);
    manifest.seed = seed;
    validate_manifest(manifest);
    return manifest;
}

}  // namespace prunelab
