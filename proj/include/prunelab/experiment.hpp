#pragma once

// Experiment orchestration: parse a line-oriented config, expand the
// (method x pruning-ratio x seed) grid, run pretrain -> score -> select ->
// train -> sample -> evaluate per cell, and persist every artifact under a
// run directory keyed by the config hash. Completed cells are skipped on
// rerun; a failing cell never stops the others.

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/csv.hpp"
#include "prunelab/dataset.hpp"
#include "prunelab/kmeans.hpp"
#include "prunelab/manifest.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"
#include "prunelab/ode.hpp"
#include "prunelab/scores.hpp"
#include "prunelab/select.hpp"
#include "prunelab/train.hpp"

namespace prunelab {

// ---------------------------------------------------------------------------
// Method registry

struct MethodInfo {
    std::string family;   // random | monotonicity | grand | el2n | moso | cluster
    Direction direction = Direction::top;
    ClusterPolicy policy = ClusterPolicy::none;
    bool needs_pretrain = false;
    bool needs_cluster = false;
    bool needs_moso = false;
    bool pr_grid = true;  // false when the ratio is derived (balanced policy)
};

inline const std::map<std::string, MethodInfo>& method_registry() {
    static const std::map<std::string, MethodInfo> registry = [] {
        std::map<std::string, MethodInfo> r;
        r["random"] = {"random", Direction::top, ClusterPolicy::none, false, false, false, true};
        auto score_family = [&](const std::string& family, bool pretrain, bool moso) {
            r[family] = {family, Direction::top, ClusterPolicy::none, pretrain, false, moso, true};
            r[family + "_inv"] = {family, Direction::bottom, ClusterPolicy::none, pretrain, false, moso, true};
            r[family + "_mid"] = {family, Direction::middle, ClusterPolicy::none, pretrain, false, moso, true};
        };
        score_family("monotonicity", true, false);
        score_family("grand", true, false);
        score_family("el2n", true, false);
        score_family("moso", false, true);
        r["cluster"] = {"cluster", Direction::top, ClusterPolicy::proportional, false, true, false, true};
        r["cluster_inv"] = {"cluster", Direction::bottom, ClusterPolicy::proportional, false, true, false, true};
        r["cluster_mid"] = {"cluster", Direction::middle, ClusterPolicy::proportional, false, true, false, true};
        r["cluster_balanced"] = {"cluster", Direction::top, ClusterPolicy::balanced, false, true, false, false};
        r["cluster_balanced_inv"] = {"cluster", Direction::bottom, ClusterPolicy::balanced, false, true, false, false};
        r["cluster_balanced_mid"] = {"cluster", Direction::middle, ClusterPolicy::balanced, false, true, false, false};
        return r;
    }();
    return registry;
}

// ---------------------------------------------------------------------------
// Config

struct ExperimentConfig {
    std::uint64_t master_seed = 1;           // run.seed: dataset + split streams
    std::vector<std::uint64_t> seeds = {1};  // run.seeds: replicate streams
    Eigen::Index n_gen = 1024;
    double reference_fraction = 0.2;
    int sample_steps = 50;

    std::string data_kind = "ring_mixture";  // ring_mixture | two_moons | csv
    Eigen::Index data_n = 4096;
    Eigen::Index data_dim = 2;               // ring_mixture only
    int data_modes = 8;
    double data_radius = 5.0;
    double data_sigma = 0.3;
    std::vector<double> data_weights;        // optional, length data_modes
    double data_noise_std = 0.05;
    std::string features_csv;
    std::string embeddings_csv;
    bool has_labels = false;

    TrainConfig train;
    std::vector<int> hidden = {128, 128, 128};
    bool conditional = false;

    std::vector<std::string> methods = {"random"};
    std::vector<double> ratios = {0.0};
    int cluster_k = 8;
    int moso_surrogates = 4;
    int knn_k = 3;
    std::vector<std::string> metric_list = {"fid",   "precision", "recall",      "f_score",
                                            "vendi", "inception", "mem_distance"};

    void validate() const;
    std::string canonical_text() const;
    std::uint64_t hash() const { return fnv1a64(canonical_text()); }

    static ExperimentConfig parse_text(const std::string& text);
    static ExperimentConfig parse_file(const std::filesystem::path& path);
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view value) {
    std::vector<std::string> out;
    for (auto field : split_fields(value))
        if (!field.empty()) out.emplace_back(field);
    return out;
}

inline double parse_double_value(std::string_view v, const std::string& key) {
    double d = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw std::invalid_argument("config: bad number for " + key);
    return d;
}

inline long long parse_int_value(std::string_view v, const std::string& key) {
    long long i = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw std::invalid_argument("config: bad integer for " + key);
    return i;
}

inline bool parse_bool_value(std::string_view v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key);
}

template <typename T>
std::string join_list(const std::vector<T>& values) {
    std::ostringstream out;
    for (size_t i = 0; i < values.size(); ++i) {
        if (i) out << ",";
        if constexpr (std::is_same_v<T, double>) out << format_double(values[i]);
        else out << values[i];
    }
    return out.str();
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
    train.validate();
    if (seeds.empty()) throw std::invalid_argument("config: run.seeds must not be empty");
    if (n_gen < 2) throw std::invalid_argument("config: run.n_gen must be >= 2");
    if (sample_steps < 1) throw std::invalid_argument("config: run.sample_steps must be >= 1");
    if (reference_fraction <= 0.0 || reference_fraction >= 1.0)
        throw std::invalid_argument("config: run.reference_fraction must lie in (0,1)");
    if (data_kind != "ring_mixture" && data_kind != "two_moons" && data_kind != "csv")
        throw std::invalid_argument("config: unknown data.kind '" + data_kind + "'");
    if (data_kind == "csv" && features_csv.empty())
        throw std::invalid_argument("config: data.features_csv required for csv datasets");
    if (!data_weights.empty() && static_cast<int>(data_weights.size()) != data_modes)
        throw std::invalid_argument("config: data.weights length must equal data.modes");
    if (methods.empty()) throw std::invalid_argument("config: prune.methods must not be empty");
    for (const auto& m : methods)
        if (!method_registry().count(m))
            throw std::invalid_argument("config: unknown method '" + m + "'");
    if (ratios.empty()) throw std::invalid_argument("config: prune.ratios must not be empty");
    for (size_t i = 0; i < ratios.size(); ++i) {
        if (ratios[i] < 0.0 || ratios[i] >= 1.0)
            throw std::invalid_argument("config: prune.ratios values must lie in [0,1)");
        if (i > 0 && ratios[i] <= ratios[i - 1])
            throw std::invalid_argument("config: prune.ratios must be strictly increasing");
    }
    if (cluster_k < 1) throw std::invalid_argument("config: prune.k must be >= 1");
    if (moso_surrogates < 1) throw std::invalid_argument("config: prune.moso_surrogates must be >= 1");
    if (knn_k < 1) throw std::invalid_argument("config: metrics.k_nn must be >= 1");
    for (const auto& m : metric_list)
        if (m != "fid" && m != "precision" && m != "recall" && m != "f_score" && m != "vendi" &&
            m != "inception" && m != "mem_distance")
            throw std::invalid_argument("config: unknown metric '" + m + "'");
}

inline std::string ExperimentConfig::canonical_text() const {
    std::ostringstream out;
    out << "data.has_labels = " << (has_labels ? "true" : "false") << "\n";
    out << "data.dim = " << data_dim << "\n";
    out << "data.kind = " << data_kind << "\n";
    out << "data.modes = " << data_modes << "\n";
    out << "data.n = " << data_n << "\n";
    out << "data.noise_std = " << format_double(data_noise_std) << "\n";
    out << "data.radius = " << format_double(data_radius) << "\n";
    out << "data.sigma = " << format_double(data_sigma) << "\n";
    if (!features_csv.empty()) out << "data.features_csv = " << features_csv << "\n";
    if (!embeddings_csv.empty()) out << "data.embeddings_csv = " << embeddings_csv << "\n";
    if (!data_weights.empty()) out << "data.weights = " << detail::join_list(data_weights) << "\n";
    out << "metrics.k_nn = " << knn_k << "\n";
    out << "metrics.list = " << detail::join_list(metric_list) << "\n";
    out << "prune.k = " << cluster_k << "\n";
    out << "prune.methods = " << detail::join_list(methods) << "\n";
    out << "prune.moso_surrogates = " << moso_surrogates << "\n";
    out << "prune.ratios = " << detail::join_list(ratios) << "\n";
    out << "run.n_gen = " << n_gen << "\n";
    out << "run.reference_fraction = " << format_double(reference_fraction) << "\n";
    out << "run.sample_steps = " << sample_steps << "\n";
    out << "run.seed = " << master_seed << "\n";
    out << "run.seeds = " << detail::join_list(seeds) << "\n";
    out << "train.batch_size = " << train.batch_size << "\n";
    out << "train.conditional = " << (conditional ? "true" : "false") << "\n";
    out << "train.hidden = " << detail::join_list(hidden) << "\n";
    out << "train.learning_rate = " << format_double(train.learning_rate) << "\n";
    out << "train.ema_decay = " << format_double(train.ema_decay) << "\n";
    out << "train.lr_decay = " << format_double(train.lr_decay) << "\n";
    out << "train.log_window = " << train.log_window << "\n";
    out << "train.pretrain_epochs = " << train.pretrain_epochs << "\n";
    out << "train.probe_timestep = " << format_double(train.probe_timestep) << "\n";
    out << "train.time_bias = " << format_double(train.time_bias) << "\n";
    out << "train.steps = " << train.steps << "\n";
    return out.str();
}

inline ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv = detail::trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        const size_t eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key(detail::trim(sv.substr(0, eq)));
        const std::string value(detail::trim(sv.substr(eq + 1)));

        if (key == "run.seed") cfg.master_seed = static_cast<std::uint64_t>(detail::parse_int_value(value, key));
        else if (key == "run.seeds") {
            cfg.seeds.clear();
            for (const auto& tok : detail::split_list(value))
                cfg.seeds.push_back(static_cast<std::uint64_t>(detail::parse_int_value(tok, key)));
        } else if (key == "run.n_gen") cfg.n_gen = detail::parse_int_value(value, key);
        else if (key == "run.reference_fraction") cfg.reference_fraction = detail::parse_double_value(value, key);
        else if (key == "run.sample_steps") cfg.sample_steps = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "data.kind") cfg.data_kind = value;
        else if (key == "data.n") cfg.data_n = detail::parse_int_value(value, key);
        else if (key == "data.dim") cfg.data_dim = detail::parse_int_value(value, key);
        else if (key == "data.modes") cfg.data_modes = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "data.radius") cfg.data_radius = detail::parse_double_value(value, key);
        else if (key == "data.sigma") cfg.data_sigma = detail::parse_double_value(value, key);
        else if (key == "data.noise_std") cfg.data_noise_std = detail::parse_double_value(value, key);
        else if (key == "data.weights") {
            cfg.data_weights.clear();
            for (const auto& tok : detail::split_list(value))
                cfg.data_weights.push_back(detail::parse_double_value(tok, key));
        } else if (key == "data.features_csv") cfg.features_csv = value;
        else if (key == "data.embeddings_csv") cfg.embeddings_csv = value;
        else if (key == "data.has_labels") cfg.has_labels = detail::parse_bool_value(value, key);
        else if (key == "train.steps") cfg.train.steps = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "train.batch_size") cfg.train.batch_size = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "train.learning_rate") cfg.train.learning_rate = detail::parse_double_value(value, key);
        else if (key == "train.lr_decay") cfg.train.lr_decay = detail::parse_double_value(value, key);
        else if (key == "train.ema_decay") cfg.train.ema_decay = detail::parse_double_value(value, key);
        else if (key == "train.time_bias") cfg.train.time_bias = detail::parse_double_value(value, key);
        else if (key == "train.pretrain_epochs") cfg.train.pretrain_epochs = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "train.probe_timestep") cfg.train.probe_timestep = detail::parse_double_value(value, key);
        else if (key == "train.log_window") cfg.train.log_window = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "train.hidden") {
            cfg.hidden.clear();
            for (const auto& tok : detail::split_list(value))
                cfg.hidden.push_back(static_cast<int>(detail::parse_int_value(tok, key)));
        } else if (key == "train.conditional") cfg.conditional = detail::parse_bool_value(value, key);
        else if (key == "prune.methods") cfg.methods = detail::split_list(value);
        else if (key == "prune.ratios") {
            cfg.ratios.clear();
            for (const auto& tok : detail::split_list(value))
                cfg.ratios.push_back(detail::parse_double_value(tok, key));
        } else if (key == "prune.k") cfg.cluster_k = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "prune.moso_surrogates") cfg.moso_surrogates = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "metrics.k_nn") cfg.knn_k = static_cast<int>(detail::parse_int_value(value, key));
        else if (key == "metrics.list") cfg.metric_list = detail::split_list(value);
        else throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig ExperimentConfig::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

// ---------------------------------------------------------------------------
// Dataset assembly

inline MixtureSpec config_mixture(const ExperimentConfig& cfg) {
    return ring_mixture(cfg.data_modes, cfg.data_radius, cfg.data_sigma, cfg.data_weights,
                        cfg.data_dim);
}

inline Dataset build_dataset(const ExperimentConfig& cfg) {
    Dataset pool;
    if (cfg.data_kind == "ring_mixture") {
        pool = gen_gaussian_mixture(cfg.data_n, config_mixture(cfg), derive_seed(cfg.master_seed, "data"));
    } else if (cfg.data_kind == "two_moons") {
        pool = gen_two_moons(cfg.data_n, cfg.data_noise_std, derive_seed(cfg.master_seed, "data"));
    } else {
        pool = load_features_csv(cfg.features_csv, cfg.has_labels);
        if (!cfg.embeddings_csv.empty()) pool = attach_embeddings(std::move(pool), cfg.embeddings_csv);
    }
    return pool;
}

// ---------------------------------------------------------------------------
// Cells

struct CellKey {
    std::string method;
    double pr = 0.0;      // derived value for balanced methods
    std::string pr_token; // directory token ("0.5", or "auto" when derived)
    std::uint64_t seed = 0;

    std::string name() const { return method + "/pr" + pr_token + "/seed" + std::to_string(seed); }
    std::string stream_tag() const { return method + "/pr=" + pr_token + "/seed=" + std::to_string(seed); }
};

struct CellResult {
    CellKey key;
    MetricsReport report;
    std::filesystem::path dir;
    bool from_cache = false;
    bool failed = false;
    std::string error;
};

struct ExperimentResult {
    std::filesystem::path run_dir;
    std::vector<CellResult> cells;

    bool all_ok() const {
        for (const auto& c : cells)
            if (c.failed) return false;
        return true;
    }
};

struct CurvePoint {
    std::string method;
    double pr = 0.0;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string pr_token(double pr) {
    std::ostringstream out;
    out << pr;
    return out.str();
}

inline bool wants_metric(const ExperimentConfig& cfg, const std::string& name) {
    for (const auto& m : cfg.metric_list)
        if (m == name) return true;
    return false;
}

// Per-replicate scorer context, shared by every cell of that replicate.
// A scorer failure is recorded per family instead of aborting the run, so
// cells of unaffected methods still execute.
struct ReplicateContext {
    std::uint64_t seed = 0;
    std::optional<PretrainResult> pretrain;
    std::optional<ClusterModel> clusters;
    std::map<std::string, ScoreTable> tables;        // family -> table
    std::map<std::string, std::string> family_errors;  // family -> scorer error
};

inline ModelShape config_shape(const ExperimentConfig& cfg, const Dataset& universe) {
    ModelShape shape;
    shape.dim = static_cast<int>(universe.dim());
    shape.hidden = cfg.hidden;
    if (cfg.conditional) {
        if (!universe.labels) throw std::invalid_argument("config: train.conditional needs labeled data");
        shape.label_count = universe.labels->maxCoeff() + 1;
    }
    return shape;
}

// universe_std carries standardized features for everything model-related;
// clustering runs on the raw clustering matrix (external embeddings or raw
// features), mirroring the pretrained-backbone setup.
inline ReplicateContext build_replicate_context(const ExperimentConfig& cfg,
                                                const Dataset& universe,
                                                const Dataset& universe_std,
                                                std::uint64_t rep_seed) {
    ReplicateContext ctx;
    ctx.seed = rep_seed;
    bool needs_pretrain = false, needs_cluster = false, needs_moso = false, needs_random = false;
    for (const auto& m : cfg.methods) {
        const MethodInfo& info = method_registry().at(m);
        needs_pretrain |= info.needs_pretrain;
        needs_cluster |= info.needs_cluster;
        needs_moso |= info.needs_moso;
        needs_random |= info.family == "random";
    }
    const ModelShape shape = config_shape(cfg, universe_std);

    if (needs_random) {
        try {
            ctx.tables["random"] = score_random(universe_std.n(), derive_seed(rep_seed, "score_random"));
        } catch (const std::exception& e) {
            ctx.family_errors["random"] = e.what();
        }
    }
    if (needs_pretrain) {
        try {
            TrainConfig tc = cfg.train;
            tc.seed = derive_seed(rep_seed, "pretrain");
            const auto init = VelocityModel::init(shape, derive_seed(rep_seed, "pretrain_init"));
            ctx.pretrain = pretrain_trace(init, universe_std, tc);
            ctx.tables["monotonicity"] = score_monotonicity(ctx.pretrain->trace);
            ctx.tables["grand"] = score_grand(ctx.pretrain->model, universe_std, ctx.pretrain->probe_noise,
                                              ctx.pretrain->probe_timestep);
            ctx.tables["el2n"] = score_el2n(ctx.pretrain->model, universe_std, ctx.pretrain->probe_noise,
                                            ctx.pretrain->probe_timestep);
        } catch (const std::exception& e) {
            for (const char* family : {"monotonicity", "grand", "el2n"})
                ctx.family_errors[family] = e.what();
        }
    }
    if (needs_moso) {
        try {
            TrainConfig tc = cfg.train;
            tc.seed = derive_seed(rep_seed, "moso_train");
            ctx.tables["moso"] = score_moso(universe_std, tc, cfg.moso_surrogates,
                                            derive_seed(rep_seed, "moso"), shape);
        } catch (const std::exception& e) {
            ctx.family_errors["moso"] = e.what();
        }
    }
    if (needs_cluster) {
        try {
            ctx.clusters = kmeans_fit(clustering_matrix(universe), cfg.cluster_k,
                                      derive_seed(rep_seed, "kmeans"));
        } catch (const std::exception& e) {
            ctx.family_errors["cluster"] = e.what();
        }
    }
    return ctx;
}

inline SubsetManifest resolve_manifest(const ExperimentConfig& cfg, const ReplicateContext& ctx,
                                       const std::string& method, double pr) {
    const MethodInfo& info = method_registry().at(method);
    if (auto it = ctx.family_errors.find(info.family); it != ctx.family_errors.end())
        throw std::runtime_error("scorer '" + info.family + "' failed: " + it->second);
    SelectionSpec spec;
    spec.method_tag = method;
    spec.pruning_ratio = info.pr_grid ? pr : 0.0;
    spec.direction = info.direction;
    spec.cluster_policy = info.policy;
    spec.seed = ctx.seed;

    if (info.policy == ClusterPolicy::balanced)
        return [&] {
            SubsetManifest m = select_balanced_clusters(*ctx.clusters, info.direction, ctx.seed);
            m.method_tag = method;
            return m;
        }();
    if (info.policy == ClusterPolicy::proportional)
        return select_proportional_clusters(score_cluster_distance(*ctx.clusters), *ctx.clusters, spec);
    return select_by_score(ctx.tables.at(info.family), spec);
}

inline MetricsReport evaluate_cell(const ExperimentConfig& cfg, const Dataset& reference,
                                   const Dataset& kept, const Eigen::MatrixXd& samples,
                                   const std::optional<MixtureSpec>& mixture, const CellKey& key) {
    MetricsReport report;
    report.seed = key.seed;
    if (wants_metric(cfg, "fid"))
        report.fid = frechet_distance(fit_gaussian(reference.features), fit_gaussian(samples));
    const bool wants_p = wants_metric(cfg, "precision"), wants_r = wants_metric(cfg, "recall"),
               wants_f = wants_metric(cfg, "f_score");
    if (wants_p || wants_r || wants_f) {
        auto [precision, recall] = knn_precision_recall(reference.features, samples, cfg.knn_k);
        if (wants_p) report.precision = precision;
        if (wants_r) report.recall = recall;
        if (wants_f) report.f_score = f_score(precision, recall);
    }
    if (wants_metric(cfg, "vendi")) report.vendi = vendi_score(samples);
    if (wants_metric(cfg, "inception") && mixture)
        report.inception = inception_score(mixture->posterior(samples));
    if (wants_metric(cfg, "mem_distance"))
        report.mem_distance = memorization_distance(samples, kept.features).first;

    report.config = {{"method", key.method},
                     {"pr", key.pr},
                     {"replicate_seed", key.seed},
                     {"config_hash", to_hex16(cfg.hash())},
                     {"train_steps", cfg.train.steps}};
    return report;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runner

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& run_root, int jobs = 1) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (jobs < 1) throw std::invalid_argument("run_experiment: jobs must be >= 1");

    ExperimentResult result;
    result.run_dir = run_root / ("run-" + to_hex16(cfg.hash()));
    fs::create_directories(result.run_dir / "cells");
    fs::create_directories(result.run_dir / "scores");
    if (!fs::exists(result.run_dir / "config.txt")) {
        std::ofstream out(result.run_dir / "config.txt");
        out << cfg.canonical_text();
    }

    const Dataset pool = build_dataset(cfg);
    auto [universe, reference] = split_reference(pool, cfg.reference_fraction, cfg.master_seed);
    const Standardizer stdz = Standardizer::fit(universe.features);
    Dataset universe_std = universe;
    universe_std.features = stdz.transform(universe.features);
    std::optional<MixtureSpec> mixture;
    if (cfg.data_kind == "ring_mixture") mixture = config_mixture(cfg);

    // Replicate contexts are built up front (sequential, deterministic);
    // cells then run independently, possibly in parallel.
    std::map<std::uint64_t, detail::ReplicateContext> contexts;
    for (auto rep : cfg.seeds) {
        if (contexts.count(rep)) continue;
        contexts.emplace(rep, detail::build_replicate_context(cfg, universe, universe_std, rep));
        for (const auto& [family, table] : contexts.at(rep).tables)
            save_score_table(table, result.run_dir / "scores" /
                                        (family + "_seed" + std::to_string(rep) + ".csv"));
    }

    struct CellPlan {
        CellKey key;
        fs::path dir;
        double grid_pr = 0.0;  // requested ratio; balanced cells derive theirs
    };
    std::vector<CellPlan> plans;
    for (const auto& method : cfg.methods) {
        const MethodInfo& info = method_registry().at(method);
        const std::vector<double> prs = info.pr_grid ? cfg.ratios : std::vector<double>{0.0};
        for (double pr : prs) {
            for (auto rep : cfg.seeds) {
                CellPlan plan;
                plan.key.method = method;
                plan.key.seed = rep;
                plan.key.pr = pr;
                plan.key.pr_token = info.pr_grid ? detail::pr_token(pr) : "auto";
                plan.grid_pr = pr;
                plan.dir = result.run_dir / "cells" / plan.key.method /
                           ("pr" + plan.key.pr_token) / ("seed" + std::to_string(rep));
                fs::create_directories(plan.dir);
                plans.push_back(std::move(plan));
            }
        }
    }

    const ModelShape shape = detail::config_shape(cfg, universe_std);
    std::vector<CellResult> cells(plans.size());
    std::atomic<size_t> next{0};

    auto run_cell = [&](const CellPlan& plan, CellResult& out) {
        out.key = plan.key;
        out.dir = plan.dir;
        const fs::path report_path = plan.dir / "report.json";
        try {
            if (fs::exists(report_path)) {
                out.report = load_report(report_path);
                out.from_cache = true;
                out.key.pr = out.report.config.value("pr", out.key.pr);
                return;
            }
            const SubsetManifest manifest =
                detail::resolve_manifest(cfg, contexts.at(plan.key.seed), plan.key.method, plan.grid_pr);
            if (!method_registry().at(plan.key.method).pr_grid) out.key.pr = manifest.pruning_ratio;
            save_manifest(manifest, plan.dir / "manifest.json");
            const Dataset kept = apply_manifest(universe, manifest);

            TrainConfig tc = cfg.train;
            tc.seed = derive_seed(plan.key.seed, "train/" + plan.key.stream_tag());
            const auto init = VelocityModel::init(
                shape, derive_seed(plan.key.seed, "init/" + plan.key.stream_tag()));
            TrainResult trained = train(init, universe_std, manifest, tc);
            trained.model.save(plan.dir / "model.json");

            const Eigen::MatrixXd samples = stdz.inverse(
                sample_ode(trained.model, cfg.n_gen, cfg.sample_steps,
                           derive_seed(plan.key.seed, "sample/" + plan.key.stream_tag())));
            {
                std::vector<std::string> header(static_cast<size_t>(samples.cols()));
                for (size_t c = 0; c < header.size(); ++c) header[c] = "x" + std::to_string(c);
                write_csv(plan.dir / "samples.csv", header, samples);
            }

            MetricsReport report =
                detail::evaluate_cell(cfg, reference, kept, samples, mixture, out.key);
            report.config["n_universe"] = static_cast<long long>(universe.n());
            save_report(report, report_path);
            out.report = std::move(report);
        } catch (const std::exception& e) {
            out.failed = true;
            out.error = e.what();
            std::ofstream err(plan.dir / "error.txt");
            err << e.what() << "\n";
        }
    };

    const int workers = std::min<int>(jobs, static_cast<int>(plans.size()));
    if (workers <= 1) {
        for (size_t i = 0; i < plans.size(); ++i) run_cell(plans[i], cells[i]);
    } else {
        std::vector<std::thread> pool_threads;
        for (int w = 0; w < workers; ++w)
            pool_threads.emplace_back([&] {
                while (true) {
                    const size_t i = next.fetch_add(1);
                    if (i >= plans.size()) break;
                    run_cell(plans[i], cells[i]);
                }
            });
        for (auto& th : pool_threads) th.join();
    }
    result.cells = std::move(cells);
    return result;
}

// ---------------------------------------------------------------------------
// Curves

inline std::vector<CurvePoint> collect_curves(const std::filesystem::path& run_dir) {
    namespace fs = std::filesystem;
    const fs::path cells = run_dir / "cells";
    if (!fs::exists(cells)) throw std::invalid_argument("collect_curves: no cells under " + run_dir.string());

    std::vector<CurvePoint> points;
    for (const auto& entry : fs::recursive_directory_iterator(cells)) {
        if (!entry.is_regular_file() || entry.path().filename() != "report.json") continue;
        const MetricsReport report = load_report(entry.path());
        const std::string method = report.config.value("method", "?");
        const double pr = report.config.value("pr", 0.0);
        auto add = [&](const char* name, const std::optional<double>& v) {
            if (v) points.push_back({method, pr, name, *v, report.seed});
        };
        add("fid", report.fid);
        add("precision", report.precision);
        add("recall", report.recall);
        add("f_score", report.f_score);
        add("vendi", report.vendi);
        add("inception", report.inception);
        add("mem_distance", report.mem_distance);
    }
    if (points.empty()) throw std::invalid_argument("collect_curves: no completed cells in " + run_dir.string());
    std::sort(points.begin(), points.end(), [](const CurvePoint& a, const CurvePoint& b) {
        if (a.metric != b.metric) return a.metric < b.metric;
        if (a.method != b.method) return a.method < b.method;
        if (a.pr != b.pr) return a.pr < b.pr;
        return a.seed < b.seed;
    });
    return points;
}

// One plot-ready CSV per metric: method,pr,value,seed in stable order.
inline std::vector<std::filesystem::path> emit_curves(const std::filesystem::path& run_dir) {
    const auto points = collect_curves(run_dir);
    std::vector<std::filesystem::path> written;
    std::string current;
    std::ofstream out;
    std::filesystem::path current_path;
    for (const auto& p : points) {
        if (p.metric != current) {
            if (out.is_open()) out.close();
            current = p.metric;
            current_path = run_dir / ("curves_" + current + ".csv");
            out.open(current_path);
            if (!out) throw std::runtime_error("cannot write " + current_path.string());
            out << "method,pr,value,seed\n";
            written.push_back(current_path);
        }
        out << p.method << "," << format_double(p.pr) << "," << format_double(p.value) << ","
            << p.seed << "\n";
    }
    return written;
}

// Parses a curves CSV back into points (metric taken from the file name).
inline std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string stem = path.stem().string();
    const std::string prefix = "curves_";
    const std::string metric = stem.rfind(prefix, 0) == 0 ? stem.substr(prefix.size()) : stem;

    std::vector<CurvePoint> points;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto sv = detail::trim(line);
        if (sv.empty() || line_no == 1) continue;
        const auto fields = detail::split_fields(sv);
        if (fields.size() != 4)
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + ": expected 4 fields");
        CurvePoint p;
        p.method = std::string(fields[0]);
        p.pr = detail::parse_double_value(fields[1], "pr");
        p.metric = metric;
        p.value = detail::parse_double_value(fields[2], "value");
        p.seed = static_cast<std::uint64_t>(detail::parse_int_value(fields[3], "seed"));
        points.push_back(std::move(p));
    }
    return points;
}

// ---------------------------------------------------------------------------
// Balance report: training vs generated per-cluster histograms for every
// cluster-family cell, rebuilt deterministically from the run's config.

struct BalanceRow {
    std::string method;
    std::string pr_token;
    std::uint64_t seed = 0;
    int cluster = 0;
    long train_count = 0;
    long gen_count = 0;
};

inline std::vector<BalanceRow> balance_report(const std::filesystem::path& run_dir) {
    namespace fs = std::filesystem;
    if (!fs::exists(run_dir / "config.txt"))
        throw std::invalid_argument("balance_report: " + run_dir.string() + " has no config.txt");
    const ExperimentConfig cfg = ExperimentConfig::parse_file(run_dir / "config.txt");

    const Dataset pool = build_dataset(cfg);
    auto [universe, reference] = split_reference(pool, cfg.reference_fraction, cfg.master_seed);
    if (universe.embeddings && universe.embeddings->cols() != universe.dim())
        throw std::invalid_argument(
            "balance_report: generated samples cannot be assigned to clusters fitted on external "
            "embeddings of a different dimension");

    std::vector<BalanceRow> rows;
    for (auto rep : cfg.seeds) {
        std::optional<ClusterModel> cm;
        for (const auto& method : cfg.methods) {
            if (method_registry().at(method).family != "cluster") continue;
            if (!cm) cm = kmeans_fit(clustering_matrix(universe), cfg.cluster_k, derive_seed(rep, "kmeans"));
            const auto train_counts = cluster_histogram(cm->assignment, cm->k);

            const fs::path method_dir = run_dir / "cells" / method;
            if (!fs::exists(method_dir)) continue;
            for (const auto& pr_entry : fs::directory_iterator(method_dir)) {
                const fs::path samples_path =
                    pr_entry.path() / ("seed" + std::to_string(rep)) / "samples.csv";
                if (!fs::exists(samples_path)) continue;
                const CsvTable samples = read_csv(samples_path);
                const Eigen::VectorXi gen_assign = assign_to_centers(samples.values, cm->centers);
                const auto gen_counts = cluster_histogram(gen_assign, cm->k);
                for (int c = 0; c < cm->k; ++c)
                    rows.push_back({method, pr_entry.path().filename().string(), rep, c,
                                    train_counts[static_cast<size_t>(c)],
                                    gen_counts[static_cast<size_t>(c)]});
            }
        }
    }
    if (rows.empty())
        throw std::invalid_argument("balance_report: no cluster-family cells with samples in " +
                                    run_dir.string());
    std::sort(rows.begin(), rows.end(), [](const BalanceRow& a, const BalanceRow& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.pr_token != b.pr_token) return a.pr_token < b.pr_token;
        if (a.seed != b.seed) return a.seed < b.seed;
        return a.cluster < b.cluster;
    });
    return rows;
}

inline std::filesystem::path write_balance_report(const std::filesystem::path& run_dir) {
    const auto rows = balance_report(run_dir);
    const std::filesystem::path path = run_dir / "balance_report.csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,pr,seed,cluster,train_count,gen_count\n";
    for (const auto& r : rows)
        out << r.method << "," << r.pr_token << "," << r.seed << "," << r.cluster << ","
            << r.train_count << "," << r.gen_count << "\n";
    return path;
}

}  // namespace prunelab
