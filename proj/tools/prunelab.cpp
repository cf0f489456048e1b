// prunelab command line: dataset generation, scoring, selection, training,
// sampling, evaluation, and full sweeps. Every verb is a thin wrapper over
// the library; all randomness is controlled by explicit seeds.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "prunelab/experiment.hpp"

namespace fs = std::filesystem;
using namespace prunelab;

namespace {

fs::path default_run_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("PRUNELAB_RUN_ROOT"); env && *env) return env;
    return "runs";
}

std::vector<std::string> feature_header(Eigen::Index d, bool with_labels) {
    std::vector<std::string> header;
    for (Eigen::Index c = 0; c < d; ++c) header.push_back("x" + std::to_string(c));
    if (with_labels) header.push_back("label");
    return header;
}

void write_dataset_csv(const Dataset& ds, const fs::path& path, bool with_labels) {
    Eigen::MatrixXd out(ds.n(), ds.dim() + (with_labels ? 1 : 0));
    out.leftCols(ds.dim()) = ds.features;
    if (with_labels) {
        if (!ds.labels) throw std::invalid_argument("dataset has no labels to write");
        out.col(ds.dim()) = ds.labels->cast<double>();
    }
    write_csv(path, feature_header(ds.dim(), with_labels), out);
}

Dataset load_dataset(const std::string& features, bool has_labels, const std::string& embeddings) {
    Dataset ds = load_features_csv(features, has_labels);
    if (!embeddings.empty()) ds = attach_embeddings(std::move(ds), embeddings);
    return ds;
}

int run_cli(int argc, char** argv) {
    CLI::App app{"prunelab: data pruning laboratory for flow-matching diffusion models"};
    app.require_subcommand(1);

    // generate-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("generate-data", "generate a synthetic dataset as CSV");
    std::string gen_kind = "ring_mixture", gen_out, gen_mixture_out;
    long long gen_n = 4096;
    int gen_modes = 8;
    double gen_radius = 5.0, gen_sigma = 0.3, gen_noise = 0.05;
    std::vector<double> gen_weights;
    std::uint64_t gen_seed = 1;
    bool gen_labels = false;
    gen->add_option("--kind", gen_kind, "ring_mixture or two_moons");
    gen->add_option("--n", gen_n, "sample count")->required();
    gen->add_option("--modes", gen_modes, "mixture mode count");
    gen->add_option("--radius", gen_radius, "mixture ring radius");
    gen->add_option("--sigma", gen_sigma, "mixture mode stddev");
    gen->add_option("--weights", gen_weights, "mixture weights (must sum to 1)");
    gen->add_option("--noise-std", gen_noise, "two-moons jitter");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output CSV path")->required();
    gen->add_option("--mixture-out", gen_mixture_out, "write the mixture spec JSON (classifier input)");
    gen->add_flag("--with-labels", gen_labels, "append the label column");
    gen->callback([&] {
        Dataset ds;
        std::optional<MixtureSpec> spec;
        if (gen_kind == "ring_mixture") {
            spec = ring_mixture(gen_modes, gen_radius, gen_sigma, gen_weights);
            ds = gen_gaussian_mixture(gen_n, *spec, gen_seed);
        } else if (gen_kind == "two_moons") {
            ds = gen_two_moons(gen_n, gen_noise, gen_seed);
        } else {
            throw CLI::ValidationError("--kind", "unknown kind '" + gen_kind + "'");
        }
        write_dataset_csv(ds, gen_out, gen_labels);
        if (!gen_mixture_out.empty()) {
            if (!spec) throw CLI::ValidationError("--mixture-out", "only meaningful for mixtures");
            std::ofstream out(gen_mixture_out);
            out << mixture_to_json(*spec).dump(2) << "\n";
        }
        std::cout << "wrote " << ds.n() << " samples to " << gen_out << "\n";
    });

    // score -------------------------------------------------------------------
    auto* score = app.add_subcommand("score", "compute a per-sample score table");
    std::string sc_features, sc_embeddings, sc_method, sc_out;
    bool sc_has_labels = false;
    std::uint64_t sc_seed = 1;
    TrainConfig sc_train;
    std::vector<int> sc_hidden = {128, 128, 128};
    int sc_k = 8, sc_surrogates = 4;
    score->add_option("--features", sc_features)->required();
    score->add_flag("--has-labels", sc_has_labels);
    score->add_option("--embeddings", sc_embeddings);
    score->add_option("--method", sc_method, "random|monotonicity|grand|el2n|moso|cluster")->required();
    score->add_option("--seed", sc_seed);
    score->add_option("--out", sc_out)->required();
    score->add_option("--pretrain-epochs", sc_train.pretrain_epochs);
    score->add_option("--batch-size", sc_train.batch_size);
    score->add_option("--learning-rate", sc_train.learning_rate);
    score->add_option("--probe-t", sc_train.probe_timestep);
    score->add_option("--hidden", sc_hidden);
    score->add_option("--k", sc_k, "cluster count (cluster method)");
    score->add_option("--moso-surrogates", sc_surrogates);
    score->callback([&] {
        const Dataset ds = load_dataset(sc_features, sc_has_labels, sc_embeddings);
        ModelShape shape;
        shape.dim = static_cast<int>(ds.dim());
        shape.hidden = sc_hidden;
        ScoreTable table;
        if (sc_method == "random") {
            table = score_random(ds.n(), sc_seed);
        } else if (sc_method == "monotonicity" || sc_method == "grand" || sc_method == "el2n") {
            TrainConfig tc = sc_train;
            tc.seed = derive_seed(sc_seed, "pretrain");
            const auto init = VelocityModel::init(shape, derive_seed(sc_seed, "pretrain_init"));
            const PretrainResult pre = pretrain_trace(init, ds, tc);
            if (sc_method == "monotonicity") table = score_monotonicity(pre.trace);
            else if (sc_method == "grand")
                table = score_grand(pre.model, ds, pre.probe_noise, pre.probe_timestep);
            else table = score_el2n(pre.model, ds, pre.probe_noise, pre.probe_timestep);
        } else if (sc_method == "moso") {
            table = score_moso(ds, sc_train, sc_surrogates, sc_seed, shape);
        } else if (sc_method == "cluster") {
            table = score_cluster_distance(kmeans_fit(clustering_matrix(ds), sc_k, sc_seed));
        } else {
            throw CLI::ValidationError("--method", "unknown method '" + sc_method + "'");
        }
        table.seed = sc_seed;
        save_score_table(table, sc_out);
        std::cout << "wrote " << table.n() << " scores to " << sc_out << "\n";
    });

    // select ------------------------------------------------------------------
    auto* select = app.add_subcommand("select", "resolve a score table into a subset manifest");
    std::string se_scores, se_out, se_direction = "top", se_policy = "none";
    std::string se_features, se_embeddings;
    bool se_has_labels = false;
    double se_ratio = 0.5;
    int se_k = 8;
    std::uint64_t se_seed = 1;
    select->add_option("--scores", se_scores, "score table CSV (policy none/proportional)");
    select->add_option("--ratio", se_ratio, "pruning ratio in [0,1)");
    select->add_option("--direction", se_direction, "top|bottom|middle");
    select->add_option("--policy", se_policy, "none|proportional|balanced");
    select->add_option("--features", se_features, "dataset CSV (cluster policies)");
    select->add_flag("--has-labels", se_has_labels);
    select->add_option("--embeddings", se_embeddings);
    select->add_option("--k", se_k, "cluster count (cluster policies)");
    select->add_option("--seed", se_seed);
    select->add_option("--out", se_out)->required();
    select->callback([&] {
        SelectionSpec spec;
        spec.pruning_ratio = se_ratio;
        spec.direction = direction_from_string(se_direction);
        spec.seed = se_seed;
        SubsetManifest manifest;
        if (se_policy == "none") {
            if (se_scores.empty()) throw CLI::ValidationError("--scores", "required for policy none");
            spec.cluster_policy = ClusterPolicy::none;
            manifest = select_by_score(load_score_table(se_scores), spec);
        } else if (se_policy == "proportional" || se_policy == "balanced") {
            if (se_features.empty())
                throw CLI::ValidationError("--features", "required for cluster policies");
            const Dataset ds = load_dataset(se_features, se_has_labels, se_embeddings);
            const ClusterModel cm = kmeans_fit(clustering_matrix(ds), se_k, se_seed);
            if (se_policy == "balanced") {
                manifest = select_balanced_clusters(cm, spec.direction, se_seed);
            } else {
                spec.cluster_policy = ClusterPolicy::proportional;
                manifest = select_proportional_clusters(score_cluster_distance(cm), cm, spec);
            }
        } else {
            throw CLI::ValidationError("--policy", "unknown policy '" + se_policy + "'");
        }
        save_manifest(manifest, se_out);
        std::cout << "kept " << manifest.kept_ids.size() << " ids (PR "
                  << manifest.pruning_ratio << ") -> " << se_out << "\n";
    });

    // train -------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a velocity model on the kept subset");
    std::string tr_features, tr_manifest, tr_out;
    bool tr_has_labels = false, tr_conditional = false;
    TrainConfig tr_cfg;
    std::vector<int> tr_hidden = {128, 128, 128};
    tr->add_option("--features", tr_features)->required();
    tr->add_flag("--has-labels", tr_has_labels);
    tr->add_option("--manifest", tr_manifest, "subset manifest (omit to train unpruned)");
    tr->add_option("--steps", tr_cfg.steps);
    tr->add_option("--batch-size", tr_cfg.batch_size);
    tr->add_option("--learning-rate", tr_cfg.learning_rate);
    tr->add_option("--lr-decay", tr_cfg.lr_decay, "cosine floor as a fraction of the learning rate");
    tr->add_option("--ema-decay", tr_cfg.ema_decay, "weight EMA decay (0 disables)");
    tr->add_option("--time-bias", tr_cfg.time_bias, "t = u^p exponent; p > 1 emphasizes small t");
    tr->add_option("--seed", tr_cfg.seed);
    tr->add_option("--hidden", tr_hidden);
    tr->add_flag("--conditional", tr_conditional, "condition on the label column");
    tr->add_option("--out", tr_out)->required();
    tr->callback([&] {
        const Dataset ds = load_dataset(tr_features, tr_has_labels, "");
        SubsetManifest manifest;
        if (!tr_manifest.empty()) {
            manifest = load_manifest(tr_manifest);
        } else {
            manifest.kept_ids = identity_ids(ds.n());
            manifest.method_tag = "unpruned";
        }
        ModelShape shape;
        shape.dim = static_cast<int>(ds.dim());
        shape.hidden = tr_hidden;
        if (tr_conditional) {
            if (!ds.labels) throw CLI::ValidationError("--conditional", "dataset has no labels");
            shape.label_count = ds.labels->maxCoeff() + 1;
        }
        const auto init = VelocityModel::init(shape, derive_seed(tr_cfg.seed, "init"));
        const TrainResult result = train(init, ds, manifest, tr_cfg);
        result.model.save(tr_out);
        std::cout << "trained on " << manifest.kept_ids.size() << " samples; windowed loss "
                  << result.loss_curve.front() << " -> " << result.loss_curve.back() << "; saved "
                  << tr_out << "\n";
    });

    // sample ------------------------------------------------------------------
    auto* sa = app.add_subcommand("sample", "integrate the probability-flow ODE");
    std::string sa_model, sa_out;
    long long sa_count = 1024;
    int sa_steps = 50;
    std::uint64_t sa_seed = 1;
    sa->add_option("--model", sa_model)->required();
    sa->add_option("--count", sa_count);
    sa->add_option("--steps", sa_steps);
    sa->add_option("--seed", sa_seed);
    sa->add_option("--out", sa_out)->required();
    sa->callback([&] {
        const VelocityModel model = VelocityModel::load(sa_model);
        const Eigen::MatrixXd samples = sample_ode(model, sa_count, sa_steps, sa_seed);
        write_csv(sa_out, feature_header(samples.cols(), false), samples);
        std::cout << "wrote " << samples.rows() << " samples to " << sa_out << "\n";
    });

    // evaluate ----------------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "compute metrics for generated samples");
    std::string ev_real, ev_gen, ev_train, ev_mixture, ev_out;
    std::vector<std::string> ev_metrics = {"fid", "precision", "recall", "f_score", "vendi"};
    int ev_knn = 3;
    std::uint64_t ev_seed = 0;
    ev->add_option("--real", ev_real, "reference feature CSV")->required();
    ev->add_option("--gen", ev_gen, "generated sample CSV")->required();
    ev->add_option("--train", ev_train, "training subset CSV (enables mem_distance)");
    ev->add_option("--mixture", ev_mixture, "mixture spec JSON (enables inception)");
    ev->add_option("--metrics", ev_metrics);
    ev->add_option("--k-nn", ev_knn);
    ev->add_option("--seed", ev_seed, "seed recorded in the report");
    ev->add_option("--out", ev_out)->required();
    ev->callback([&] {
        const Eigen::MatrixXd real = read_csv(ev_real).values;
        const Eigen::MatrixXd gen_samples = read_csv(ev_gen).values;
        MetricsReport report;
        report.seed = ev_seed;
        auto wants = [&](const char* name) {
            for (const auto& m : ev_metrics)
                if (m == name) return true;
            return false;
        };
        if (wants("fid")) report.fid = frechet_distance(fit_gaussian(real), fit_gaussian(gen_samples));
        if (wants("precision") || wants("recall") || wants("f_score")) {
            auto [p, r] = knn_precision_recall(real, gen_samples, ev_knn);
            if (wants("precision")) report.precision = p;
            if (wants("recall")) report.recall = r;
            if (wants("f_score")) report.f_score = f_score(p, r);
        }
        if (wants("vendi")) report.vendi = vendi_score(gen_samples);
        if (wants("inception")) {
            if (ev_mixture.empty())
                throw CLI::ValidationError("--mixture", "inception needs a mixture spec classifier");
            std::ifstream in(ev_mixture);
            nlohmann::json j;
            in >> j;
            report.inception = inception_score(mixture_from_json(j).posterior(gen_samples));
        }
        if (wants("mem_distance")) {
            if (ev_train.empty())
                throw CLI::ValidationError("--train", "mem_distance needs the training subset");
            report.mem_distance = memorization_distance(gen_samples, read_csv(ev_train).values).first;
        }
        report.config = {{"real", ev_real}, {"gen", ev_gen}, {"k_nn", ev_knn}};
        save_report(report, ev_out);
        std::cout << report_to_json(report).dump(2) << "\n";
    });

    // sweep -------------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "run the full (method x ratio x seed) grid");
    std::string sw_config, sw_root;
    int sw_jobs = 1;
    sw->add_option("--config", sw_config, "experiment config file")->required();
    sw->add_option("--run-root", sw_root, "run root (default $PRUNELAB_RUN_ROOT or ./runs)");
    sw->add_option("--jobs", sw_jobs, "parallel cells");
    sw->callback([&] {
        const ExperimentConfig cfg = ExperimentConfig::parse_file(sw_config);
        const ExperimentResult result = run_experiment(cfg, default_run_root(sw_root), sw_jobs);
        int failed = 0;
        for (const auto& cell : result.cells) {
            std::cout << (cell.failed ? "FAIL " : cell.from_cache ? "skip " : "done ")
                      << cell.key.name();
            if (cell.failed) std::cout << "  (" << cell.error << ")";
            std::cout << "\n";
            failed += cell.failed ? 1 : 0;
        }
        std::cout << result.cells.size() - failed << "/" << result.cells.size()
                  << " cells ok under " << result.run_dir << "\n";
        if (failed) throw CLI::RuntimeError("sweep", 1);
    });

    // curves ------------------------------------------------------------------
    auto* cu = app.add_subcommand("curves", "emit plot-ready per-metric CSVs for a run");
    std::string cu_run;
    cu->add_option("--run", cu_run, "run directory (runs/run-<hash>)")->required();
    cu->callback([&] {
        for (const auto& path : emit_curves(cu_run)) std::cout << "wrote " << path << "\n";
    });

    // balance-report ----------------------------------------------------------
    auto* ba = app.add_subcommand("balance-report", "training vs generated cluster histograms");
    std::string ba_run;
    ba->add_option("--run", ba_run, "run directory (runs/run-<hash>)")->required();
    ba->callback([&] { std::cout << "wrote " << write_balance_report(ba_run) << "\n"; });

    CLI11_PARSE(app, argc, argv);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
