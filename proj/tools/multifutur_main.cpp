// multifutur: belief-map-conditioned multi-future trajectory forecasting.
//
// Subcommands: synth, build-maps, train, predict, evaluate, plot-heatmap.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
// Every run writes a manifest with checksums of its artifacts.

#include <CLI11.hpp>

#include "mf/evaluation.hpp"
#include "mf/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using namespace mf;

struct ManifestScope {
    RunManifest manifest;
    std::string path;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    explicit ManifestScope(std::string command, const std::string& out_hint) {
        manifest.command = std::move(command);
        path = out_hint.empty() ? manifest.command + ".manifest.json"
                                : out_hint + ".manifest.json";
    }
    void add_output(const std::string& file) {
        manifest.outputs.emplace_back(file, file_checksum_hex(file));
    }
    void finish() {
        manifest.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                .count();
        write_manifest(path, manifest);
        std::cout << "manifest: " << path << "\n";
    }
};

AnnotationLayout parse_layout(const std::string& spec) {
    AnnotationLayout layout;
    if (spec.empty()) return layout;
    std::istringstream in(spec);
    std::string field;
    int col = 0;
    int seen = 0;
    while (std::getline(in, field, ',')) {
        if (field == "frame") layout.frame = col;
        else if (field == "ped") layout.ped = col;
        else if (field == "x") layout.x = col;
        else if (field == "y") layout.y = col;
        else throw ConfigError("layout: unknown field '" + field + "'");
        ++col;
        ++seen;
    }
    if (seen != 4) throw ConfigError("layout: expected 4 comma-separated fields");
    return layout;
}

std::map<std::string, std::string> snapshot_config(const ModelConfig& m,
                                                   const TrainConfig& t,
                                                   const InferenceSettings& s) {
    std::map<std::string, std::string> snap;
    auto put = [&](const std::string& k, auto v) { snap[k] = std::to_string(v); };
    put("input_dim", m.input_dim);
    put("feature_dim", m.feature_dim);
    put("hidden_dim", m.hidden_dim);
    put("latent_dim", m.latent_dim);
    put("local_side", m.local_side);
    put("heads", m.heads);
    put("head_dim", m.head_dim);
    put("decoder_mean_clip", m.decoder_mean_clip);
    put("lr", t.lr);
    put("batch_size", t.batch_size);
    put("epochs", t.epochs);
    put("warmup_epochs", t.warmup_epochs);
    put("belief_weight", t.belief_weight);
    put("grad_clip", t.grad_clip);
    put("map_samples", t.map_samples);
    put("seed", t.seed);
    snap["init_mode"] = to_string(s.init_mode);
    snap["adjacency"] = to_string(s.adjacency);
    put("sigma", s.sigma);
    put("knn_k", s.knn_k);
    snap["belief"] = s.belief_conditioning ? "on" : "off";
    return snap;
}

void write_predictions(std::ostream& out, std::size_t window_id,
                       const std::vector<std::int64_t>& ped_ids,
                       const std::vector<PosSeq>& samples) {
    out.precision(17);
    for (std::size_t k = 0; k < samples.size(); ++k) {
        for (std::size_t t = 0; t < samples[k].size(); ++t) {
            const Mat& step = samples[k][t];
            for (Eigen::Index p = 0; p < step.rows(); ++p) {
                out << window_id << '\t' << k << '\t' << ped_ids[p] << '\t' << t << '\t'
                    << step(p, 0) << '\t' << step(p, 1) << '\n';
            }
        }
    }
}

// Shared flag bundle for commands that run the model from a checkpoint.
struct ModelRunFlags {
    std::string data;
    std::string checkpoint;
    std::string grid;
    std::string layout;
    int t_obs = 8;
    int t_pred = 12;
    int stride = 0;  // 0: default non-overlapping
    std::uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", data, "annotation file")->required();
        cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
        cmd->add_option("--grid", grid, "belief-map grid file");
        cmd->add_option("--layout", layout, "column order, e.g. frame,ped,x,y");
        cmd->add_option("--t-obs", t_obs, "observed steps");
        cmd->add_option("--t-pred", t_pred, "predicted steps");
        cmd->add_option("--stride", stride, "window stride (default t_obs+t_pred)");
        cmd->add_option("--seed", seed, "rng seed");
    }

    struct Loaded {
        Checkpoint ckpt;
        std::optional<GlobalGrid> grid;
        std::vector<SceneWindow> windows;
    };

    Loaded load() const {
        Loaded l;
        l.ckpt = load_checkpoint(checkpoint);
        if (!grid.empty()) l.grid = load_grid_file(grid);
        if (l.ckpt.settings.belief_conditioning && !l.grid.has_value()) {
            throw ConfigError(
                "checkpoint was trained with belief conditioning; pass --grid");
        }
        Scene scene = parse_annotations_file(data, parse_layout(layout));
        l.windows = build_windows(scene, t_obs, t_pred,
                                  stride > 0 ? std::optional<int>(stride) : std::nullopt);
        if (l.windows.empty()) throw DataError("no usable windows in " + data);
        return l;
    }
};

int cmd_synth(const std::string& kind, int peds, int windows, double noise,
              std::uint64_t seed, int t_obs, int t_pred, const std::string& out_path) {
    SynthSpec spec;
    spec.kind = synth_kind_from_string(kind);
    spec.n_peds = peds;
    spec.n_windows = windows;
    spec.noise_std = noise;
    spec.seed = seed;
    spec.t_obs = t_obs;
    spec.t_pred = t_pred;

    ManifestScope ms("synth", out_path);
    ms.manifest.seed = seed;
    ms.manifest.config = {{"kind", kind},
                          {"n_peds", std::to_string(peds)},
                          {"n_windows", std::to_string(windows)},
                          {"noise_std", std::to_string(noise)}};
    Scene scene = synth_generate(spec);
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);
    write_annotations(out, scene);
    out.close();
    ms.add_output(out_path);
    ms.finish();
    std::cout << "wrote " << scene.annotations.size() << " annotations to " << out_path
              << "\n";
    return 0;
}

int cmd_build_maps(const std::string& data, const std::string& out_path, int local_side,
                   bool per_axis, const std::string& layout) {
    ManifestScope ms("build-maps", out_path);
    ms.manifest.inputs = {data};
    ms.manifest.config = {{"local_side", std::to_string(local_side)},
                          {"coarse_mode", per_axis ? "per_axis" : "pooled"}};
    Scene scene = parse_annotations_file(data, parse_layout(layout));
    auto tracks = extract_tracks(scene);
    GridGeometry geo = compute_grid_geometry(
        tracks, local_side, per_axis ? GridCoarseMode::per_axis : GridCoarseMode::pooled);
    GlobalGrid grid = build_global_grid(tracks, geo);
    save_grid_file(out_path, grid);
    ms.add_output(out_path);
    ms.finish();
    std::cout << "grid: " << geo.n_bins_x << " x " << geo.n_bins_y << " bins, L="
              << geo.local_side << " -> " << out_path << "\n";
    return 0;
}

struct TrainFlags {
    std::string data, val, grid, config, out, log, layout;
    int t_obs = 8, t_pred = 12, stride = 0;
    // optional overrides; CLI wins over the config file
    std::optional<double> lr, belief_weight, grad_clip, sigma;
    std::optional<int> batch_size, epochs, warmup, map_samples, knn_k;
    std::optional<std::string> init, adjacency, belief;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainFlags& f) {
    FileConfig cfg;
    if (!f.config.empty()) cfg = parse_config_file(f.config);
    if (f.lr) cfg.train.lr = *f.lr;
    if (f.batch_size) cfg.train.batch_size = *f.batch_size;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.warmup) cfg.train.warmup_epochs = *f.warmup;
    if (f.belief_weight) cfg.train.belief_weight = *f.belief_weight;
    if (f.grad_clip) cfg.train.grad_clip = *f.grad_clip;
    if (f.map_samples) cfg.train.map_samples = *f.map_samples;
    if (f.seed) cfg.train.seed = *f.seed;
    if (f.init) {
        cfg.train.init_mode = init_mode_from_string(*f.init);
        cfg.settings.init_mode = cfg.train.init_mode;
    }
    if (f.adjacency) cfg.settings.adjacency = adjacency_mode_from_string(*f.adjacency);
    if (f.sigma) cfg.settings.sigma = *f.sigma;
    if (f.knn_k) cfg.settings.knn_k = *f.knn_k;
    if (f.belief) cfg.settings.belief_conditioning = (*f.belief == "on");
    cfg.settings.init_mode = cfg.train.init_mode;
    cfg.model.validate();
    cfg.train.validate();

    ManifestScope ms("train", f.out);
    ms.manifest.seed = cfg.train.seed;
    ms.manifest.inputs = {f.data};
    if (!f.val.empty()) ms.manifest.inputs.push_back(f.val);
    if (!f.grid.empty()) ms.manifest.inputs.push_back(f.grid);
    ms.manifest.config = snapshot_config(cfg.model, cfg.train, cfg.settings);

    const AnnotationLayout layout = parse_layout(f.layout);
    Scene scene = parse_annotations_file(f.data, layout);
    auto windows = build_windows(scene, f.t_obs, f.t_pred,
                                 f.stride > 0 ? std::optional<int>(f.stride)
                                              : std::nullopt);
    if (windows.empty()) throw DataError("no usable training windows in " + f.data);
    std::vector<SceneWindow> val_windows;
    if (!f.val.empty()) {
        val_windows = build_windows(parse_annotations_file(f.val, layout), f.t_obs,
                                    f.t_pred,
                                    f.stride > 0 ? std::optional<int>(f.stride)
                                                 : std::nullopt);
    }

    std::optional<GlobalGrid> grid;
    if (cfg.settings.belief_conditioning) {
        if (f.grid.empty()) {
            throw ConfigError("belief conditioning is on; pass --grid or --belief off");
        }
        grid = load_grid_file(f.grid);
        if (grid->geometry.local_side != cfg.model.local_side) {
            throw ConfigError("grid local_side disagrees with model local_side");
        }
    }

    ParamStore params =
        init_model_params(cfg.model, derive_seed(cfg.train.seed, 0x1717ULL));
    std::ofstream log;
    if (!f.log.empty()) {
        log.open(f.log);
        if (!log) throw DataError("cannot write log: " + f.log);
    }

    const std::string best_path = f.out + ".best";
    auto on_best = [&](const ParamStore& best, int /*epoch*/) {
        save_checkpoint(best_path, cfg.model, cfg.settings, best);
    };
    FitResult result =
        fit(windows, val_windows, grid ? &*grid : nullptr, params, cfg.model,
            cfg.settings, cfg.train, f.log.empty() ? nullptr : &log,
            val_windows.empty() ? std::function<void(const ParamStore&, int)>{} : on_best);

    save_checkpoint(f.out, cfg.model, cfg.settings, params);
    ms.add_output(f.out);
    if (!f.log.empty()) {
        log.close();
        ms.add_output(f.log);
    }
    if (!val_windows.empty() && result.best_val_epoch >= 0) ms.add_output(best_path);
    ms.finish();

    const LossBreakdown& last = result.history.back().mean_loss;
    std::cout << "trained " << cfg.train.epochs << " epochs on " << windows.size()
              << " windows; final total=" << last.total << " nll=" << last.nll
              << " kl=" << last.kl_latent << " belief=" << last.kl_belief << "\n";
    if (result.best_val_epoch >= 0) {
        std::cout << "best validation total=" << result.best_val_loss << " at epoch "
                  << result.best_val_epoch << " -> " << best_path << "\n";
    }
    return 0;
}

int cmd_predict(const ModelRunFlags& run, int k, int steps, const std::string& mode,
                const std::string& out_path) {
    auto loaded = run.load();
    ManifestScope ms("predict", out_path);
    ms.manifest.seed = run.seed;
    ms.manifest.inputs = {run.data, run.checkpoint};
    if (!run.grid.empty()) ms.manifest.inputs.push_back(run.grid);
    ms.manifest.config = {{"k", std::to_string(k)},
                          {"steps", std::to_string(steps)},
                          {"mode", mode}};

    RunContext ctx{loaded.ckpt.config, loaded.ckpt.settings,
                   loaded.grid ? &*loaded.grid : nullptr, false};
    const GenerateMode gen_mode =
        mode == "mean" ? GenerateMode::mean : GenerateMode::sample;

    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);
    out << "# window\tsample\tped\tstep\tx\ty\n";
    for (std::size_t i = 0; i < loaded.windows.size(); ++i) {
        auto samples = rollout(loaded.ckpt.params, ctx, loaded.windows[i], k,
                               derive_seed(run.seed, i), gen_mode, steps);
        write_predictions(out, i, loaded.windows[i].ped_ids, samples);
    }
    out.close();
    ms.add_output(out_path);
    ms.finish();
    std::cout << "predicted " << loaded.windows.size() << " windows x " << k
              << " samples -> " << out_path << "\n";
    return 0;
}

int cmd_evaluate(const ModelRunFlags& run, int k, double threshold, int threads,
                 const std::string& per_window_path, bool steering, int map_samples) {
    auto loaded = run.load();
    ManifestScope ms("evaluate", per_window_path);
    ms.manifest.seed = run.seed;
    ms.manifest.inputs = {run.data, run.checkpoint};
    if (!run.grid.empty()) ms.manifest.inputs.push_back(run.grid);
    ms.manifest.config = {{"k", std::to_string(k)},
                          {"collision_threshold", std::to_string(threshold)}};

    RunContext ctx{loaded.ckpt.config, loaded.ckpt.settings,
                   loaded.grid ? &*loaded.grid : nullptr, false};
    EvaluateOptions opts;
    opts.k = k;
    opts.collision_threshold = threshold;
    opts.seed = run.seed;
    opts.threads = threads;

    std::vector<WindowMetrics> rows;
    MetricsReport r = evaluate(loaded.windows, ctx, loaded.ckpt.params, opts, &rows);

    std::cout << "windows:   " << r.n_windows << " (K=" << r.k << ")\n";
    std::cout << "topk_ade:  " << r.topk_ade << "\n";
    std::cout << "topk_fde:  " << r.topk_fde << "\n";
    std::cout << "avg_nll:   " << r.avg_nll << "\n";
    std::cout << "col1_pct:  " << r.col1_pct << "\n";
    std::cout << "col2_pct:  " << r.col2_pct << "\n";
    std::cout << "RESULT topk_ade=" << r.topk_ade << " topk_fde=" << r.topk_fde
              << " avg_nll=" << r.avg_nll << " col1_pct=" << r.col1_pct
              << " col2_pct=" << r.col2_pct << " k=" << r.k
              << " n_windows=" << r.n_windows << "\n";
    if (steering) {
        if (!loaded.grid) throw ConfigError("--steering requires --grid");
        double score = belief_steering_score(loaded.windows, ctx, loaded.ckpt.params,
                                             map_samples, run.seed);
        std::cout << "steering_kl: " << score << "\n";
    }

    if (!per_window_path.empty()) {
        std::ofstream pw(per_window_path);
        if (!pw) throw DataError("cannot write " + per_window_path);
        pw << "window_id,topk_ade,topk_fde,nll,col1,col2\n";
        pw.precision(12);
        for (const auto& m : rows) {
            pw << m.window_id << ',' << m.topk_ade << ',' << m.topk_fde << ',' << m.nll
               << ',' << (m.col1 ? 1 : 0) << ',' << (m.col2 ? 1 : 0) << '\n';
        }
        pw.close();
        ms.add_output(per_window_path);
    }
    ms.finish();
    return 0;
}

int cmd_plot_heatmap(const ModelRunFlags& run, int k, int steps, int resolution,
                     const std::string& bounds_spec, const std::string& out_prefix) {
    auto loaded = run.load();
    ManifestScope ms("plot-heatmap", out_prefix);
    ms.manifest.seed = run.seed;
    ms.manifest.inputs = {run.data, run.checkpoint};
    if (!run.grid.empty()) ms.manifest.inputs.push_back(run.grid);
    ms.manifest.config = {{"k", std::to_string(k)},
                          {"resolution", std::to_string(resolution)},
                          {"steps", std::to_string(steps)}};

    RunContext ctx{loaded.ckpt.config, loaded.ckpt.settings,
                   loaded.grid ? &*loaded.grid : nullptr, false};
    std::vector<PosSeq> pooled;
    for (std::size_t i = 0; i < loaded.windows.size(); ++i) {
        auto samples = rollout(loaded.ckpt.params, ctx, loaded.windows[i], k,
                               derive_seed(run.seed, i), GenerateMode::sample, steps);
        pooled.insert(pooled.end(), samples.begin(), samples.end());
    }

    double x_min, y_min, x_max, y_max;
    if (!bounds_spec.empty()) {
        std::istringstream bs(bounds_spec);
        char c;
        if (!(bs >> x_min >> c >> y_min >> c >> x_max >> c >> y_max)) {
            throw ConfigError("--bounds: expected xmin,ymin,xmax,ymax");
        }
    } else {
        x_min = y_min = std::numeric_limits<double>::infinity();
        x_max = y_max = -std::numeric_limits<double>::infinity();
        for (const auto& sample : pooled) {
            for (const auto& step : sample) {
                x_min = std::min(x_min, step.col(0).minCoeff());
                x_max = std::max(x_max, step.col(0).maxCoeff());
                y_min = std::min(y_min, step.col(1).minCoeff());
                y_max = std::max(y_max, step.col(1).maxCoeff());
            }
        }
        const double pad_x = 0.05 * std::max(1e-9, x_max - x_min);
        const double pad_y = 0.05 * std::max(1e-9, y_max - y_min);
        x_min -= pad_x;
        x_max += pad_x;
        y_min -= pad_y;
        y_max += pad_y;
    }

    HeatmapGrid grid = plot_heatmap(pooled, x_min, y_min, x_max, y_max, resolution);
    const std::string csv_path = out_prefix + ".csv";
    const std::string pgm_path = out_prefix + ".pgm";
    {
        std::ofstream csv(csv_path);
        if (!csv) throw DataError("cannot write " + csv_path);
        save_heatmap_csv(csv, grid);
    }
    {
        std::ofstream pgm(pgm_path);
        if (!pgm) throw DataError("cannot write " + pgm_path);
        pgm << render_pgm(grid);
    }
    ms.add_output(csv_path);
    ms.add_output(pgm_path);
    ms.finish();
    std::cout << "heatmap " << resolution << "x" << resolution << " -> " << csv_path
              << ", " << pgm_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multifutur: multi-future pedestrian trajectory forecaster"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene file");
    std::string sy_kind;
    int sy_peds = 1, sy_windows = 8, sy_tobs = 8, sy_tpred = 12;
    double sy_noise = 0.0;
    std::uint64_t sy_seed = 0;
    std::string sy_out;
    synth->add_option("--kind", sy_kind, "linear | y_fork | t_junction")->required();
    synth->add_option("--peds", sy_peds, "pedestrians per window");
    synth->add_option("--windows", sy_windows, "number of windows");
    synth->add_option("--noise", sy_noise, "coordinate noise std");
    synth->add_option("--seed", sy_seed, "rng seed");
    synth->add_option("--t-obs", sy_tobs, "observed steps");
    synth->add_option("--t-pred", sy_tpred, "predicted steps");
    synth->add_option("--out", sy_out, "output annotation file")->required();

    // build-maps
    auto* maps = app.add_subcommand("build-maps", "build the belief-map grid");
    std::string bm_data, bm_out, bm_layout;
    int bm_local = 5;
    bool bm_per_axis = false;
    maps->add_option("--data", bm_data, "annotation file")->required();
    maps->add_option("--out", bm_out, "grid file")->required();
    maps->add_option("--local-side", bm_local, "L, local map side (odd)");
    maps->add_flag("--per-axis", bm_per_axis, "per-axis grid coarse statistics");
    maps->add_option("--layout", bm_layout, "column order, e.g. frame,ped,x,y");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    TrainFlags tf;
    train->add_option("--data", tf.data, "training annotations")->required();
    train->add_option("--val", tf.val, "validation annotations");
    train->add_option("--grid", tf.grid, "belief-map grid file");
    train->add_option("--config", tf.config, "key = value config file");
    train->add_option("--out", tf.out, "checkpoint output")->required();
    train->add_option("--log", tf.log, "CSV training log");
    train->add_option("--layout", tf.layout, "annotation column order");
    train->add_option("--t-obs", tf.t_obs, "observed steps");
    train->add_option("--t-pred", tf.t_pred, "predicted steps");
    train->add_option("--stride", tf.stride, "window stride");
    train->add_option("--lr", tf.lr, "learning rate");
    train->add_option("--batch-size", tf.batch_size, "windows per batch");
    train->add_option("--epochs", tf.epochs, "training epochs");
    train->add_option("--warmup", tf.warmup, "KL warm-up epochs");
    train->add_option("--belief-weight", tf.belief_weight, "belief KL weight k");
    train->add_option("--grad-clip", tf.grad_clip, "global grad-norm clip");
    train->add_option("--map-samples", tf.map_samples, "candidate-map samples n");
    train->add_option("--seed", tf.seed, "rng seed");
    train->add_option("--init", tf.init, "zero | learned | absolute");
    train->add_option("--adjacency", tf.adjacency, "similarity | knn | ones");
    train->add_option("--sigma", tf.sigma, "similarity kernel width");
    train->add_option("--knn-k", tf.knn_k, "kNN neighbour count");
    train->add_option("--belief", tf.belief, "on | off")
        ->check(CLI::IsMember({"on", "off"}));

    // predict
    auto* predict = app.add_subcommand("predict", "roll out futures to a file");
    ModelRunFlags pf;
    pf.attach(predict);
    int pr_k = 1, pr_steps = 0;
    std::string pr_mode = "sample", pr_out;
    predict->add_option("--k", pr_k, "samples per window");
    predict->add_option("--steps", pr_steps, "generation horizon (default t_pred)");
    predict->add_option("--mode", pr_mode, "sample | mean")
        ->check(CLI::IsMember({"sample", "mean"}));
    predict->add_option("--out", pr_out, "predictions file")->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "compute the metric report");
    ModelRunFlags ef;
    ef.attach(eval);
    int ev_k = 20, ev_threads = 0, ev_map_samples = 100;
    double ev_threshold = 0.2;
    std::string ev_per_window;
    bool ev_steering = false;
    eval->add_option("--k", ev_k, "samples per window");
    eval->add_option("--collision-threshold", ev_threshold, "collision radius");
    eval->add_option("--threads", ev_threads, "worker threads (0 = auto)");
    eval->add_option("--per-window", ev_per_window, "per-window CSV dump");
    eval->add_flag("--steering", ev_steering, "also report the belief steering KL");
    eval->add_option("--map-samples", ev_map_samples, "samples for --steering");

    // plot-heatmap
    auto* heat = app.add_subcommand("plot-heatmap", "rasterize sampled futures");
    ModelRunFlags hf;
    hf.attach(heat);
    int hm_k = 20, hm_steps = 0, hm_res = 100;
    std::string hm_bounds, hm_out;
    heat->add_option("--k", hm_k, "samples per window");
    heat->add_option("--steps", hm_steps, "generation horizon (default t_pred)");
    heat->add_option("--res", hm_res, "cells per axis");
    heat->add_option("--bounds", hm_bounds, "xmin,ymin,xmax,ymax (default: data bbox)");
    heat->add_option("--out", hm_out, "output prefix (.csv and .pgm)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) {
            return cmd_synth(sy_kind, sy_peds, sy_windows, sy_noise, sy_seed, sy_tobs,
                             sy_tpred, sy_out);
        }
        if (maps->parsed()) {
            return cmd_build_maps(bm_data, bm_out, bm_local, bm_per_axis, bm_layout);
        }
        if (train->parsed()) return cmd_train(tf);
        if (predict->parsed()) {
            return cmd_predict(pf, pr_k, pr_steps, pr_mode, pr_out);
        }
        if (eval->parsed()) {
            return cmd_evaluate(ef, ev_k, ev_threshold, ev_threads, ev_per_window,
                                ev_steering, ev_map_samples);
        }
        if (heat->parsed()) {
            return cmd_plot_heatmap(hf, hm_k, hm_steps, hm_res, hm_bounds, hm_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const IntegrityError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
