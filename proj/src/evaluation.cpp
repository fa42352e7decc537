#include "mf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace mf {

namespace {

void check_shapes(const PosSeq& pred, const PosSeq& gt) {
    if (pred.size() != gt.size() || pred.empty()) {
        throw NumericError("metrics: prediction/ground-truth length mismatch");
    }
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t].rows() != gt[t].rows() || pred[t].cols() != 2 || gt[t].cols() != 2) {
            throw NumericError("metrics: shape mismatch at step " + std::to_string(t));
        }
    }
}

double ped_ade(const std::vector<PosSeq>& samples, int k, Eigen::Index p,
               const PosSeq& gt) {
    double acc = 0.0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
        acc += (samples[k][t].row(p) - gt[t].row(p)).norm();
    }
    return acc / static_cast<double>(gt.size());
}

}  // namespace

double ade(const PosSeq& pred, const PosSeq& gt) {
    check_shapes(pred, gt);
    const Eigen::Index P = pred[0].rows();
    double acc = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        for (Eigen::Index p = 0; p < P; ++p) {
            acc += (pred[t].row(p) - gt[t].row(p)).norm();
        }
    }
    return acc / (static_cast<double>(pred.size()) * static_cast<double>(P));
}

double fde(const PosSeq& pred, const PosSeq& gt) {
    check_shapes(pred, gt);
    const Mat& pl = pred.back();
    const Mat& gl = gt.back();
    double acc = 0.0;
    for (Eigen::Index p = 0; p < pl.rows(); ++p) {
        acc += (pl.row(p) - gl.row(p)).norm();
    }
    return acc / static_cast<double>(pl.rows());
}

TopkResult topk_metrics(const std::vector<PosSeq>& samples, const PosSeq& gt) {
    if (samples.empty()) throw DataError("topk_metrics: no samples");
    TopkResult r;
    r.topk_ade = std::numeric_limits<double>::infinity();
    r.topk_fde = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const double a = ade(samples[k], gt);
        const double f = fde(samples[k], gt);
        if (a < r.topk_ade) {
            r.topk_ade = a;
            r.best_ade_index = static_cast<int>(k);
        }
        if (f < r.topk_fde) {
            r.topk_fde = f;
            r.best_fde_index = static_cast<int>(k);
        }
    }
    return r;
}

double avg_nll(const std::vector<PosSeq>& samples, const PosSeq& gt) {
    const int K = static_cast<int>(samples.size());
    if (K < 2) throw DataError("avg_nll: need at least 2 samples to fit a distribution");
    check_shapes(samples[0], gt);
    const Eigen::Index P = gt[0].rows();
    const double ridge = 1e-4;
    double acc = 0.0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
        for (Eigen::Index p = 0; p < P; ++p) {
            Vec2 mean = Vec2::Zero();
            for (int k = 0; k < K; ++k) mean += samples[k][t].row(p).transpose();
            mean /= K;
            Eigen::Matrix2d cov = ridge * Eigen::Matrix2d::Identity();
            for (int k = 0; k < K; ++k) {
                Vec2 d = samples[k][t].row(p).transpose() - mean;
                cov += (d * d.transpose()) / K;
            }
            const double det = cov.determinant();
            Vec2 diff = gt[t].row(p).transpose() - mean;
            const double mahal = diff.dot(cov.inverse() * diff);
            acc += -std::log(2.0 * M_PI) - 0.5 * std::log(det) - 0.5 * mahal;
        }
    }
    return acc / (static_cast<double>(gt.size()) * static_cast<double>(P));
}

CollisionFlags collision_flags(const std::vector<PosSeq>& samples, const PosSeq& gt,
                               double threshold) {
    CollisionFlags flags;
    if (samples.empty()) throw DataError("collision_flags: no samples");
    check_shapes(samples[0], gt);
    const Eigen::Index P = gt[0].rows();
    if (P < 2) return flags;

    // per-pedestrian best sample by individual ADE
    std::vector<int> best(P, 0);
    for (Eigen::Index p = 0; p < P; ++p) {
        double lowest = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < samples.size(); ++k) {
            const double a = ped_ade(samples, static_cast<int>(k), p, gt);
            if (a < lowest) {
                lowest = a;
                best[p] = static_cast<int>(k);
            }
        }
    }

    for (std::size_t t = 0; t < gt.size(); ++t) {
        for (Eigen::Index i = 0; i < P; ++i) {
            for (Eigen::Index j = 0; j < P; ++j) {
                if (i == j) continue;
                const auto pi = samples[best[i]][t].row(i);
                if (i < j) {
                    const double d_pred = (pi - samples[best[j]][t].row(j)).norm();
                    if (d_pred < threshold) flags.col1 = true;
                }
                const double d_gt = (pi - gt[t].row(j)).norm();
                if (d_gt < threshold) flags.col2 = true;
            }
        }
    }
    return flags;
}

int resolve_thread_count(int requested) {
    int n = requested > 0 ? requested
                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("MULTIFUTUR_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return std::max(1, n);
}

MetricsReport evaluate(const std::vector<SceneWindow>& windows, const RunContext& ctx,
                       ParamStore& params, const EvaluateOptions& options,
                       std::vector<WindowMetrics>* per_window) {
    if (windows.empty()) throw DataError("evaluate: empty dataset");
    if (options.k < 1) throw ConfigError("evaluate: k must be >= 1");

    std::vector<WindowMetrics> rows(windows.size());
    const int threads = resolve_thread_count(options.threads);

    auto work = [&](std::size_t begin, std::size_t end, ParamStore& local_params) {
        for (std::size_t i = begin; i < end; ++i) {
            RunContext run = ctx;
            run.training = false;
            const SceneWindow& w = windows[i];
            auto samples = rollout(local_params, run, w, options.k,
                                   derive_seed(options.seed, i), options.mode);
            PosSeq gt(w.abs_positions.begin() + w.t_obs, w.abs_positions.end());
            TopkResult tk = topk_metrics(samples, gt);
            WindowMetrics& m = rows[i];
            m.window_id = i;
            m.topk_ade = tk.topk_ade;
            m.topk_fde = tk.topk_fde;
            m.nll = options.k >= 2 ? avg_nll(samples, gt)
                                   : std::numeric_limits<double>::quiet_NaN();
            CollisionFlags cf = collision_flags(samples, gt, options.collision_threshold);
            m.col1 = cf.col1;
            m.col2 = cf.col2;
        }
    };

    if (threads <= 1 || windows.size() <= 1) {
        work(0, windows.size(), params);
    } else {
        // Rollouts only read parameters; give each worker its own copy of the
        // store anyway since batch-norm buffers are written in training mode
        // and eval mode never is -- copies keep this airtight.
        const std::size_t n = windows.size();
        const std::size_t n_workers = std::min<std::size_t>(threads, n);
        std::vector<std::thread> pool;
        std::vector<ParamStore> stores(n_workers, params);
        const std::size_t chunk = (n + n_workers - 1) / n_workers;
        for (std::size_t wkr = 0; wkr < n_workers; ++wkr) {
            const std::size_t b = wkr * chunk;
            const std::size_t e = std::min(n, b + chunk);
            if (b >= e) break;
            pool.emplace_back([&, b, e, wkr]() { work(b, e, stores[wkr]); });
        }
        for (auto& th : pool) th.join();
    }

    MetricsReport report;
    report.k = options.k;
    report.n_windows = static_cast<int>(windows.size());
    int col1 = 0, col2 = 0;
    for (const WindowMetrics& m : rows) {
        report.topk_ade += m.topk_ade;
        report.topk_fde += m.topk_fde;
        report.avg_nll += m.nll;
        col1 += m.col1 ? 1 : 0;
        col2 += m.col2 ? 1 : 0;
    }
    const double inv = 1.0 / static_cast<double>(windows.size());
    report.topk_ade *= inv;
    report.topk_fde *= inv;
    report.avg_nll *= inv;
    report.col1_pct = 100.0 * col1 * inv;
    report.col2_pct = 100.0 * col2 * inv;
    if (per_window != nullptr) *per_window = std::move(rows);
    return report;
}

double belief_steering_score(const std::vector<SceneWindow>& windows,
                             const RunContext& ctx, ParamStore& params, int map_samples,
                             std::uint64_t seed) {
    if (ctx.grid == nullptr) throw ConfigError("belief_steering_score: grid required");
    if (windows.empty()) throw DataError("belief_steering_score: empty dataset");
    if (map_samples < 1) throw ConfigError("belief_steering_score: need samples");

    // Held-out candidate-map quality: along each window, build the model's
    // candidate map at every step from its generative path (position at t-1
    // plus a fresh prior z per displacement draw) and accumulate the KL
    // against the grid's maps. This is the belief term of the window loss,
    // normalized per step.
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t wi = 0; wi < windows.size(); ++wi) {
        RunContext run = ctx;
        run.training = false;
        ad::Tape tape;
        BoundParams bound(tape, params);
        std::mt19937_64 rng(derive_seed(seed, wi));
        BatchWindow batch = as_batch(windows[wi]);
        LossVars lv = build_window_loss(bound, run, batch, rng, map_samples);
        total += lv.belief.value()(0, 0);
        steps += static_cast<std::size_t>(batch.total_steps() - 1);
    }
    return total / static_cast<double>(steps);
}

}  // namespace mf
