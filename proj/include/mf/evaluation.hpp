#pragma once

// TopK displacement metrics, average log-likelihood and collision rates over
// K-sample rollouts, aggregated across windows.

#include "mf/training.hpp"

namespace mf {

struct MetricsReport {
    double topk_ade = 0.0;
    double topk_fde = 0.0;
    double avg_nll = 0.0;  // mean GT log-density, nats (higher is better)
    double col1_pct = 0.0;
    double col2_pct = 0.0;
    int k = 0;
    int n_windows = 0;
};

struct WindowMetrics {
    std::size_t window_id = 0;
    double topk_ade = 0.0;
    double topk_fde = 0.0;
    double nll = 0.0;
    bool col1 = false;
    bool col2 = false;
};

// Mean Euclidean distance over all pedestrians and steps (pred vs gt are
// step-major P x 2 sequences).
double ade(const PosSeq& pred, const PosSeq& gt);
// Mean final-step Euclidean distance over pedestrians.
double fde(const PosSeq& pred, const PosSeq& gt);

struct TopkResult {
    double topk_ade = 0.0;
    double topk_fde = 0.0;
    int best_ade_index = -1;
    int best_fde_index = -1;
};
TopkResult topk_metrics(const std::vector<PosSeq>& samples, const PosSeq& gt);

// Per (pedestrian, step), fits a bivariate Gaussian over the K samples
// (1e-4 ridge on the covariance) and averages the GT log-density.
double avg_nll(const std::vector<PosSeq>& samples, const PosSeq& gt);

// Scene-level collisions from per-pedestrian best-of-K selections.
// Col-I checks best predictions pairwise; Col-II checks each pedestrian's
// best prediction against the others' ground truth.
struct CollisionFlags {
    bool col1 = false;
    bool col2 = false;
};
CollisionFlags collision_flags(const std::vector<PosSeq>& samples, const PosSeq& gt,
                               double threshold);

struct EvaluateOptions {
    int k = 20;
    double collision_threshold = 0.2;
    std::uint64_t seed = 0;
    GenerateMode mode = GenerateMode::sample;
    int threads = 0;  // 0: hardware concurrency capped by MULTIFUTUR_THREADS
};

MetricsReport evaluate(const std::vector<SceneWindow>& windows, const RunContext& ctx,
                       ParamStore& params, const EvaluateOptions& options,
                       std::vector<WindowMetrics>* per_window = nullptr);

// Mean histogram KL between candidate maps generated along the ground-truth
// prefix (z from the prior) and the grid's maps; the steering score used to
// compare belief-KL-trained models.
double belief_steering_score(const std::vector<SceneWindow>& windows,
                             const RunContext& ctx, ParamStore& params, int map_samples,
                             std::uint64_t seed);

// Effective worker count: min(requested or hardware, MULTIFUTUR_THREADS).
int resolve_thread_count(int requested);

}  // namespace mf
