#pragma once

// Composite loss assembly (ELBO + weighted belief-map KL), the KL warm-up
// schedule, Adam with global-norm gradient clipping, and the epoch loop.

#include "mf/vrnn_core.hpp"

#include <functional>
#include <limits>
#include <iosfwd>
#include <map>

namespace mf {

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 16;
    int epochs = 500;
    int warmup_epochs = 50;     // N
    double belief_weight = 100.0;  // k
    double grad_clip = 10.0;
    int map_samples = 100;  // n displacement draws per candidate map
    InitMode init_mode = InitMode::absolute;
    std::uint64_t seed = 0;
    // Adam moment coefficients, conventional defaults.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct LossBreakdown {
    double nll = 0.0;
    double kl_latent = 0.0;
    double kl_belief = 0.0;
    double total = 0.0;
    double kl_weight = 0.0;
};

// --- loss pieces (plain-matrix contracts) ---

double gaussian_nll(const Mat& x, const GaussianParams& g);
double gaussian_kl(const GaussianParams& q, const GaussianParams& p);
double kl_warmup_weight(int epoch, int warmup_epochs);

// Candidate-map KL for one window step: draws `n` displacement samples from
// the decoder distribution, builds the candidate map around the previous
// position's bin, and compares to the grid's map there.
double belief_kl_term(const SceneWindow& window, int step, const GaussianParams& decoder,
                      const GlobalGrid& grid, int n, std::mt19937_64& rng);

LossBreakdown total_loss(double nll_sum, double kl_latent_sum, double kl_belief_sum,
                         int epoch, const TrainConfig& cfg);

// --- optimization ---

struct AdamState {
    std::vector<Mat> m;
    std::vector<Mat> v;
    long step = 0;
};

AdamState make_adam_state(const ParamStore& params);
void adam_update(ParamStore& params, AdamState& state, const TrainConfig& cfg);

// Clips the global L2 norm of all trainable grads to `max_norm`; returns the
// pre-clip norm.
double clip_grad_norm(ParamStore& params, double max_norm);

// --- epoch loop ---

struct EpochMetrics {
    LossBreakdown mean_loss;
    double wall_time_s = 0.0;
    int batches = 0;
};

// One pass over the dataset: shuffles windows, batches them block-diagonally,
// backpropagates the composite loss, clips and applies Adam. `epoch_rng`
// drives both the shuffle and the per-step sampling noise.
EpochMetrics train_epoch(const std::vector<SceneWindow>& windows, const GlobalGrid* grid,
                         ParamStore& params, AdamState& adam, const ModelConfig& mcfg,
                         const InferenceSettings& settings, const TrainConfig& tcfg,
                         int epoch, std::mt19937_64& epoch_rng);

struct FitResult {
    std::vector<EpochMetrics> history;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int best_val_epoch = -1;
};

// Full training driver. Optional validation windows enable best-checkpoint
// tracking via `on_best`; `log` (when set) receives one CSV row per epoch.
FitResult fit(const std::vector<SceneWindow>& train_windows,
              const std::vector<SceneWindow>& val_windows, const GlobalGrid* grid,
              ParamStore& params, const ModelConfig& mcfg,
              const InferenceSettings& settings, const TrainConfig& tcfg,
              std::ostream* log = nullptr,
              const std::function<void(const ParamStore&, int)>& on_best = {});

// Validation loss (forward only, no belief sampling noise in the score other
// than the seeded draws; deterministic under the given seed).
LossBreakdown validation_loss(const std::vector<SceneWindow>& windows,
                              const GlobalGrid* grid, ParamStore& params,
                              const ModelConfig& mcfg, const InferenceSettings& settings,
                              const TrainConfig& tcfg, int epoch, std::uint64_t seed);

// --- config files ---

// Flat `key = value` text; '#' starts a comment. Unknown keys are errors.
struct FileConfig {
    ModelConfig model;
    TrainConfig train;
    InferenceSettings settings;
};

FileConfig parse_config(std::istream& in);
FileConfig parse_config_file(const std::string& path);
void apply_config_entry(FileConfig& cfg, const std::string& key, const std::string& value);

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, int epoch, const EpochMetrics& metrics);

}  // namespace mf
