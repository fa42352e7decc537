#pragma once

// The conditional variational recurrent model: feature extractors, belief-
// conditioned prior/encoder/decoder Gaussian heads, GRU recurrence and the
// attentive refinement loop, plus multi-sample rollout.
//
// Every forward path runs on an autodiff tape; inference simply never calls
// backward. One tape spans a whole window so backpropagation-through-time
// falls out of reverse node order.

#include "mf/belief_maps.hpp"
#include "mf/data_model.hpp"
#include "mf/interaction_graph.hpp"
#include "mf/model_params.hpp"

#include <random>

namespace mf {

struct GaussianParams {
    Mat mean;     // P x dim
    Mat log_var;  // P x dim
};

struct GaussianVars {
    ad::Var mean;
    ad::Var log_var;
};

// --- tape-level building blocks ---

ad::Var linear_layer(BoundParams& params, const std::string& base, ad::Var x);
ad::Var feature_x(BoundParams& params, ad::Var x, const ModelConfig& cfg);
ad::Var feature_b(BoundParams& params, ad::Var b, const ModelConfig& cfg);
ad::Var feature_z(BoundParams& params, ad::Var z, const ModelConfig& cfg);

GaussianVars prior_step(BoundParams& params, ad::Var h_prev, ad::Var b_prev,
                        const ModelConfig& cfg);
GaussianVars encoder_step(BoundParams& params, ad::Var x_t, ad::Var h_prev, ad::Var b_prev,
                          const ModelConfig& cfg);
GaussianVars decoder_step(BoundParams& params, ad::Var z_t, ad::Var h_prev, ad::Var b_prev,
                          const ModelConfig& cfg);
ad::Var reparameterize(GaussianVars g, const Mat& noise);
ad::Var recurrence_step(BoundParams& params, ad::Var x_t, ad::Var z_t, ad::Var h_prev,
                        const ModelConfig& cfg);

// Negative log-likelihood of x under a diagonal Gaussian, summed over
// pedestrians and dims; KL(q || p) likewise. Scalar (1 x 1) outputs.
ad::Var gaussian_nll_var(ad::Tape& tape, const Mat& x, GaussianVars g);
ad::Var gaussian_kl_var(GaussianVars q, GaussianVars p);

// Differentiable candidate-map KL. The candidate map follows the generative
// path: one displacement draw per decoder row, rows p*n .. p*n+n-1 pooling
// into pedestrian p's map (each row typically carries its own prior-z draw).
// Accumulates the heat kernel over each pedestrian's neighbourhood centres,
// normalizes, and returns sum_p KL(gt_p || candidate_p).
//   decoder:  (P * n) x 2 per-sample Gaussians
//   noise:    (P * n) x 2 standard normal draws
//   pos_prev: P x 2 previous absolute positions
//   centres:  per ped, L^2 x 2 neighbourhood centres of pos_prev's bin
//   gt_maps:  P x L^2 ground-truth belief maps
ad::Var belief_candidate_kl(GaussianVars decoder, const Mat& noise, const Mat& pos_prev,
                            const std::vector<Mat>& centres, const Mat& gt_maps,
                            Eigen::Index samples_per_ped, double eps = 1e-8);

// --- plain-matrix wrappers (single-step contracts) ---

GaussianParams prior_step_eval(ParamStore& store, const Mat& h_prev, const Mat& b_prev,
                               const ModelConfig& cfg);
GaussianParams encoder_step_eval(ParamStore& store, const Mat& x_t, const Mat& h_prev,
                                 const Mat& b_prev, const ModelConfig& cfg);
GaussianParams decoder_step_eval(ParamStore& store, const Mat& z_t, const Mat& h_prev,
                                 const Mat& b_prev, const ModelConfig& cfg);
Mat reparameterize(const GaussianParams& g, const Mat& noise);
Mat recurrence_step_eval(ParamStore& store, const Mat& x_t, const Mat& z_t,
                         const Mat& h_prev, const ModelConfig& cfg);

// --- windows, batching, stepping ---

// Several scenes merged for block-diagonal batching; block_sizes records the
// per-scene pedestrian counts.
struct BatchWindow {
    PosSeq abs;   // T entries of P_total x 2
    PosSeq disp;  // T entries of P_total x 2
    std::vector<Eigen::Index> block_sizes;
    int t_obs = 8;
    int t_pred = 12;

    int total_steps() const { return t_obs + t_pred; }
    Eigen::Index num_peds() const { return abs.empty() ? 0 : abs.front().rows(); }
};

BatchWindow merge_windows(const std::vector<const SceneWindow*>& windows);
BatchWindow as_batch(const SceneWindow& window);

struct RunContext {
    const ModelConfig& cfg;
    InferenceSettings settings;
    const GlobalGrid* grid = nullptr;  // required when belief conditioning is on
    bool training = false;             // batch-norm mode
};

// Belief-map rows for each pedestrian at the given positions (uniform when
// conditioning is off).
Mat gather_belief_rows(const RunContext& ctx, const Mat& positions);

// Block-diagonal adjacency from current positions.
AdjacencyMatrix batch_adjacency(const RunContext& ctx, const Mat& positions,
                                const std::vector<Eigen::Index>& block_sizes);

ad::Var init_hidden(BoundParams& params, const RunContext& ctx, const Mat& first_positions);
Mat init_hidden_eval(ParamStore& store, const ModelConfig& cfg,
                     const InferenceSettings& settings, const Mat& first_positions);

// Per-window loss pieces, each a scalar averaged over pedestrians and summed
// over steps t = 1..T-1 (step 0 has no previous position and a pinned zero
// displacement). belief is zero when map_samples == 0 or conditioning is off.
struct LossVars {
    ad::Var nll;
    ad::Var kl_latent;
    ad::Var belief;
};

LossVars build_window_loss(BoundParams& params, const RunContext& ctx,
                           const BatchWindow& batch, std::mt19937_64& noise_rng,
                           int map_samples);

// --- inference stepping and rollout ---

struct VrnnState {
    Mat h;          // P x H, refined
    Mat positions;  // P x 2, absolute, at the state's current step
};

struct StepLoss {
    double nll = 0.0;
    double kl_latent = 0.0;
};

enum class GenerateMode { sample, mean };

// Advances the state with the ground-truth displacement x_t; z is drawn from
// the encoder. Returns the per-step loss terms (summed over pedestrians).
StepLoss observe_step(ParamStore& store, const RunContext& ctx, VrnnState& state,
                      const Mat& x_t, std::mt19937_64& rng);

// Draws z from the prior, emits a displacement (sampled or decoder mean),
// advances recurrence and refinement, returns the new absolute positions.
Mat generate_step(ParamStore& store, const RunContext& ctx, VrnnState& state,
                  std::mt19937_64& rng, GenerateMode mode);

// K independent futures. Each sample re-runs the observation prefix with
// fresh noise, then generates `steps` displacements (default t_pred).
// Output: samples[k][t] is P x 2 absolute positions.
std::vector<PosSeq> rollout(ParamStore& store, const RunContext& ctx,
                            const SceneWindow& window, int num_samples,
                            std::uint64_t seed, GenerateMode mode = GenerateMode::sample,
                            int steps = -1);

}  // namespace mf
