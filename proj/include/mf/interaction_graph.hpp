#pragma once

// Pairwise interaction adjacency and the attentive hidden-state refinement.
//
// Adjacency gates neighbourhood membership only (w_ij above a small
// threshold puts j in N_i); the attention logits themselves are fully
// learned. Self-loops are always part of the mask so isolated pedestrians
// keep a well-defined softmax.

#include "mf/autodiff.hpp"
#include "mf/model_params.hpp"

namespace mf {

struct AdjacencyMatrix {
    Mat weights;  // P x P, nonnegative
    AdjacencyMode mode = AdjacencyMode::similarity;

    Eigen::Index size() const { return weights.rows(); }
};

struct AdjacencyParams {
    double sigma = 1.0;  // similarity: exp(-d / (2 sigma^2))
    int k = 3;           // knn neighbour count
};

AdjacencyMatrix build_adjacency(const Mat& positions /* P x 2 */, AdjacencyMode mode,
                                const AdjacencyParams& params = {});

AdjacencyMatrix block_diagonal(const std::vector<AdjacencyMatrix>& blocks);

// Binary neighbourhood mask: w_ij > threshold, diagonal forced on.
Eigen::ArrayXXd adjacency_mask(const AdjacencyMatrix& adj, double threshold = 1e-6);

// Multi-head graph attention over hidden states: per-head masked softmax
// attention, ELU aggregation, head concat, linear map back to hidden_dim,
// per-feature normalization, tanh. Returns refined features h_hat (P x H).
// `alphas`, when given, receives one P x P attention matrix per head.
ad::Var gat_forward(BoundParams& params, ad::Var h, const AdjacencyMatrix& adj,
                    const ModelConfig& cfg, bool training,
                    std::vector<Mat>* alphas = nullptr);

// h' = Linear([h || h_hat]); replaces the recurrent state for the next step.
ad::Var refine_hidden(BoundParams& params, ad::Var h, ad::Var h_hat);

// Plain-matrix wrappers (inference path; `training` selects batch-norm mode).
Mat gat_forward_eval(ParamStore& store, const Mat& h, const AdjacencyMatrix& adj,
                     const ModelConfig& cfg, bool training = false,
                     std::vector<Mat>* alphas = nullptr);
Mat refine_hidden_eval(ParamStore& store, const Mat& h, const Mat& h_hat);

}  // namespace mf
