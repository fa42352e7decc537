#include "mf/interaction_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mf {

AdjacencyMatrix build_adjacency(const Mat& positions, AdjacencyMode mode,
                                const AdjacencyParams& params) {
    const Eigen::Index P = positions.rows();
    if (P < 1) throw ConfigError("build_adjacency: need at least one pedestrian");
    AdjacencyMatrix adj;
    adj.mode = mode;
    adj.weights = Mat::Zero(P, P);

    switch (mode) {
        case AdjacencyMode::similarity: {
            if (params.sigma <= 0.0) {
                throw ConfigError("build_adjacency: sigma must be positive");
            }
            const double denom = 2.0 * params.sigma * params.sigma;
            for (Eigen::Index i = 0; i < P; ++i) {
                for (Eigen::Index j = 0; j < P; ++j) {
                    const double d = (positions.row(i) - positions.row(j)).norm();
                    adj.weights(i, j) = std::exp(-d / denom);
                }
            }
            break;
        }
        case AdjacencyMode::knn: {
            if (params.k < 1) throw ConfigError("build_adjacency: k must be >= 1");
            for (Eigen::Index i = 0; i < P; ++i) {
                adj.weights(i, i) = 1.0;
                std::vector<Eigen::Index> others;
                for (Eigen::Index j = 0; j < P; ++j) {
                    if (j != i) others.push_back(j);
                }
                std::stable_sort(others.begin(), others.end(),
                                 [&](Eigen::Index a, Eigen::Index b) {
                                     const double da =
                                         (positions.row(i) - positions.row(a)).norm();
                                     const double db =
                                         (positions.row(i) - positions.row(b)).norm();
                                     if (da != db) return da < db;
                                     return a < b;  // ties: lower index wins
                                 });
                const std::size_t keep =
                    std::min<std::size_t>(others.size(), static_cast<std::size_t>(params.k));
                for (std::size_t r = 0; r < keep; ++r) adj.weights(i, others[r]) = 1.0;
            }
            break;
        }
        case AdjacencyMode::ones:
            adj.weights.setOnes();
            break;
    }
    return adj;
}

AdjacencyMatrix block_diagonal(const std::vector<AdjacencyMatrix>& blocks) {
    if (blocks.empty()) throw ConfigError("block_diagonal: empty block list");
    Eigen::Index total = 0;
    for (const auto& b : blocks) total += b.size();
    AdjacencyMatrix out;
    out.mode = blocks.front().mode;
    out.weights = Mat::Zero(total, total);
    Eigen::Index off = 0;
    for (const auto& b : blocks) {
        if (b.mode != out.mode) throw ConfigError("block_diagonal: mixed adjacency modes");
        out.weights.block(off, off, b.size(), b.size()) = b.weights;
        off += b.size();
    }
    return out;
}

Eigen::ArrayXXd adjacency_mask(const AdjacencyMatrix& adj, double threshold) {
    Eigen::ArrayXXd mask =
        (adj.weights.array() > threshold)
            .select(Eigen::ArrayXXd::Ones(adj.weights.rows(), adj.weights.cols()),
                    Eigen::ArrayXXd::Zero(adj.weights.rows(), adj.weights.cols()));
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, i) = 1.0;  // self-loops
    return mask;
}

ad::Var gat_forward(BoundParams& params, ad::Var h, const AdjacencyMatrix& adj,
                    const ModelConfig& cfg, bool training, std::vector<Mat>* alphas) {
    if (adj.size() != h.rows()) {
        throw NumericError("gat_forward: adjacency and hidden state disagree on P");
    }
    const Eigen::ArrayXXd mask = adjacency_mask(adj, cfg.adjacency_threshold);
    if (alphas) alphas->clear();

    ad::Var concat;  // heads concatenated, P x (heads * head_dim)
    for (int head = 0; head < cfg.heads; ++head) {
        const std::string base = "gat.head" + std::to_string(head);
        ad::Var g = ad::matmul_nt(h, params[base + ".w"]);  // P x D
        ad::Var logits_src = ad::matmul(g, params[base + ".a_src"]);  // P x 1
        ad::Var logits_dst = ad::matmul(g, params[base + ".a_dst"]);  // P x 1
        // e_ij = LeakyReLU(a_src . g_i + a_dst . g_j)
        ad::Var e = ad::leaky_relu(ad::pairwise_sum(logits_src, logits_dst),
                                   cfg.gat_leaky_slope);
        ad::Var alpha = ad::masked_softmax_rows(e, mask);
        if (alphas) alphas->push_back(alpha.value());
        ad::Var mixed = ad::elu(ad::matmul(alpha, g));  // P x D
        concat = (head == 0) ? mixed : ad::concat_cols(concat, mixed);
    }

    ad::Var projected =
        ad::add_rowvec(ad::matmul_nt(concat, params["gat.out.w"]), params["gat.out.b"]);
    ad::BatchNormBuffers buffers{&params.raw("gat.bn.run_mean"),
                                 &params.raw("gat.bn.run_var")};
    ad::Var normed = ad::batchnorm(projected, params["gat.bn.gamma"],
                                   params["gat.bn.beta"], buffers, training,
                                   cfg.bn_momentum, cfg.bn_eps);
    return ad::vtanh(normed);
}

ad::Var refine_hidden(BoundParams& params, ad::Var h, ad::Var h_hat) {
    ad::Var cat = ad::concat_cols(h, h_hat);
    return ad::add_rowvec(ad::matmul_nt(cat, params["refine.w"]), params["refine.b"]);
}

Mat gat_forward_eval(ParamStore& store, const Mat& h, const AdjacencyMatrix& adj,
                     const ModelConfig& cfg, bool training, std::vector<Mat>* alphas) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    return gat_forward(bound, tape.constant(h), adj, cfg, training, alphas).value();
}

Mat refine_hidden_eval(ParamStore& store, const Mat& h, const Mat& h_hat) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    return refine_hidden(bound, tape.constant(h), tape.constant(h_hat)).value();
}

}  // namespace mf
