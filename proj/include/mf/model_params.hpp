#pragma once

// Model configuration, the named-parameter store shared by every network
// block, and checkpoint serialization.

#include "mf/autodiff.hpp"
#include "mf/common.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace mf {

struct ModelConfig {
    int input_dim = 2;
    int feature_dim = 64;  // phi_x / phi_b / phi_z output width
    int hidden_dim = 64;   // GRU state and head widths
    int latent_dim = 16;
    int local_side = 5;  // L; belief input width is L^2
    int heads = 4;
    int head_dim = 8;
    double decoder_mean_clip = 10.0;
    double log_var_clip = 10.0;
    double leaky_slope = 0.01;      // feature extractors and heads
    double gat_leaky_slope = 0.2;   // attention logits
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    double adjacency_threshold = 1e-6;  // neighbourhood membership cutoff

    int belief_dim() const { return local_side * local_side; }

    void validate() const;
};

enum class InitMode { zero, learned, absolute };
enum class AdjacencyMode { similarity, knn, ones };

InitMode init_mode_from_string(const std::string& s);
std::string to_string(InitMode m);
AdjacencyMode adjacency_mode_from_string(const std::string& s);
std::string to_string(AdjacencyMode m);

// Settings the model needs at inference time; stored in checkpoints next to
// the architecture so `predict`/`evaluate` can run from the file alone.
struct InferenceSettings {
    InitMode init_mode = InitMode::absolute;
    AdjacencyMode adjacency = AdjacencyMode::similarity;
    double sigma = 1.0;  // similarity kernel width (world units)
    int knn_k = 3;
    bool belief_conditioning = true;  // false feeds uniform maps (A-VRNN style)
};

class ParamStore {
public:
    struct Entry {
        std::string name;
        Mat value;
        Mat grad;
        bool trainable = true;
    };

    Mat& add(const std::string& name, Mat value, bool trainable = true);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Mat& at(const std::string& name);
    const Mat& at(const std::string& name) const;
    Mat& grad(const std::string& name);

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    void zero_grads();
    double grad_norm() const;           // global L2 over trainable entries
    void scale_grads(double s);
    std::size_t num_trainable_scalars() const;

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// All trainable weights per the layer table, plus batchnorm buffers.
ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed);

// Binds store entries to leaf Vars on a tape (one leaf per entry, created on
// first use). harvest_grads() accumulates tape gradients back into the store.
class BoundParams {
public:
    BoundParams(ad::Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

    ad::Var operator[](const std::string& name);
    Mat& raw(const std::string& name) { return store_->at(name); }
    ParamStore& store() { return *store_; }
    ad::Tape& tape() { return *tape_; }

    void harvest_grads();

private:
    ad::Tape* tape_;
    ParamStore* store_;
    std::map<std::string, ad::Var> bound_;
};

// Checkpoint container: architecture + inference settings + named arrays.
struct Checkpoint {
    ModelConfig config;
    InferenceSettings settings;
    ParamStore params;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const InferenceSettings& settings, const ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mf
