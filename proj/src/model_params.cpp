#include "mf/model_params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace mf {

void ModelConfig::validate() const {
    if (input_dim < 1 || feature_dim < 1 || hidden_dim < 1 || latent_dim < 1 ||
        heads < 1 || head_dim < 1) {
        throw ConfigError("model config: all dimensions must be positive");
    }
    if (local_side < 1 || local_side % 2 == 0) {
        throw ConfigError("model config: local_side must be odd and >= 1");
    }
    if (decoder_mean_clip <= 0.0) {
        throw ConfigError("model config: decoder_mean_clip must be positive");
    }
}

InitMode init_mode_from_string(const std::string& s) {
    if (s == "zero") return InitMode::zero;
    if (s == "learned") return InitMode::learned;
    if (s == "absolute") return InitMode::absolute;
    throw ConfigError("unknown init mode: " + s);
}

std::string to_string(InitMode m) {
    switch (m) {
        case InitMode::zero: return "zero";
        case InitMode::learned: return "learned";
        case InitMode::absolute: return "absolute";
    }
    return "?";
}

AdjacencyMode adjacency_mode_from_string(const std::string& s) {
    if (s == "similarity") return AdjacencyMode::similarity;
    if (s == "knn") return AdjacencyMode::knn;
    if (s == "ones") return AdjacencyMode::ones;
    throw ConfigError("unknown adjacency mode: " + s);
}

std::string to_string(AdjacencyMode m) {
    switch (m) {
        case AdjacencyMode::similarity: return "similarity";
        case AdjacencyMode::knn: return "knn";
        case AdjacencyMode::ones: return "ones";
    }
    return "?";
}

Mat& ParamStore::add(const std::string& name, Mat value, bool trainable) {
    if (has(name)) throw ConfigError("duplicate parameter: " + name);
    Entry e;
    e.name = name;
    e.grad = Mat::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back().value;
}

Mat& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].value;
}

const Mat& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].value;
}

Mat& ParamStore::grad(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].grad;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
}

double ParamStore::grad_norm() const {
    double acc = 0.0;
    for (const auto& e : entries_) {
        if (e.trainable) acc += e.grad.squaredNorm();
    }
    return std::sqrt(acc);
}

void ParamStore::scale_grads(double s) {
    for (auto& e : entries_) {
        if (e.trainable) e.grad *= s;
    }
}

std::size_t ParamStore::num_trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable) n += static_cast<std::size_t>(e.value.size());
    }
    return n;
}

namespace {

// PyTorch-style fan-in uniform init for weights and biases.
Mat uniform_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                 Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace

ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore ps;
    std::mt19937_64 rng(seed);

    const int F = cfg.feature_dim;
    const int H = cfg.hidden_dim;
    const int Z = cfg.latent_dim;
    const int B = cfg.belief_dim();
    const int D = cfg.head_dim;

    auto linear = [&](const std::string& name, int out, int in) {
        ps.add(name + ".w", uniform_init(rng, out, in, in));
        ps.add(name + ".b", uniform_init(rng, out, 1, in));
    };

    // feature extractors
    linear("phi_x.l1", F, cfg.input_dim);
    linear("phi_x.l2", F, F);
    linear("phi_b", F, B);
    linear("phi_z", F, Z);

    // Log-variance head biases start at -4 so training begins in a
    // near-deterministic regime; latent jitter otherwise swamps the early
    // reconstruction signal.
    constexpr double kLogVarBiasInit = -4.0;
    auto variance_head = [&](const std::string& name, int out, int in) {
        ps.add(name + ".w", uniform_init(rng, out, in, in));
        ps.add(name + ".b", Mat::Constant(out, 1, kLogVarBiasInit));
    };

    // prior head: [h, phi_b] -> H -> (mu, logvar)
    linear("prior.l1", H, H + F);
    linear("prior.mean", Z, H);
    variance_head("prior.logvar", Z, H);

    // encoder head: [phi_x, h, phi_b] -> H -> H -> (mu, logvar)
    linear("enc.l1", H, F + H + F);
    linear("enc.l2", H, H);
    linear("enc.mean", Z, H);
    variance_head("enc.logvar", Z, H);

    // decoder head: [phi_z, h, phi_b] -> H -> H -> (mu, logvar) over displacements
    linear("dec.l1", H, F + H + F);
    linear("dec.l2", H, H);
    linear("dec.mean", cfg.input_dim, H);
    variance_head("dec.logvar", cfg.input_dim, H);

    // GRU over [phi_x, phi_z]
    const int gru_in = 2 * F;
    for (const char* gate : {"r", "z", "n"}) {
        ps.add(std::string("gru.w_i") + gate, uniform_init(rng, H, gru_in, H));
        ps.add(std::string("gru.w_h") + gate, uniform_init(rng, H, H, H));
        ps.add(std::string("gru.b_i") + gate, uniform_init(rng, H, 1, H));
        ps.add(std::string("gru.b_h") + gate, uniform_init(rng, H, 1, H));
    }

    // graph attention
    for (int h = 0; h < cfg.heads; ++h) {
        const std::string base = "gat.head" + std::to_string(h);
        ps.add(base + ".w", uniform_init(rng, D, H, H));
        ps.add(base + ".a_src", uniform_init(rng, D, 1, D));
        ps.add(base + ".a_dst", uniform_init(rng, D, 1, D));
    }
    linear("gat.out", H, cfg.heads * D);
    ps.add("gat.bn.gamma", Mat::Ones(H, 1));
    ps.add("gat.bn.beta", Mat::Zero(H, 1));
    ps.add("gat.bn.run_mean", Mat::Zero(H, 1), /*trainable=*/false);
    ps.add("gat.bn.run_var", Mat::Ones(H, 1), /*trainable=*/false);

    // hidden-state refinement projection, Linear(2H -> H)
    linear("refine", H, 2 * H);

    // hidden-state init projection (learned / absolute modes)
    linear("init_proj", H, cfg.input_dim);

    return ps;
}

ad::Var BoundParams::operator[](const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ad::Var v = tape_->leaf(store_->at(name));
    bound_.emplace(name, v);
    return v;
}

void BoundParams::harvest_grads() {
    for (const auto& [name, var] : bound_) {
        store_->grad(name) += var.grad();
    }
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'F', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const InferenceSettings& settings, const ParamStore& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kCkptMagic, sizeof(kCkptMagic));
    for (int v : {cfg.input_dim, cfg.feature_dim, cfg.hidden_dim, cfg.latent_dim,
                  cfg.local_side, cfg.heads, cfg.head_dim}) {
        write_pod(out, static_cast<std::int32_t>(v));
    }
    for (double v : {cfg.decoder_mean_clip, cfg.log_var_clip, cfg.leaky_slope,
                     cfg.gat_leaky_slope, cfg.bn_momentum, cfg.bn_eps,
                     cfg.adjacency_threshold}) {
        write_pod(out, v);
    }
    write_pod(out, static_cast<std::uint8_t>(settings.init_mode));
    write_pod(out, static_cast<std::uint8_t>(settings.adjacency));
    write_pod(out, settings.sigma);
    write_pod(out, static_cast<std::int32_t>(settings.knn_k));
    write_pod(out, static_cast<std::uint8_t>(settings.belief_conditioning ? 1 : 0));

    write_pod(out, static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
        write_pod(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_pod(out, static_cast<std::int64_t>(e.value.rows()));
        write_pod(out, static_cast<std::int64_t>(e.value.cols()));
        write_pod(out, static_cast<std::uint8_t>(e.trainable ? 1 : 0));
        out.write(reinterpret_cast<const char*>(e.value.data()),
                  static_cast<std::streamsize>(sizeof(double) * e.value.size()));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
        throw ParseError("checkpoint: bad magic");
    }
    Checkpoint ck;
    ck.config.input_dim = read_pod<std::int32_t>(in);
    ck.config.feature_dim = read_pod<std::int32_t>(in);
    ck.config.hidden_dim = read_pod<std::int32_t>(in);
    ck.config.latent_dim = read_pod<std::int32_t>(in);
    ck.config.local_side = read_pod<std::int32_t>(in);
    ck.config.heads = read_pod<std::int32_t>(in);
    ck.config.head_dim = read_pod<std::int32_t>(in);
    ck.config.decoder_mean_clip = read_pod<double>(in);
    ck.config.log_var_clip = read_pod<double>(in);
    ck.config.leaky_slope = read_pod<double>(in);
    ck.config.gat_leaky_slope = read_pod<double>(in);
    ck.config.bn_momentum = read_pod<double>(in);
    ck.config.bn_eps = read_pod<double>(in);
    ck.config.adjacency_threshold = read_pod<double>(in);
    ck.settings.init_mode = static_cast<InitMode>(read_pod<std::uint8_t>(in));
    ck.settings.adjacency = static_cast<AdjacencyMode>(read_pod<std::uint8_t>(in));
    ck.settings.sigma = read_pod<double>(in);
    ck.settings.knn_k = read_pod<std::int32_t>(in);
    ck.settings.belief_conditioning = read_pod<std::uint8_t>(in) != 0;

    const auto n = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = read_pod<std::int64_t>(in);
        const auto cols = read_pod<std::int64_t>(in);
        const bool trainable = read_pod<std::uint8_t>(in) != 0;
        Mat m(rows, cols);
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
        if (!in) throw ParseError("checkpoint: truncated tensor data");
        ck.params.add(name, std::move(m), trainable);
    }
    return ck;
}

}  // namespace mf
