#include "mf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mf {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

void TrainConfig::validate() const {
    if (lr <= 0 || batch_size < 1 || epochs < 1 || warmup_epochs < 1 ||
        belief_weight < 0 || grad_clip <= 0 || map_samples < 0) {
        throw ConfigError("train config: nonpositive field");
    }
}

double gaussian_nll(const Mat& x, const GaussianParams& g) {
    if (x.rows() != g.mean.rows() || x.cols() != g.mean.cols()) {
        throw NumericError("gaussian_nll: shape mismatch");
    }
    const auto diff = (x - g.mean).array();
    const auto inv_var = (-g.log_var).array().exp();
    return 0.5 * (kLog2Pi + g.log_var.array() + diff.square() * inv_var).sum();
}

double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    if (q.mean.rows() != p.mean.rows() || q.mean.cols() != p.mean.cols()) {
        throw NumericError("gaussian_kl: shape mismatch");
    }
    const auto dmean = (q.mean - p.mean).array();
    const auto inv_p = (-p.log_var).array().exp();
    // variance ratio via exp(lv_q - lv_p) so KL(q, q) is exactly zero
    return 0.5 * ((p.log_var - q.log_var).array() +
                  (q.log_var - p.log_var).array().exp() + dmean.square() * inv_p - 1.0)
                     .sum();
}

double kl_warmup_weight(int epoch, int warmup_epochs) {
    if (epoch < 0) throw ConfigError("kl_warmup_weight: negative epoch");
    if (warmup_epochs < 1 || epoch >= warmup_epochs) return 1.0;
    return static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
}

double belief_kl_term(const SceneWindow& window, int step, const GaussianParams& decoder,
                      const GlobalGrid& grid, int n, std::mt19937_64& rng) {
    if (step < 1 || step >= window.total_steps()) {
        throw DataError("belief_kl_term: step out of range");
    }
    if (n < 1) throw ConfigError("belief_kl_term: need at least one sample");
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Mat& pos_prev = window.abs_positions[step - 1];
    double total = 0.0;
    for (Eigen::Index p = 0; p < pos_prev.rows(); ++p) {
        Mat samples(n, 2);
        for (int s = 0; s < n; ++s) {
            samples(s, 0) =
                decoder.mean(p, 0) + std::exp(0.5 * decoder.log_var(p, 0)) * gauss(rng);
            samples(s, 1) =
                decoder.mean(p, 1) + std::exp(0.5 * decoder.log_var(p, 1)) * gauss(rng);
        }
        const Vec2 prev(pos_prev(p, 0), pos_prev(p, 1));
        BeliefMap candidate = sample_candidate_map(samples, prev, grid.geometry);
        BeliefMap gt = lookup_belief(grid, prev);
        total += histogram_kl(gt, candidate);
    }
    return total / static_cast<double>(pos_prev.rows());
}

LossBreakdown total_loss(double nll_sum, double kl_latent_sum, double kl_belief_sum,
                         int epoch, const TrainConfig& cfg) {
    LossBreakdown b;
    b.nll = nll_sum;
    b.kl_latent = kl_latent_sum;
    b.kl_belief = kl_belief_sum;
    b.kl_weight = kl_warmup_weight(epoch, cfg.warmup_epochs);
    b.total = b.nll + b.kl_weight * b.kl_latent + cfg.belief_weight * b.kl_belief;
    return b;
}

AdamState make_adam_state(const ParamStore& params) {
    AdamState s;
    for (const auto& e : params.entries()) {
        s.m.push_back(Mat::Zero(e.value.rows(), e.value.cols()));
        s.v.push_back(Mat::Zero(e.value.rows(), e.value.cols()));
    }
    return s;
}

void adam_update(ParamStore& params, AdamState& state, const TrainConfig& cfg) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) continue;
        Mat& g = entries[i].grad;
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] =
            (cfg.beta2 * state.v[i].array() + (1.0 - cfg.beta2) * g.array().square())
                .matrix();
        const auto m_hat = state.m[i].array() / bc1;
        const auto v_hat = state.v[i].array() / bc2;
        entries[i].value.array() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
    const double norm = params.grad_norm();
    if (norm > max_norm && norm > 0.0) {
        params.scale_grads(max_norm / norm);
    }
    return norm;
}

namespace {

LossVars batch_loss_vars(BoundParams& bound, const RunContext& ctx,
                         const BatchWindow& batch, std::mt19937_64& noise_rng,
                         const TrainConfig& tcfg) {
    const int samples = tcfg.belief_weight > 0.0 ? tcfg.map_samples : 0;
    return build_window_loss(bound, ctx, batch, noise_rng, samples);
}

}  // namespace

EpochMetrics train_epoch(const std::vector<SceneWindow>& windows, const GlobalGrid* grid,
                         ParamStore& params, AdamState& adam, const ModelConfig& mcfg,
                         const InferenceSettings& settings, const TrainConfig& tcfg,
                         int epoch, std::mt19937_64& epoch_rng) {
    if (windows.empty()) throw DataError("train_epoch: empty dataset");
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), epoch_rng);

    RunContext ctx{mcfg, settings, grid, /*training=*/true};
    ctx.settings.init_mode = tcfg.init_mode;

    EpochMetrics metrics;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(tcfg.batch_size)) {
        std::vector<const SceneWindow*> chunk;
        for (std::size_t i = start;
             i < std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
             ++i) {
            chunk.push_back(&windows[order[i]]);
        }
        BatchWindow batch = merge_windows(chunk);

        ad::Tape tape;
        BoundParams bound(tape, params);
        LossVars lv = batch_loss_vars(bound, ctx, batch, epoch_rng, tcfg);
        const double w = kl_warmup_weight(epoch, tcfg.warmup_epochs);
        ad::Var total = ad::add(
            lv.nll, ad::add(ad::scale(lv.kl_latent, w),
                            ad::scale(lv.belief, tcfg.belief_weight)));
        const double total_val = total.value()(0, 0);
        if (!std::isfinite(total_val)) {
            throw NumericError("train_epoch: non-finite loss at epoch " +
                               std::to_string(epoch) + " (nll=" +
                               std::to_string(lv.nll.value()(0, 0)) + ", kl=" +
                               std::to_string(lv.kl_latent.value()(0, 0)) + ", belief=" +
                               std::to_string(lv.belief.value()(0, 0)) + ")");
        }

        tape.backward(total);
        params.zero_grads();
        bound.harvest_grads();
        clip_grad_norm(params, tcfg.grad_clip);
        adam_update(params, adam, tcfg);

        LossBreakdown b = total_loss(lv.nll.value()(0, 0), lv.kl_latent.value()(0, 0),
                                     lv.belief.value()(0, 0), epoch, tcfg);
        metrics.mean_loss.nll += b.nll;
        metrics.mean_loss.kl_latent += b.kl_latent;
        metrics.mean_loss.kl_belief += b.kl_belief;
        metrics.mean_loss.total += b.total;
        metrics.mean_loss.kl_weight = b.kl_weight;
        ++metrics.batches;
    }
    const double inv = 1.0 / std::max(1, metrics.batches);
    metrics.mean_loss.nll *= inv;
    metrics.mean_loss.kl_latent *= inv;
    metrics.mean_loss.kl_belief *= inv;
    metrics.mean_loss.total *= inv;
    metrics.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return metrics;
}

LossBreakdown validation_loss(const std::vector<SceneWindow>& windows,
                              const GlobalGrid* grid, ParamStore& params,
                              const ModelConfig& mcfg, const InferenceSettings& settings,
                              const TrainConfig& tcfg, int epoch, std::uint64_t seed) {
    if (windows.empty()) throw DataError("validation_loss: empty dataset");
    RunContext ctx{mcfg, settings, grid, /*training=*/false};
    ctx.settings.init_mode = tcfg.init_mode;
    std::mt19937_64 rng(seed);
    double nll = 0, kl = 0, belief = 0;
    for (const SceneWindow& w : windows) {
        ad::Tape tape;
        BoundParams bound(tape, params);
        BatchWindow batch = as_batch(w);
        LossVars lv = batch_loss_vars(bound, ctx, batch, rng, tcfg);
        nll += lv.nll.value()(0, 0);
        kl += lv.kl_latent.value()(0, 0);
        belief += lv.belief.value()(0, 0);
    }
    const double inv = 1.0 / static_cast<double>(windows.size());
    return total_loss(nll * inv, kl * inv, belief * inv, epoch, tcfg);
}

FitResult fit(const std::vector<SceneWindow>& train_windows,
              const std::vector<SceneWindow>& val_windows, const GlobalGrid* grid,
              ParamStore& params, const ModelConfig& mcfg,
              const InferenceSettings& settings, const TrainConfig& tcfg,
              std::ostream* log, const std::function<void(const ParamStore&, int)>& on_best) {
    tcfg.validate();
    FitResult result;
    AdamState adam = make_adam_state(params);
    std::mt19937_64 rng(tcfg.seed);
    if (log != nullptr) write_log_header(*log);
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        EpochMetrics em = train_epoch(train_windows, grid, params, adam, mcfg, settings,
                                      tcfg, epoch, rng);
        if (log != nullptr) write_log_row(*log, epoch, em);
        result.history.push_back(em);
        if (!val_windows.empty()) {
            LossBreakdown val =
                validation_loss(val_windows, grid, params, mcfg, settings, tcfg, epoch,
                                derive_seed(tcfg.seed, 0x5EEDULL + static_cast<std::uint64_t>(epoch)));
            if (val.total < result.best_val_loss) {
                result.best_val_loss = val.total;
                result.best_val_epoch = epoch;
                if (on_best) on_best(params, epoch);
            }
        }
    }
    return result;
}

// --- config files ---

void apply_config_entry(FileConfig& cfg, const std::string& key, const std::string& value) {
    auto to_int = [&](const std::string& v) {
        std::size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw ConfigError("config: bad integer for " + key);
        return out;
    };
    auto to_double = [&](const std::string& v) {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw ConfigError("config: bad number for " + key);
        return out;
    };
    auto to_u64 = [&](const std::string& v) {
        return static_cast<std::uint64_t>(std::stoull(v));
    };
    auto to_bool = [&](const std::string& v) {
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw ConfigError("config: bad boolean for " + key);
    };

    if (key == "lr") cfg.train.lr = to_double(value);
    else if (key == "batch_size") cfg.train.batch_size = to_int(value);
    else if (key == "epochs") cfg.train.epochs = to_int(value);
    else if (key == "warmup_epochs") cfg.train.warmup_epochs = to_int(value);
    else if (key == "belief_weight") cfg.train.belief_weight = to_double(value);
    else if (key == "grad_clip") cfg.train.grad_clip = to_double(value);
    else if (key == "map_samples") cfg.train.map_samples = to_int(value);
    else if (key == "init_mode") {
        cfg.train.init_mode = init_mode_from_string(value);
        cfg.settings.init_mode = cfg.train.init_mode;
    } else if (key == "seed") cfg.train.seed = to_u64(value);
    else if (key == "input_dim") cfg.model.input_dim = to_int(value);
    else if (key == "feature_dim") cfg.model.feature_dim = to_int(value);
    else if (key == "hidden_dim") cfg.model.hidden_dim = to_int(value);
    else if (key == "latent_dim") cfg.model.latent_dim = to_int(value);
    else if (key == "local_side") cfg.model.local_side = to_int(value);
    else if (key == "heads") cfg.model.heads = to_int(value);
    else if (key == "head_dim") cfg.model.head_dim = to_int(value);
    else if (key == "decoder_mean_clip") cfg.model.decoder_mean_clip = to_double(value);
    else if (key == "adjacency") cfg.settings.adjacency = adjacency_mode_from_string(value);
    else if (key == "sigma") cfg.settings.sigma = to_double(value);
    else if (key == "knn_k") cfg.settings.knn_k = to_int(value);
    else if (key == "belief") cfg.settings.belief_conditioning = to_bool(value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

FileConfig parse_config(std::istream& in) {
    FileConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

FileConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    return parse_config(in);
}

void write_log_header(std::ostream& out) {
    out << "epoch,nll,kl_latent,kl_belief,total,kl_weight,wall_time_s\n";
}

void write_log_row(std::ostream& out, int epoch, const EpochMetrics& m) {
    out.precision(12);
    out << epoch << ',' << m.mean_loss.nll << ',' << m.mean_loss.kl_latent << ','
        << m.mean_loss.kl_belief << ',' << m.mean_loss.total << ','
        << m.mean_loss.kl_weight << ',' << m.wall_time_s << '\n';
}

}  // namespace mf
