#include "mf/vrnn_core.hpp"

#include <cmath>
#include <memory>

namespace mf {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

Mat draw_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
    return m;
}

}  // namespace

ad::Var linear_layer(BoundParams& params, const std::string& base, ad::Var x) {
    return ad::add_rowvec(ad::matmul_nt(x, params[base + ".w"]), params[base + ".b"]);
}

ad::Var feature_x(BoundParams& params, ad::Var x, const ModelConfig& cfg) {
    ad::Var a = ad::leaky_relu(linear_layer(params, "phi_x.l1", x), cfg.leaky_slope);
    return ad::leaky_relu(linear_layer(params, "phi_x.l2", a), cfg.leaky_slope);
}

ad::Var feature_b(BoundParams& params, ad::Var b, const ModelConfig& cfg) {
    return ad::leaky_relu(linear_layer(params, "phi_b", b), cfg.leaky_slope);
}

ad::Var feature_z(BoundParams& params, ad::Var z, const ModelConfig& cfg) {
    return ad::leaky_relu(linear_layer(params, "phi_z", z), cfg.leaky_slope);
}

GaussianVars prior_step(BoundParams& params, ad::Var h_prev, ad::Var b_prev,
                        const ModelConfig& cfg) {
    ad::Var in = ad::concat_cols(h_prev, feature_b(params, b_prev, cfg));
    ad::Var hidden = ad::leaky_relu(linear_layer(params, "prior.l1", in), cfg.leaky_slope);
    GaussianVars g;
    g.mean = linear_layer(params, "prior.mean", hidden);
    g.log_var = ad::hardtanh(linear_layer(params, "prior.logvar", hidden),
                             -cfg.log_var_clip, cfg.log_var_clip);
    return g;
}

GaussianVars encoder_step(BoundParams& params, ad::Var x_t, ad::Var h_prev, ad::Var b_prev,
                          const ModelConfig& cfg) {
    ad::Var in = ad::concat_cols(feature_x(params, x_t, cfg), h_prev,
                                 feature_b(params, b_prev, cfg));
    ad::Var a = ad::leaky_relu(linear_layer(params, "enc.l1", in), cfg.leaky_slope);
    ad::Var hidden = ad::leaky_relu(linear_layer(params, "enc.l2", a), cfg.leaky_slope);
    GaussianVars g;
    g.mean = linear_layer(params, "enc.mean", hidden);
    g.log_var = ad::hardtanh(linear_layer(params, "enc.logvar", hidden),
                             -cfg.log_var_clip, cfg.log_var_clip);
    return g;
}

GaussianVars decoder_step(BoundParams& params, ad::Var z_t, ad::Var h_prev, ad::Var b_prev,
                          const ModelConfig& cfg) {
    ad::Var in = ad::concat_cols(feature_z(params, z_t, cfg), h_prev,
                                 feature_b(params, b_prev, cfg));
    ad::Var a = ad::leaky_relu(linear_layer(params, "dec.l1", in), cfg.leaky_slope);
    ad::Var hidden = ad::leaky_relu(linear_layer(params, "dec.l2", a), cfg.leaky_slope);
    GaussianVars g;
    g.mean = ad::hardtanh(linear_layer(params, "dec.mean", hidden),
                          -cfg.decoder_mean_clip, cfg.decoder_mean_clip);
    g.log_var = ad::hardtanh(linear_layer(params, "dec.logvar", hidden),
                             -cfg.log_var_clip, cfg.log_var_clip);
    return g;
}

ad::Var reparameterize(GaussianVars g, const Mat& noise) {
    ad::Tape& tape = *g.mean.tape;
    ad::Var sigma = ad::vexp(ad::scale(g.log_var, 0.5));
    return ad::add(g.mean, ad::mul(sigma, tape.constant(noise)));
}

ad::Var recurrence_step(BoundParams& params, ad::Var x_t, ad::Var z_t, ad::Var h_prev,
                        const ModelConfig& cfg) {
    ad::Var u = ad::concat_cols(feature_x(params, x_t, cfg), feature_z(params, z_t, cfg));
    auto gate = [&](const char* g) {
        return ad::add(
            ad::add_rowvec(ad::matmul_nt(u, params[std::string("gru.w_i") + g]),
                           params[std::string("gru.b_i") + g]),
            ad::add_rowvec(ad::matmul_nt(h_prev, params[std::string("gru.w_h") + g]),
                           params[std::string("gru.b_h") + g]));
    };
    ad::Var r = ad::sigmoid(gate("r"));
    ad::Var zg = ad::sigmoid(gate("z"));
    ad::Var n = ad::vtanh(ad::add(
        ad::add_rowvec(ad::matmul_nt(u, params["gru.w_in"]), params["gru.b_in"]),
        ad::mul(r, ad::add_rowvec(ad::matmul_nt(h_prev, params["gru.w_hn"]),
                                  params["gru.b_hn"]))));
    // h = (1 - z) * n + z * h_prev
    ad::Var one_minus_z = ad::add_scalar(ad::neg(zg), 1.0);
    return ad::add(ad::mul(one_minus_z, n), ad::mul(zg, h_prev));
}

ad::Var gaussian_nll_var(ad::Tape& tape, const Mat& x, GaussianVars g) {
    ad::Var diff = ad::sub(tape.constant(x), g.mean);
    ad::Var mahal = ad::mul(ad::mul(diff, diff), ad::vexp(ad::neg(g.log_var)));
    ad::Var per_dim = ad::add(ad::add_scalar(g.log_var, kLog2Pi), mahal);
    return ad::scale(ad::sum(per_dim), 0.5);
}

ad::Var gaussian_kl_var(GaussianVars q, GaussianVars p) {
    ad::Var dmean = ad::sub(q.mean, p.mean);
    ad::Var inv_p = ad::vexp(ad::neg(p.log_var));
    ad::Var ratio = ad::vexp(ad::sub(q.log_var, p.log_var));
    ad::Var mahal = ad::mul(ad::mul(dmean, dmean), inv_p);
    ad::Var per_dim = ad::add_scalar(
        ad::add(ad::sub(p.log_var, q.log_var), ad::add(ratio, mahal)), -1.0);
    return ad::scale(ad::sum(per_dim), 0.5);
}

ad::Var belief_candidate_kl(GaussianVars decoder, const Mat& noise, const Mat& pos_prev,
                            const std::vector<Mat>& centres, const Mat& gt_maps,
                            Eigen::Index samples_per_ped, double eps) {
    ad::Tape* t = decoder.mean.tape;
    const Eigen::Index n = samples_per_ped;
    const Eigen::Index P = pos_prev.rows();
    const Eigen::Index cells = gt_maps.cols();
    if (P < 1 || n < 1 || decoder.mean.value().rows() != P * n ||
        noise.rows() != P * n || centres.size() != static_cast<std::size_t>(P)) {
        throw NumericError("belief_candidate_kl: shape mismatch");
    }

    const Mat mu = decoder.mean.value();
    const Mat lv = decoder.log_var.value();

    struct PedCache {
        Mat kernel;   // n x cells, exp(-dist)
        Mat dist;     // n x cells
        Mat x;        // n x 2 sampled next positions
        Mat cen;      // cells x 2
        Vec q;        // normalized candidate map
        Vec p_tilde;  // smoothed ground-truth map
        double w_sum = 0.0;
        double sq = 0.0;  // sum of (q + eps)
    };
    auto caches = std::make_shared<std::vector<PedCache>>(P);

    double total = 0.0;
    for (Eigen::Index p = 0; p < P; ++p) {
        PedCache& c = (*caches)[p];
        c.cen = centres[p];
        c.kernel.resize(n, cells);
        c.dist.resize(n, cells);
        c.x.resize(n, 2);
        for (Eigen::Index s = 0; s < n; ++s) {
            const Eigen::Index row = p * n + s;
            const double sx = std::exp(0.5 * lv(row, 0));
            const double sy = std::exp(0.5 * lv(row, 1));
            c.x(s, 0) = pos_prev(p, 0) + mu(row, 0) + sx * noise(row, 0);
            c.x(s, 1) = pos_prev(p, 1) + mu(row, 1) + sy * noise(row, 1);
            for (Eigen::Index i = 0; i < cells; ++i) {
                const double d =
                    std::hypot(c.x(s, 0) - c.cen(i, 0), c.x(s, 1) - c.cen(i, 1));
                c.dist(s, i) = d;
                c.kernel(s, i) = std::exp(-d);
            }
        }
        Vec w = c.kernel.colwise().sum().transpose();
        c.w_sum = w.sum();
        c.q = w / c.w_sum;
        c.sq = (c.q.array() + eps).sum();
        const double sp = (gt_maps.row(p).array() + eps).sum();
        c.p_tilde = ((gt_maps.row(p).transpose().array() + eps) / sp).matrix();
        for (Eigen::Index i = 0; i < cells; ++i) {
            const double q_tilde = (c.q(i) + eps) / c.sq;
            total += c.p_tilde(i) * (std::log(c.p_tilde(i)) - std::log(q_tilde));
        }
    }

    bool ng = t->needs_grad(decoder.mean.idx) || t->needs_grad(decoder.log_var.idx);
    const int mi = decoder.mean.idx, li = decoder.log_var.idx;
    const int oi = static_cast<int>(t->size());
    std::function<void()> back;
    if (ng) {
        const Mat noise_c = noise;
        back = [t, mi, li, oi, caches, noise_c, P, n, cells, eps]() {
            const double g = t->grad(oi)(0, 0);
            const Mat& lv = t->value(li);
            const bool want_mu = t->needs_grad(mi);
            const bool want_lv = t->needs_grad(li);
            for (Eigen::Index p = 0; p < P; ++p) {
                const PedCache& c = (*caches)[p];
                // dKL/dq_j = (1 - p~_j / q~_j) / sum(q + eps)
                Vec dq(cells);
                for (Eigen::Index i = 0; i < cells; ++i) {
                    const double q_tilde = (c.q(i) + eps) / c.sq;
                    dq(i) = (1.0 - c.p_tilde(i) / q_tilde) / c.sq;
                }
                // through q = w / sum(w): dKL/dw_i = (dq_i - dq.q) / sum(w)
                const double dq_dot_q = dq.dot(c.q);
                Vec dw = (dq.array() - dq_dot_q).matrix() / c.w_sum;

                for (Eigen::Index s = 0; s < n; ++s) {
                    const Eigen::Index row = p * n + s;
                    // dw_i/dx_s = exp(-d) * (-(x_s - centre_i) / d)
                    double dxs = 0.0, dys = 0.0;
                    for (Eigen::Index i = 0; i < cells; ++i) {
                        const double d = std::max(c.dist(s, i), 1e-12);
                        const double f = -dw(i) * c.kernel(s, i) / d;
                        dxs += f * (c.x(s, 0) - c.cen(i, 0));
                        dys += f * (c.x(s, 1) - c.cen(i, 1));
                    }
                    if (want_mu) {
                        t->grad_mut(mi)(row, 0) += g * dxs;
                        t->grad_mut(mi)(row, 1) += g * dys;
                    }
                    if (want_lv) {
                        // x_s = pos + mu + sigma .* eps; dsigma/dlogvar = sigma/2
                        const double sx = std::exp(0.5 * lv(row, 0));
                        const double sy = std::exp(0.5 * lv(row, 1));
                        t->grad_mut(li)(row, 0) += g * dxs * 0.5 * sx * noise_c(row, 0);
                        t->grad_mut(li)(row, 1) += g * dys * 0.5 * sy * noise_c(row, 1);
                    }
                }
            }
        };
    }
    Mat out(1, 1);
    out(0, 0) = total;
    return t->push(std::move(out), ng, std::move(back));
}

// --- plain-matrix wrappers ---

GaussianParams prior_step_eval(ParamStore& store, const Mat& h_prev, const Mat& b_prev,
                               const ModelConfig& cfg) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    GaussianVars g =
        prior_step(bound, tape.constant(h_prev), tape.constant(b_prev), cfg);
    return {g.mean.value(), g.log_var.value()};
}

GaussianParams encoder_step_eval(ParamStore& store, const Mat& x_t, const Mat& h_prev,
                                 const Mat& b_prev, const ModelConfig& cfg) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    GaussianVars g = encoder_step(bound, tape.constant(x_t), tape.constant(h_prev),
                                  tape.constant(b_prev), cfg);
    return {g.mean.value(), g.log_var.value()};
}

GaussianParams decoder_step_eval(ParamStore& store, const Mat& z_t, const Mat& h_prev,
                                 const Mat& b_prev, const ModelConfig& cfg) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    GaussianVars g = decoder_step(bound, tape.constant(z_t), tape.constant(h_prev),
                                  tape.constant(b_prev), cfg);
    return {g.mean.value(), g.log_var.value()};
}

Mat reparameterize(const GaussianParams& g, const Mat& noise) {
    return g.mean.array() + (0.5 * g.log_var).array().exp() * noise.array();
}

Mat recurrence_step_eval(ParamStore& store, const Mat& x_t, const Mat& z_t,
                         const Mat& h_prev, const ModelConfig& cfg) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    return recurrence_step(bound, tape.constant(x_t), tape.constant(z_t),
                           tape.constant(h_prev), cfg)
        .value();
}

// --- batching ---

BatchWindow merge_windows(const std::vector<const SceneWindow*>& windows) {
    if (windows.empty()) throw DataError("merge_windows: empty batch");
    const int T = windows.front()->total_steps();
    Eigen::Index total = 0;
    for (const SceneWindow* w : windows) {
        if (w->total_steps() != T) {
            throw DataError("merge_windows: windows disagree on length");
        }
        total += w->num_peds();
    }
    BatchWindow batch;
    batch.t_obs = windows.front()->t_obs;
    batch.t_pred = windows.front()->t_pred;
    batch.abs.resize(T);
    batch.disp.resize(T);
    for (int t = 0; t < T; ++t) {
        batch.abs[t].resize(total, 2);
        batch.disp[t].resize(total, 2);
        Eigen::Index off = 0;
        for (const SceneWindow* w : windows) {
            batch.abs[t].middleRows(off, w->num_peds()) = w->abs_positions[t];
            batch.disp[t].middleRows(off, w->num_peds()) = w->displacements[t];
            off += w->num_peds();
        }
    }
    for (const SceneWindow* w : windows) batch.block_sizes.push_back(w->num_peds());
    return batch;
}

BatchWindow as_batch(const SceneWindow& window) { return merge_windows({&window}); }

Mat gather_belief_rows(const RunContext& ctx, const Mat& positions) {
    const int cells = ctx.cfg.belief_dim();
    Mat rows(positions.rows(), cells);
    if (!ctx.settings.belief_conditioning) {
        rows.setConstant(1.0 / cells);
        return rows;
    }
    if (ctx.grid == nullptr) {
        throw ConfigError("belief conditioning requested but no grid provided");
    }
    for (Eigen::Index p = 0; p < positions.rows(); ++p) {
        BeliefMap m = lookup_belief(*ctx.grid, Vec2(positions(p, 0), positions(p, 1)));
        rows.row(p) = m.weights.transpose();
    }
    return rows;
}

AdjacencyMatrix batch_adjacency(const RunContext& ctx, const Mat& positions,
                                const std::vector<Eigen::Index>& block_sizes) {
    AdjacencyParams ap{ctx.settings.sigma, ctx.settings.knn_k};
    std::vector<AdjacencyMatrix> blocks;
    Eigen::Index off = 0;
    for (Eigen::Index size : block_sizes) {
        blocks.push_back(
            build_adjacency(positions.middleRows(off, size), ctx.settings.adjacency, ap));
        off += size;
    }
    if (off != positions.rows()) {
        throw NumericError("batch_adjacency: block sizes do not cover all pedestrians");
    }
    return block_diagonal(blocks);
}

ad::Var init_hidden(BoundParams& params, const RunContext& ctx,
                    const Mat& first_positions) {
    ad::Tape& tape = params.tape();
    const Eigen::Index P = first_positions.rows();
    switch (ctx.settings.init_mode) {
        case InitMode::zero:
            return tape.constant(Mat::Zero(P, ctx.cfg.hidden_dim));
        case InitMode::learned:
            return linear_layer(params, "init_proj",
                                tape.constant(Mat::Ones(P, ctx.cfg.input_dim)));
        case InitMode::absolute:
            return linear_layer(params, "init_proj", tape.constant(first_positions));
    }
    throw ConfigError("init_hidden: invalid mode");
}

Mat init_hidden_eval(ParamStore& store, const ModelConfig& cfg,
                     const InferenceSettings& settings, const Mat& first_positions) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    RunContext ctx{cfg, settings, nullptr, false};
    return init_hidden(bound, ctx, first_positions).value();
}

// --- window loss ---

LossVars build_window_loss(BoundParams& params, const RunContext& ctx,
                           const BatchWindow& batch, std::mt19937_64& noise_rng,
                           int map_samples) {
    ad::Tape& tape = params.tape();
    const ModelConfig& cfg = ctx.cfg;
    const int T = batch.total_steps();
    const Eigen::Index P = batch.num_peds();
    const bool belief_term =
        map_samples > 0 && ctx.grid != nullptr && ctx.settings.belief_conditioning;

    ad::Var h = init_hidden(params, ctx, batch.abs[0]);
    ad::Var nll_total = tape.constant(Mat::Zero(1, 1));
    ad::Var kl_total = tape.constant(Mat::Zero(1, 1));
    ad::Var belief_total = tape.constant(Mat::Zero(1, 1));

    for (int t = 1; t < T; ++t) {
        const Mat& pos_prev = batch.abs[t - 1];
        const Mat b_rows = gather_belief_rows(ctx, pos_prev);
        ad::Var b = tape.constant(b_rows);

        GaussianVars pri = prior_step(params, h, b, cfg);
        ad::Var x = tape.constant(batch.disp[t]);
        GaussianVars enc = encoder_step(params, x, h, b, cfg);
        ad::Var z = reparameterize(enc, draw_normal(noise_rng, P, cfg.latent_dim));
        GaussianVars dec = decoder_step(params, z, h, b, cfg);

        nll_total = ad::add(nll_total, gaussian_nll_var(tape, batch.disp[t], dec));
        kl_total = ad::add(kl_total, gaussian_kl_var(enc, pri));

        if (belief_term) {
            // Candidate maps come from the generative path: only the position
            // at t-1 is used, each displacement draw carries its own prior z.
            const Mat znoise = draw_normal(noise_rng, P * map_samples, cfg.latent_dim);
            const Mat xnoise = draw_normal(noise_rng, P * map_samples, 2);
            ad::Var h_rep = ad::repeat_rows(h, map_samples);
            ad::Var b_rep = tape.constant(
                [&] {
                    Mat rep(P * map_samples, b_rows.cols());
                    for (Eigen::Index p = 0; p < P; ++p)
                        for (int s = 0; s < map_samples; ++s)
                            rep.row(p * map_samples + s) = b_rows.row(p);
                    return rep;
                }());
            GaussianVars pri_rep{ad::repeat_rows(pri.mean, map_samples),
                                 ad::repeat_rows(pri.log_var, map_samples)};
            ad::Var z_gen = reparameterize(pri_rep, znoise);
            GaussianVars dec_gen = decoder_step(params, z_gen, h_rep, b_rep, cfg);

            std::vector<Mat> centres(P);
            for (Eigen::Index p = 0; p < P; ++p) {
                const auto [ix, iy] =
                    ctx.grid->geometry.bin_of(pos_prev(p, 0), pos_prev(p, 1));
                centres[p] = ctx.grid->geometry.neighbour_centres(ix, iy);
            }
            belief_total =
                ad::add(belief_total, belief_candidate_kl(dec_gen, xnoise, pos_prev,
                                                          centres, b_rows, map_samples));
        }

        h = recurrence_step(params, x, z, h, cfg);
        AdjacencyMatrix adj = batch_adjacency(ctx, batch.abs[t], batch.block_sizes);
        ad::Var h_hat = gat_forward(params, h, adj, cfg, ctx.training);
        h = refine_hidden(params, h, h_hat);
    }

    const double inv_p = 1.0 / static_cast<double>(P);
    return {ad::scale(nll_total, inv_p), ad::scale(kl_total, inv_p),
            ad::scale(belief_total, inv_p)};
}

// --- inference stepping ---

namespace {

struct TapeState {
    ad::Var h;
    Mat positions;
};

// One observation step on an existing tape; z comes from the encoder.
void observe_on_tape(BoundParams& params, const RunContext& ctx, TapeState& state,
                     const Mat& x_t, std::mt19937_64& rng, StepLoss* loss) {
    ad::Tape& tape = params.tape();
    const ModelConfig& cfg = ctx.cfg;
    const Eigen::Index P = state.positions.rows();
    const Mat b_rows = gather_belief_rows(ctx, state.positions);
    ad::Var b = tape.constant(b_rows);
    ad::Var x = tape.constant(x_t);

    GaussianVars enc = encoder_step(params, x, state.h, b, cfg);
    ad::Var z = reparameterize(enc, draw_normal(rng, P, cfg.latent_dim));
    if (loss != nullptr) {
        GaussianVars pri = prior_step(params, state.h, b, cfg);
        GaussianVars dec = decoder_step(params, z, state.h, b, cfg);
        loss->nll = gaussian_nll_var(tape, x_t, dec).value()(0, 0);
        loss->kl_latent = gaussian_kl_var(enc, pri).value()(0, 0);
    }

    const Mat pos_next = state.positions + x_t;
    ad::Var h_next = recurrence_step(params, x, z, state.h, cfg);
    AdjacencyMatrix adj = batch_adjacency(ctx, pos_next, {P});
    ad::Var h_hat = gat_forward(params, h_next, adj, cfg, ctx.training);
    state.h = refine_hidden(params, h_next, h_hat);
    state.positions = pos_next;
}

// One generation step on an existing tape; z comes from the prior and the
// emitted displacement is either sampled or the decoder mean.
Mat generate_on_tape(BoundParams& params, const RunContext& ctx, TapeState& state,
                     std::mt19937_64& rng, GenerateMode mode) {
    ad::Tape& tape = params.tape();
    const ModelConfig& cfg = ctx.cfg;
    const Eigen::Index P = state.positions.rows();
    const Mat b_rows = gather_belief_rows(ctx, state.positions);
    ad::Var b = tape.constant(b_rows);

    GaussianVars pri = prior_step(params, state.h, b, cfg);
    ad::Var z = reparameterize(pri, draw_normal(rng, P, cfg.latent_dim));
    GaussianVars dec = decoder_step(params, z, state.h, b, cfg);

    Mat disp;
    if (mode == GenerateMode::mean) {
        disp = dec.mean.value();
    } else {
        GaussianParams g{dec.mean.value(), dec.log_var.value()};
        disp = reparameterize(g, draw_normal(rng, P, cfg.input_dim));
    }

    const Mat pos_next = state.positions + disp;
    ad::Var h_next = recurrence_step(params, tape.constant(disp), z, state.h, cfg);
    AdjacencyMatrix adj = batch_adjacency(ctx, pos_next, {P});
    ad::Var h_hat = gat_forward(params, h_next, adj, cfg, ctx.training);
    state.h = refine_hidden(params, h_next, h_hat);
    state.positions = pos_next;
    return disp;
}

}  // namespace

StepLoss observe_step(ParamStore& store, const RunContext& ctx, VrnnState& state,
                      const Mat& x_t, std::mt19937_64& rng) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    TapeState ts{tape.constant(state.h), state.positions};
    StepLoss loss;
    observe_on_tape(bound, ctx, ts, x_t, rng, &loss);
    state.h = ts.h.value();
    state.positions = ts.positions;
    return loss;
}

Mat generate_step(ParamStore& store, const RunContext& ctx, VrnnState& state,
                  std::mt19937_64& rng, GenerateMode mode) {
    ad::Tape tape;
    BoundParams bound(tape, store);
    TapeState ts{tape.constant(state.h), state.positions};
    generate_on_tape(bound, ctx, ts, rng, mode);
    state.h = ts.h.value();
    state.positions = ts.positions;
    return state.positions;
}

std::vector<PosSeq> rollout(ParamStore& store, const RunContext& ctx,
                            const SceneWindow& window, int num_samples,
                            std::uint64_t seed, GenerateMode mode, int steps) {
    if (num_samples < 1) throw ConfigError("rollout: need at least one sample");
    if (static_cast<int>(window.abs_positions.size()) < window.t_obs) {
        throw DataError("rollout: window shorter than t_obs");
    }
    const int horizon = steps > 0 ? steps : window.t_pred;

    std::vector<PosSeq> samples;
    samples.reserve(num_samples);
    for (int k = 0; k < num_samples; ++k) {
        std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
        ad::Tape tape;
        BoundParams bound(tape, store);
        RunContext run = ctx;
        run.training = false;

        TapeState state{init_hidden(bound, run, window.abs_positions[0]),
                        window.abs_positions[0]};
        for (int t = 1; t < window.t_obs; ++t) {
            observe_on_tape(bound, run, state, window.displacements[t], rng, nullptr);
        }
        PosSeq future;
        future.reserve(horizon);
        for (int t = 0; t < horizon; ++t) {
            generate_on_tape(bound, run, state, rng, mode);
            future.push_back(state.positions);
        }
        samples.push_back(std::move(future));
    }
    return samples;
}

}  // namespace mf
