#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mf/training.hpp"
#include "test_support.hpp"

#include <random>
#include <sstream>

using namespace mf;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.feature_dim = 8;
    cfg.hidden_dim = 8;
    cfg.latent_dim = 4;
    cfg.heads = 2;
    cfg.head_dim = 4;
    return cfg;
}

GaussianParams random_gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                               double mean_range = 0.5, double lv_range = 0.5) {
    GaussianParams g;
    g.mean = mftest::random_mat(rng, r, c, -mean_range, mean_range);
    g.log_var = mftest::random_mat(rng, r, c, -lv_range, lv_range);
    return g;
}

// Independent density-based NLL: evaluates the Gaussian pdf directly.
double nll_oracle(const Mat& x, const GaussianParams& g) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double var = std::exp(g.log_var(i, j));
            const double pdf = std::exp(-0.5 * (x(i, j) - g.mean(i, j)) *
                                        (x(i, j) - g.mean(i, j)) / var) /
                               std::sqrt(2.0 * M_PI * var);
            total -= std::log(pdf);
        }
    }
    return total;
}

}  // namespace

TEST_CASE("gaussian_nll: closed form at the mode and oracle equivalence") {
    GaussianParams g;
    g.mean = Mat::Zero(1, 2);
    g.log_var = Mat::Zero(1, 2);
    // per-dim NLL at x = mean with unit variance is 0.5 log(2 pi)
    const double expect = 0.5 * std::log(2.0 * M_PI);
    CHECK(gaussian_nll(Mat::Zero(1, 2), g) == doctest::Approx(2 * expect).epsilon(1e-12));
    CHECK(std::abs(expect - 0.9189) < 5e-5);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        GaussianParams gr = random_gaussian(rng, 3, 2, 1.0, 1.0);
        Mat x = mftest::random_mat(rng, 3, 2, -2, 2);
        CHECK(std::abs(gaussian_nll(x, gr) - nll_oracle(x, gr)) < 1e-12);
    }
}

TEST_CASE("gaussian_nll is stationary in the mean at x") {
    std::mt19937_64 rng(5);
    Mat x = mftest::random_mat(rng, 2, 2);
    GaussianParams g;
    g.mean = x;
    g.log_var = mftest::random_mat(rng, 2, 2, -1, 1);
    Mat grad = mftest::finite_diff(
        [&](const Mat& m) {
            GaussianParams g2{m, g.log_var};
            return gaussian_nll(x, g2);
        },
        g.mean);
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("gaussian_kl: identity, closed form, Monte-Carlo oracle") {
    std::mt19937_64 rng(7);
    GaussianParams q = random_gaussian(rng, 2, 3);
    CHECK(gaussian_kl(q, q) == 0.0);

    // KL(N(1,1) || N(0,1)) = 0.5 mu^2 = 0.5
    GaussianParams a, b;
    a.mean = Mat::Constant(1, 1, 1.0);
    a.log_var = Mat::Zero(1, 1);
    b.mean = Mat::Zero(1, 1);
    b.log_var = Mat::Zero(1, 1);
    CHECK(gaussian_kl(a, b) == doctest::Approx(0.5).epsilon(1e-12));

    // MC estimate with 1e5 draws: E_q[log q - log p]
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        GaussianParams qq = random_gaussian(rng, 1, 2);
        GaussianParams pp = random_gaussian(rng, 1, 2);
        const int N = 100000;
        double acc = 0.0;
        for (int i = 0; i < N; ++i) {
            Mat noise(1, 2);
            noise << gauss(rng), gauss(rng);
            Mat z = reparameterize(qq, noise);
            acc += nll_oracle(z, pp) - nll_oracle(z, qq);
        }
        CHECK(std::abs(acc / N - gaussian_kl(qq, pp)) < 1e-2);
    }
}

TEST_CASE("kl_warmup_weight: endpoints, midpoint, monotone") {
    CHECK(kl_warmup_weight(0, 50) == 0.0);
    CHECK(kl_warmup_weight(50, 50) == 1.0);
    CHECK(kl_warmup_weight(120, 50) == 1.0);
    CHECK(kl_warmup_weight(25, 50) == doctest::Approx(0.5));
    double prev = -1.0;
    for (int e = 0; e <= 120; ++e) {
        double w = kl_warmup_weight(e, 50);
        CHECK(w >= prev);
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
        prev = w;
    }
}

TEST_CASE("total_loss: additive structure") {
    TrainConfig cfg;
    cfg.warmup_epochs = 50;
    cfg.belief_weight = 100.0;

    LossBreakdown zero = total_loss(0, 0, 0, 10, cfg);
    CHECK(zero.total == 0.0);

    // epoch 0: latent KL contributes nothing
    LossBreakdown e0 = total_loss(1.5, 42.0, 0.25, 0, cfg);
    CHECK(e0.total == doctest::Approx(1.5 + 100.0 * 0.25).epsilon(1e-12));

    // doubling k doubles only the belief contribution
    TrainConfig cfg2 = cfg;
    cfg2.belief_weight = 200.0;
    LossBreakdown l1 = total_loss(1.0, 2.0, 0.5, 100, cfg);
    LossBreakdown l2 = total_loss(1.0, 2.0, 0.5, 100, cfg2);
    CHECK(l2.total - l1.total == doctest::Approx(100.0 * 0.5).epsilon(1e-12));

    // with k = 0 past warm-up the objective is exactly the negative ELBO
    TrainConfig cfg0 = cfg;
    cfg0.belief_weight = 0.0;
    LossBreakdown elbo = total_loss(1.25, 0.75, 123.0, 60, cfg0);
    CHECK(std::abs(elbo.total - (1.25 + 0.75)) < 1e-12);
}

TEST_CASE("belief_kl_term: nonnegative, near-minimum at the GT transition") {
    // grid trained with a single eastward transition
    GridGeometry geo;
    geo.x_min = 0;
    geo.y_min = 0;
    geo.x_max = 10;
    geo.y_max = 10;
    geo.n_bins_x = 10;
    geo.n_bins_y = 10;
    geo.delta_x = 1;
    geo.delta_y = 1;
    geo.local_side = 5;
    Mat traj(2, 2);
    traj << 2.5, 5.5, 3.5, 5.5;
    GlobalGrid grid = build_global_grid({traj}, geo);

    SceneWindow w;
    w.t_obs = 1;
    w.t_pred = 1;
    w.ped_ids = {0};
    w.abs_positions = {(Mat(1, 2) << 2.5, 5.5).finished(),
                       (Mat(1, 2) << 3.5, 5.5).finished()};
    w.displacements = to_displacements(w.abs_positions);

    GaussianParams dec;
    dec.log_var = Mat::Constant(1, 2, std::log(0.01));

    // sweep the decoder mean along the x displacement; the KL should bottom
    // out near the true displacement (+1, 0)
    double best_kl = 1e18;
    double best_dx = -10;
    for (double dx = -1.0; dx <= 3.0; dx += 0.25) {
        dec.mean = (Mat(1, 2) << dx, 0.0).finished();
        std::mt19937_64 rng(91);
        double kl = belief_kl_term(w, 1, dec, grid, 200, rng);
        CHECK(kl >= 0.0);
        if (kl < best_kl) {
            best_kl = kl;
            best_dx = dx;
        }
    }
    CHECK(best_dx == doctest::Approx(1.0).epsilon(0.3));
}

TEST_CASE("clip_grad_norm caps the global norm") {
    ModelConfig cfg = tiny_config();
    ParamStore ps = init_model_params(cfg, 1);
    std::mt19937_64 rng(9);
    for (auto& e : ps.entries()) {
        e.grad = mftest::random_mat(rng, e.value.rows(), e.value.cols(), -3, 3);
    }
    double before = ps.grad_norm();
    CHECK(before > 10.0);
    double reported = clip_grad_norm(ps, 10.0);
    CHECK(reported == doctest::Approx(before));
    CHECK(ps.grad_norm() <= 10.0 + 1e-9);

    // already-small grads pass through untouched
    for (auto& e : ps.entries()) e.grad *= 1e-6;
    double small = ps.grad_norm();
    clip_grad_norm(ps, 10.0);
    CHECK(ps.grad_norm() == doctest::Approx(small));
}

TEST_CASE("adam: lr=0 leaves parameters unchanged; a step reduces a quadratic") {
    ModelConfig cfg = tiny_config();
    ParamStore ps = init_model_params(cfg, 2);
    ParamStore before = ps;
    AdamState adam = make_adam_state(ps);
    std::mt19937_64 rng(11);
    for (auto& e : ps.entries()) {
        e.grad = mftest::random_mat(rng, e.value.rows(), e.value.cols());
    }
    TrainConfig tc;
    tc.lr = 0.0;
    adam_update(ps, adam, tc);
    for (std::size_t i = 0; i < ps.entries().size(); ++i) {
        CHECK(ps.entries()[i].value == before.entries()[i].value);
    }

    // minimize f(w) = 0.5 ||w||^2 on a single parameter
    ParamStore quad;
    quad.add("w", Mat::Constant(4, 1, 2.0));
    AdamState qa = make_adam_state(quad);
    TrainConfig qc;
    qc.lr = 0.05;
    for (int it = 0; it < 400; ++it) {
        quad.grad("w") = quad.at("w");  // df/dw = w
        adam_update(quad, qa, qc);
    }
    CHECK(quad.at("w").cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("train_epoch: loss decreases on a small linear set and is deterministic") {
    ModelConfig cfg = tiny_config();
    InferenceSettings settings;
    settings.init_mode = InitMode::absolute;
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 8;
    tc.epochs = 1;
    tc.warmup_epochs = 10;
    tc.belief_weight = 1.0;
    tc.map_samples = 10;
    tc.seed = 3;

    SynthSpec spec;
    spec.kind = SynthKind::linear;
    spec.n_peds = 1;
    spec.n_windows = 8;
    spec.seed = 7;
    Scene scene = synth_generate(spec);
    auto windows = build_windows(scene, 8, 12);
    auto tracks = extract_tracks(scene);
    GlobalGrid grid = build_global_grid(tracks, compute_grid_geometry(tracks, 5));

    auto run = [&](int epochs) {
        ParamStore ps = init_model_params(cfg, 123);
        AdamState adam = make_adam_state(ps);
        std::mt19937_64 rng(tc.seed);
        std::vector<double> totals;
        for (int e = 0; e < epochs; ++e) {
            EpochMetrics m =
                train_epoch(windows, &grid, ps, adam, cfg, settings, tc, e, rng);
            totals.push_back(m.mean_loss.total);
        }
        return std::pair{totals, ps};
    };

    auto [totals_a, ps_a] = run(30);
    auto [totals_b, ps_b] = run(30);
    // bit-identical across runs
    for (std::size_t i = 0; i < totals_a.size(); ++i) CHECK(totals_a[i] == totals_b[i]);
    for (std::size_t i = 0; i < ps_a.entries().size(); ++i) {
        CHECK(ps_a.entries()[i].value == ps_b.entries()[i].value);
    }
    // clear downward trend
    CHECK(totals_a.back() < totals_a.front());
}

TEST_CASE("fit writes a CSV log with one row per epoch") {
    ModelConfig cfg = tiny_config();
    InferenceSettings settings;
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.belief_weight = 0.0;
    tc.map_samples = 0;
    tc.init_mode = InitMode::zero;

    SynthSpec spec;
    spec.kind = SynthKind::linear;
    spec.n_peds = 1;
    spec.n_windows = 4;
    spec.seed = 2;
    auto windows = build_windows(synth_generate(spec), 8, 12);

    ParamStore ps = init_model_params(cfg, 5);
    std::ostringstream log;
    settings.belief_conditioning = false;
    FitResult r = fit(windows, {}, nullptr, ps, cfg, settings, tc, &log);
    CHECK(r.history.size() == 3);
    std::istringstream in(log.str());
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 4);  // header + 3 epochs
    CHECK(log.str().rfind("epoch,nll,kl_latent,kl_belief,total,kl_weight,wall_time_s",
                          0) == 0);
}

TEST_CASE("config parsing: defaults, overrides, errors") {
    std::istringstream in(
        "# training setup\n"
        "lr = 0.0005\n"
        "batch_size = 4\n"
        "belief = off\n"
        "adjacency = knn\n"
        "knn_k = 2\n"
        "init_mode = learned\n"
        "hidden_dim = 32\n");
    FileConfig cfg = parse_config(in);
    CHECK(cfg.train.lr == 0.0005);
    CHECK(cfg.train.batch_size == 4);
    CHECK(cfg.settings.belief_conditioning == false);
    CHECK(cfg.settings.adjacency == AdjacencyMode::knn);
    CHECK(cfg.settings.knn_k == 2);
    CHECK(cfg.train.init_mode == InitMode::learned);
    CHECK(cfg.model.hidden_dim == 32);
    CHECK(cfg.train.epochs == 500);  // untouched default

    std::istringstream bad1("nonsense_key = 3\n");
    CHECK_THROWS_AS(parse_config(bad1), ConfigError);
    std::istringstream bad2("lr 0.001\n");
    CHECK_THROWS_AS(parse_config(bad2), ParseError);
}

TEST_CASE("end-to-end loss gradient matches finite differences (small config)") {
    // A slim version of the acceptance gradient gate, run on a handful of
    // parameters so the unit suite stays fast.
    ModelConfig cfg;
    cfg.feature_dim = 6;
    cfg.hidden_dim = 6;
    cfg.latent_dim = 3;
    cfg.heads = 2;
    cfg.head_dim = 3;
    InferenceSettings settings;
    settings.init_mode = InitMode::absolute;

    SynthSpec spec;
    spec.kind = SynthKind::linear;
    spec.n_peds = 2;
    spec.n_windows = 1;
    spec.noise_std = 0.05;
    spec.seed = 31;
    spec.t_obs = 2;
    spec.t_pred = 2;
    Scene scene = synth_generate(spec);
    auto windows = build_windows(scene, 2, 2);
    REQUIRE(windows.size() == 1);
    auto tracks = extract_tracks(scene);
    GlobalGrid grid = build_global_grid(tracks, compute_grid_geometry(tracks, 5));

    ParamStore ps = init_model_params(cfg, 77);
    RunContext ctx{cfg, settings, &grid, true};
    const int map_samples = 6;

    auto loss_value = [&](ParamStore& store) {
        ad::Tape tape;
        BoundParams bound(tape, store);
        std::mt19937_64 noise(55);
        LossVars lv = build_window_loss(bound, ctx, as_batch(windows[0]), noise,
                                        map_samples);
        ad::Var total = ad::add(
            lv.nll, ad::add(ad::scale(lv.kl_latent, 0.5), ad::scale(lv.belief, 10.0)));
        return total.value()(0, 0);
    };

    ParamStore work = ps;
    {
        ad::Tape tape;
        BoundParams bound(tape, work);
        std::mt19937_64 noise(55);
        LossVars lv = build_window_loss(bound, ctx, as_batch(windows[0]), noise,
                                        map_samples);
        ad::Var total = ad::add(
            lv.nll, ad::add(ad::scale(lv.kl_latent, 0.5), ad::scale(lv.belief, 10.0)));
        tape.backward(total);
        work.zero_grads();
        bound.harvest_grads();
    }

    for (const char* name : {"phi_x.l1.w", "enc.mean.w", "dec.logvar.b", "gru.w_hn",
                             "gat.head0.w", "refine.w", "init_proj.w", "prior.l1.b"}) {
        Mat numeric = mftest::finite_diff(
            [&](const Mat& w) {
                ParamStore copy = ps;
                copy.at(name) = w;
                return loss_value(copy);
            },
            ps.at(name), 1e-6);
        CHECK(mftest::max_rel_err(work.grad(name), numeric) < 1e-4);
    }
}
