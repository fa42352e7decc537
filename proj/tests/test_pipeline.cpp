#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mf/pipeline.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

using namespace mf;

TEST_CASE("fnv1a64: fixed vectors and sensitivity") {
    // standard FNV-1a reference values
    CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
    const char* s1 = "hello";
    const char* s2 = "hellp";
    CHECK(fnv1a64(s1, 5) != fnv1a64(s2, 5));
}

TEST_CASE("manifest: valid JSON with outputs and checksums") {
    const std::string tmp_ascii = "test_manifest_artifact.txt";
    {
        std::ofstream f(tmp_ascii);
        f << "payload";
    }
    RunManifest m;
    m.command = "synth";
    m.seed = 42;
    m.config["kind"] = "linear";
    m.inputs = {"in.txt"};
    m.outputs.emplace_back(tmp_ascii, file_checksum_hex(tmp_ascii));
    m.wall_time_s = 0.25;
    const std::string path = "test_manifest.json";
    write_manifest(path, m);

    std::ifstream in(path);
    nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j["command"] == "synth");
    CHECK(j["seed"] == 42);
    CHECK(j["config"]["kind"] == "linear");
    CHECK(j["outputs"].size() == 1);
    CHECK(j["outputs"][0]["checksum"] == file_checksum_hex(tmp_ascii));
    std::remove(path.c_str());
    std::remove(tmp_ascii.c_str());
}

TEST_CASE("plot_heatmap: point mass occupies a single cell with density 1") {
    PosSeq seq{Mat::Constant(1, 2, 3.0)};
    HeatmapGrid g = plot_heatmap({seq}, 0, 0, 10, 10, 10);
    CHECK(g.density.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.density.maxCoeff() == 1.0);
    int nonzero = 0;
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) nonzero += g.density(i, j) > 0.0;
    CHECK(nonzero == 1);
}

TEST_CASE("plot_heatmap: near-uniform sampling fills the grid evenly") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    PosSeq big;
    Mat pts(100000, 2);
    for (int i = 0; i < 100000; ++i) {
        pts(i, 0) = u(rng);
        pts(i, 1) = u(rng);
    }
    big.push_back(pts);
    HeatmapGrid g = plot_heatmap({big}, 0, 0, 10, 10, 10);
    CHECK(g.density.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(g.density.maxCoeff() / g.density.minCoeff() < 2.0);
}

TEST_CASE("plot_heatmap: zero-area bounds rejected, out-of-bounds clamp") {
    PosSeq seq{Mat::Constant(1, 2, 3.0)};
    CHECK_THROWS_AS(plot_heatmap({seq}, 0, 0, 0, 10, 10), DataError);

    PosSeq outside{(Mat(1, 2) << -100.0, 100.0).finished()};
    HeatmapGrid g = plot_heatmap({outside}, 0, 0, 10, 10, 10);
    CHECK(g.density(0, 9) == 1.0);  // clamped to the corner cell
}

TEST_CASE("heatmap CSV round-trips and re-rasterizes identically") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    Mat pts(500, 2);
    for (int i = 0; i < 500; ++i) {
        pts(i, 0) = u(rng);
        pts(i, 1) = u(rng);
    }
    HeatmapGrid g = plot_heatmap({PosSeq{pts}}, -4, -4, 4, 4, 16);

    std::ostringstream csv;
    save_heatmap_csv(csv, g);
    std::istringstream in(csv.str());
    HeatmapGrid loaded = load_heatmap_csv(in);
    CHECK(loaded.res_x == g.res_x);
    CHECK(loaded.density == g.density);  // exact round-trip
    CHECK(render_pgm(loaded) == render_pgm(g));

    std::ostringstream csv2;
    save_heatmap_csv(csv2, loaded);
    CHECK(csv.str() == csv2.str());
}

TEST_CASE("render_pgm: header and scale") {
    HeatmapGrid g;
    g.x_min = 0;
    g.y_min = 0;
    g.x_max = 1;
    g.y_max = 1;
    g.res_x = 2;
    g.res_y = 2;
    g.density = Mat::Zero(2, 2);
    g.density(0, 0) = 0.75;
    g.density(1, 1) = 0.25;
    const std::string pgm = render_pgm(g);
    CHECK(pgm.rfind("P2\n2 2\n255\n", 0) == 0);
    CHECK(pgm.find("255") != std::string::npos);
}
