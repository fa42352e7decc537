#include "mf/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mf {

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string file_checksum_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checksum: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    char out[20];
    std::snprintf(out, sizeof(out), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return out;
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
    nlohmann::json j;
    j["command"] = manifest.command;
    j["seed"] = manifest.seed;
    j["config"] = manifest.config;
    j["inputs"] = manifest.inputs;
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& [file, checksum] : manifest.outputs) {
        outs.push_back({{"path", file}, {"checksum", checksum}});
    }
    j["outputs"] = outs;
    j["wall_time_s"] = manifest.wall_time_s;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

HeatmapGrid plot_heatmap(const std::vector<PosSeq>& rollouts, double x_min, double y_min,
                         double x_max, double y_max, int resolution) {
    if (!(x_max > x_min) || !(y_max > y_min)) {
        throw DataError("plot_heatmap: zero-area bounds");
    }
    if (resolution < 1) throw ConfigError("plot_heatmap: resolution must be >= 1");

    HeatmapGrid grid;
    grid.x_min = x_min;
    grid.y_min = y_min;
    grid.x_max = x_max;
    grid.y_max = y_max;
    grid.res_x = resolution;
    grid.res_y = resolution;
    grid.density = Mat::Zero(resolution, resolution);

    const double dx = (x_max - x_min) / resolution;
    const double dy = (y_max - y_min) / resolution;
    std::size_t count = 0;
    for (const PosSeq& sample : rollouts) {
        for (const Mat& step : sample) {
            for (Eigen::Index p = 0; p < step.rows(); ++p) {
                int ix = static_cast<int>(std::floor((step(p, 0) - x_min) / dx));
                int iy = static_cast<int>(std::floor((step(p, 1) - y_min) / dy));
                ix = std::clamp(ix, 0, resolution - 1);
                iy = std::clamp(iy, 0, resolution - 1);
                grid.density(ix, iy) += 1.0;
                ++count;
            }
        }
    }
    if (count == 0) throw DataError("plot_heatmap: no positions to rasterize");
    grid.density /= static_cast<double>(count);
    return grid;
}

void save_heatmap_csv(std::ostream& out, const HeatmapGrid& grid) {
    out << "# x_min y_min x_max y_max res_x res_y\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# %.17g %.17g %.17g %.17g %d %d\n", grid.x_min,
                  grid.y_min, grid.x_max, grid.y_max, grid.res_x, grid.res_y);
    out << buf;
    for (int ix = 0; ix < grid.res_x; ++ix) {
        for (int iy = 0; iy < grid.res_y; ++iy) {
            if (iy) out << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", grid.density(ix, iy));
            out << buf;
        }
        out << '\n';
    }
}

HeatmapGrid load_heatmap_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("heatmap csv: empty file");
    if (!std::getline(in, line) || line.empty() || line[0] != '#') {
        throw ParseError("heatmap csv: missing geometry line");
    }
    HeatmapGrid grid;
    {
        std::istringstream ls(line.substr(1));
        if (!(ls >> grid.x_min >> grid.y_min >> grid.x_max >> grid.y_max >> grid.res_x >>
              grid.res_y)) {
            throw ParseError("heatmap csv: bad geometry line");
        }
    }
    grid.density = Mat::Zero(grid.res_x, grid.res_y);
    for (int ix = 0; ix < grid.res_x; ++ix) {
        if (!std::getline(in, line)) throw ParseError("heatmap csv: truncated rows");
        std::istringstream ls(line);
        std::string cell;
        for (int iy = 0; iy < grid.res_y; ++iy) {
            if (!std::getline(ls, cell, ',')) throw ParseError("heatmap csv: short row");
            grid.density(ix, iy) = std::stod(cell);
        }
    }
    return grid;
}

std::string render_pgm(const HeatmapGrid& grid) {
    const double peak = grid.density.maxCoeff();
    std::ostringstream out;
    out << "P2\n" << grid.res_x << ' ' << grid.res_y << "\n255\n";
    // image rows scan y from top (max) to bottom
    for (int iy = grid.res_y - 1; iy >= 0; --iy) {
        for (int ix = 0; ix < grid.res_x; ++ix) {
            if (ix) out << ' ';
            const int v =
                peak > 0.0
                    ? static_cast<int>(std::lround(255.0 * grid.density(ix, iy) / peak))
                    : 0;
            out << v;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace mf
