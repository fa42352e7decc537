#pragma once

// Run manifests (one per CLI invocation, with artifact checksums) and the
// heatmap artifact emitter. The CSV density grid is the testable contract;
// the PGM raster is rendered from the same numbers.

#include "mf/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>

namespace mf {

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string file_checksum_hex(const std::string& path);

struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::pair<std::string, std::string>> outputs;  // path, checksum
    double wall_time_s = 0.0;
};

void write_manifest(const std::string& path, const RunManifest& manifest);

struct HeatmapGrid {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
    int res_x = 0, res_y = 0;
    Mat density;  // res_x x res_y, cells sum to 1
};

// 2-D histogram of sampled positions over the bounds; out-of-bounds points
// clamp into the boundary cells so the total mass stays 1.
HeatmapGrid plot_heatmap(const std::vector<PosSeq>& rollouts, double x_min, double y_min,
                         double x_max, double y_max, int resolution);

void save_heatmap_csv(std::ostream& out, const HeatmapGrid& grid);
HeatmapGrid load_heatmap_csv(std::istream& in);

// 8-bit PGM scaled to the grid's max cell.
std::string render_pgm(const HeatmapGrid& grid);

}  // namespace mf
