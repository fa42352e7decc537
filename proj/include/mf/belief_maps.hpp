#pragma once

// Global transition-prior grid and local L x L belief maps.
//
// The scene bounding box is split into N x M bins sized by the average
// displacement magnitude; each bin holds an L x L histogram over the heat
// kernel exp(-distance) between observed next positions and the bin's
// neighbourhood centres. Lookups are total: out-of-box positions clamp to
// the boundary bin and unvisited bins fall back to the uniform map.

#include "mf/common.hpp"

#include <iosfwd>

namespace mf {

enum class GridCoarseMode {
    pooled,    // one mu/sigma over displacement magnitudes (main-text form)
    per_axis,  // separate |dx|,|dy| statistics (Algorithm-1 form)
};

struct GridGeometry {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
    int n_bins_x = 1;  // N
    int n_bins_y = 1;  // M
    double delta_x = 0.0, delta_y = 0.0;
    int local_side = 5;  // L, odd

    int num_cells() const { return local_side * local_side; }

    // bin index of a position, boundary-clamped
    std::pair<int, int> bin_of(double x, double y) const;
    Vec2 bin_centre(int ix, int iy) const;

    // The L x L neighbourhood centres of a bin, row-major from the
    // north-west corner (x increasing within a row, y decreasing across
    // rows); the bin's own centre sits at index (L*L - 1) / 2. This order
    // is part of the grid file format.
    Mat neighbour_centres(int ix, int iy) const;  // L^2 x 2
};

struct BeliefMap {
    Vec weights;  // length L^2, row-major cells; all-zero or sums to 1

    bool is_zero() const { return weights.size() == 0 || weights.isZero(0.0); }
};

struct GlobalGrid {
    GridGeometry geometry;
    std::vector<BeliefMap> maps;  // n_bins_x * n_bins_y, x-major

    int bin_index(int ix, int iy) const { return ix * geometry.n_bins_y + iy; }
};

GridGeometry compute_grid_geometry(const std::vector<Mat>& trajectories, int local_side = 5,
                                   GridCoarseMode mode = GridCoarseMode::pooled);

GlobalGrid build_global_grid(const std::vector<Mat>& trajectories,
                             const GridGeometry& geometry);

// map[i] += exp(-dist(next, centre_i)) for the 25 neighbourhood centres.
void heat_accumulate(const Vec2& next_coord, const Mat& neighbour_centres, Vec& accum);

// Total lookup: clamped bin, uniform fallback for unvisited bins.
BeliefMap lookup_belief(const GlobalGrid& grid, const Vec2& position);

BeliefMap uniform_map(int local_side);

// Candidate map from model displacement samples around position_prev's bin.
BeliefMap sample_candidate_map(const Mat& displacement_samples /* n x 2 */,
                               const Vec2& position_prev, const GridGeometry& geometry);

double histogram_kl(const BeliefMap& p, const BeliefMap& q, double eps = 1e-8);

// Text serialization; exact round-trip at double precision.
void save_grid(std::ostream& out, const GlobalGrid& grid);
void save_grid_file(const std::string& path, const GlobalGrid& grid);
GlobalGrid load_grid(std::istream& in);
GlobalGrid load_grid_file(const std::string& path);

}  // namespace mf
