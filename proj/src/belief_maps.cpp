#include "mf/belief_maps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mf {

std::pair<int, int> GridGeometry::bin_of(double x, double y) const {
    auto clamp_bin = [](double v, double lo, double delta, int n) {
        if (delta <= 0.0) return 0;
        int idx = static_cast<int>(std::floor((v - lo) / delta));
        return std::clamp(idx, 0, n - 1);
    };
    return {clamp_bin(x, x_min, delta_x, n_bins_x), clamp_bin(y, y_min, delta_y, n_bins_y)};
}

Vec2 GridGeometry::bin_centre(int ix, int iy) const {
    return Vec2(x_min + (ix + 0.5) * delta_x, y_min + (iy + 0.5) * delta_y);
}

Mat GridGeometry::neighbour_centres(int ix, int iy) const {
    const int L = local_side;
    const int half = L / 2;
    const Vec2 c = bin_centre(ix, iy);
    Mat centres(L * L, 2);
    int idx = 0;
    for (int row = 0; row < L; ++row) {        // north to south
        for (int col = 0; col < L; ++col) {    // west to east
            centres(idx, 0) = c.x() + (col - half) * delta_x;
            centres(idx, 1) = c.y() + (half - row) * delta_y;
            ++idx;
        }
    }
    return centres;
}

GridGeometry compute_grid_geometry(const std::vector<Mat>& trajectories, int local_side,
                                   GridCoarseMode mode) {
    if (local_side < 1 || local_side % 2 == 0) {
        throw ConfigError("grid geometry: local map side must be odd and >= 1");
    }
    double x_min = std::numeric_limits<double>::infinity();
    double y_min = std::numeric_limits<double>::infinity();
    double x_max = -std::numeric_limits<double>::infinity();
    double y_max = -std::numeric_limits<double>::infinity();

    // displacement magnitude statistics (population std)
    double sum = 0, sum_sq = 0, sum_x = 0, sum_sq_x = 0, sum_y = 0, sum_sq_y = 0;
    std::size_t count = 0;
    for (const Mat& traj : trajectories) {
        for (Eigen::Index t = 0; t < traj.rows(); ++t) {
            x_min = std::min(x_min, traj(t, 0));
            x_max = std::max(x_max, traj(t, 0));
            y_min = std::min(y_min, traj(t, 1));
            y_max = std::max(y_max, traj(t, 1));
            if (t >= 1) {
                const double dx = traj(t, 0) - traj(t - 1, 0);
                const double dy = traj(t, 1) - traj(t - 1, 1);
                const double mag = std::hypot(dx, dy);
                sum += mag;
                sum_sq += mag * mag;
                sum_x += std::abs(dx);
                sum_sq_x += dx * dx;
                sum_y += std::abs(dy);
                sum_sq_y += dy * dy;
                ++count;
            }
        }
    }
    if (count == 0) throw DataError("grid geometry: no displacements in input");
    if (!(x_max > x_min) && !(y_max > y_min)) {
        throw DataError("grid geometry: degenerate extent (all points identical)");
    }

    auto cell_size = [count](double s, double ss) {
        const double mu = s / static_cast<double>(count);
        const double var = std::max(0.0, ss / static_cast<double>(count) - mu * mu);
        return (mu + std::sqrt(var)) / 2.0;
    };

    double cell_x, cell_y;
    if (mode == GridCoarseMode::pooled) {
        cell_x = cell_y = cell_size(sum, sum_sq);
    } else {
        cell_x = cell_size(sum_x, sum_sq_x);
        cell_y = cell_size(sum_y, sum_sq_y);
    }
    if (cell_x <= 0.0 || cell_y <= 0.0) {
        throw DataError("grid geometry: zero average displacement, no usable scale");
    }

    GridGeometry g;
    g.local_side = local_side;
    g.x_min = x_min;
    g.x_max = x_max;
    g.y_min = y_min;
    g.y_max = y_max;
    g.n_bins_x = std::max(1, static_cast<int>(std::floor((x_max - x_min) / cell_x)));
    g.n_bins_y = std::max(1, static_cast<int>(std::floor((y_max - y_min) / cell_y)));
    // a flat axis still needs a nonzero bin size for indexing and centres
    if (!(x_max > x_min)) {
        g.x_min -= cell_x / 2.0;
        g.x_max += cell_x / 2.0;
    }
    if (!(y_max > y_min)) {
        g.y_min -= cell_y / 2.0;
        g.y_max += cell_y / 2.0;
    }
    g.delta_x = (g.x_max - g.x_min) / g.n_bins_x;
    g.delta_y = (g.y_max - g.y_min) / g.n_bins_y;
    return g;
}

void heat_accumulate(const Vec2& next_coord, const Mat& centres, Vec& accum) {
    for (Eigen::Index i = 0; i < centres.rows(); ++i) {
        const double d = std::hypot(next_coord.x() - centres(i, 0),
                                    next_coord.y() - centres(i, 1));
        accum(i) += std::exp(-d);
    }
}

GlobalGrid build_global_grid(const std::vector<Mat>& trajectories,
                             const GridGeometry& geometry) {
    const int cells = geometry.num_cells();
    const int n_bins = geometry.n_bins_x * geometry.n_bins_y;

    // Gather each cell's kernel contributions and sum them in sorted order,
    // making the result independent of trajectory order (identical value
    // multisets sum identically).
    std::vector<std::vector<std::vector<double>>> contributions(
        n_bins, std::vector<std::vector<double>>(cells));

    for (const Mat& traj : trajectories) {
        for (Eigen::Index t = 0; t + 1 < traj.rows(); ++t) {
            const auto [ix, iy] = geometry.bin_of(traj(t, 0), traj(t, 1));
            const Mat centres = geometry.neighbour_centres(ix, iy);
            const int b = ix * geometry.n_bins_y + iy;
            for (int i = 0; i < cells; ++i) {
                const double d = std::hypot(traj(t + 1, 0) - centres(i, 0),
                                            traj(t + 1, 1) - centres(i, 1));
                contributions[b][i].push_back(std::exp(-d));
            }
        }
    }

    GlobalGrid grid;
    grid.geometry = geometry;
    grid.maps.resize(n_bins);
    for (int b = 0; b < n_bins; ++b) {
        Vec w = Vec::Zero(cells);
        bool any = false;
        for (int i = 0; i < cells; ++i) {
            auto& vals = contributions[b][i];
            std::sort(vals.begin(), vals.end());
            double s = 0.0;
            for (double v : vals) s += v;
            w(i) = s;
            any = any || !vals.empty();
        }
        if (any) {
            w /= w.sum();
        }
        grid.maps[b].weights = std::move(w);
    }
    return grid;
}

BeliefMap uniform_map(int local_side) {
    BeliefMap m;
    const int cells = local_side * local_side;
    m.weights = Vec::Constant(cells, 1.0 / cells);
    return m;
}

BeliefMap lookup_belief(const GlobalGrid& grid, const Vec2& position) {
    const auto [ix, iy] = grid.geometry.bin_of(position.x(), position.y());
    const BeliefMap& stored = grid.maps[grid.bin_index(ix, iy)];
    if (stored.is_zero()) return uniform_map(grid.geometry.local_side);
    return stored;
}

BeliefMap sample_candidate_map(const Mat& displacement_samples, const Vec2& position_prev,
                               const GridGeometry& geometry) {
    if (displacement_samples.rows() < 1) {
        throw DataError("sample_candidate_map: need at least one sample");
    }
    const auto [ix, iy] = geometry.bin_of(position_prev.x(), position_prev.y());
    const Mat centres = geometry.neighbour_centres(ix, iy);
    BeliefMap m;
    m.weights = Vec::Zero(geometry.num_cells());
    for (Eigen::Index s = 0; s < displacement_samples.rows(); ++s) {
        Vec2 next = position_prev + Vec2(displacement_samples(s, 0),
                                         displacement_samples(s, 1));
        heat_accumulate(next, centres, m.weights);
    }
    m.weights /= m.weights.sum();
    return m;
}

double histogram_kl(const BeliefMap& p, const BeliefMap& q, double eps) {
    if (p.weights.size() != q.weights.size()) {
        throw DataError("histogram_kl: size mismatch");
    }
    const Eigen::Index n = p.weights.size();
    const double sp = p.weights.sum() + eps * n;
    const double sq = q.weights.sum() + eps * n;
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double pi = (p.weights(i) + eps) / sp;
        const double qi = (q.weights(i) + eps) / sq;
        kl += pi * std::log(pi / qi);
    }
    return std::max(0.0, kl);  // guards tiny negative round-off for p == q
}

namespace {
constexpr const char* kGridMagic = "mfgrid";
constexpr int kGridVersion = 1;

void write_double(std::ostream& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}
}  // namespace

void save_grid(std::ostream& out, const GlobalGrid& grid) {
    const GridGeometry& g = grid.geometry;
    out << kGridMagic << ' ' << kGridVersion << ' ';
    write_double(out, g.x_min);
    out << ' ';
    write_double(out, g.y_min);
    out << ' ';
    write_double(out, g.x_max);
    out << ' ';
    write_double(out, g.y_max);
    out << ' ' << g.n_bins_x << ' ' << g.n_bins_y << ' ';
    write_double(out, g.delta_x);
    out << ' ';
    write_double(out, g.delta_y);
    out << ' ' << g.local_side << '\n';
    for (const BeliefMap& m : grid.maps) {
        for (Eigen::Index i = 0; i < m.weights.size(); ++i) {
            if (i) out << ' ';
            write_double(out, m.weights(i));
        }
        out << '\n';
    }
}

void save_grid_file(const std::string& path, const GlobalGrid& grid) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write grid file: " + path);
    save_grid(out, grid);
}

GlobalGrid load_grid(std::istream& in) {
    std::string magic;
    int version = 0;
    GridGeometry g;
    if (!(in >> magic >> version) || magic != kGridMagic) {
        throw ParseError("grid file: bad header");
    }
    if (version != kGridVersion) {
        throw ParseError("grid file: unsupported version " + std::to_string(version));
    }
    if (!(in >> g.x_min >> g.y_min >> g.x_max >> g.y_max >> g.n_bins_x >> g.n_bins_y >>
          g.delta_x >> g.delta_y >> g.local_side)) {
        throw ParseError("grid file: truncated header");
    }
    GlobalGrid grid;
    grid.geometry = g;
    const int n_bins = g.n_bins_x * g.n_bins_y;
    const int cells = g.num_cells();
    grid.maps.resize(n_bins);
    for (int b = 0; b < n_bins; ++b) {
        Vec w(cells);
        for (int i = 0; i < cells; ++i) {
            if (!(in >> w(i))) throw ParseError("grid file: truncated bin records");
        }
        grid.maps[b].weights = std::move(w);
    }
    return grid;
}

GlobalGrid load_grid_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open grid file: " + path);
    return load_grid(in);
}

}  // namespace mf
