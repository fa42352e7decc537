#pragma once

// Annotation ingestion, co-present scene windows, displacement encoding and
// synthetic scene generation.
//
// Windows are cut on the scene's global frame axis (the sorted list of
// distinct frame values); a pedestrian joins a window only when present at
// every one of its T consecutive frames. Displacements are per-step
// coordinate differences with the first step pinned to (0,0) so arrays stay
// rectangular and rollouts anchor at the observed start.

#include "mf/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>

namespace mf {

struct Annotation {
    std::int64_t frame = 0;
    std::int64_t ped_id = 0;
    double x = 0.0;
    double y = 0.0;
};

struct Scene {
    std::vector<Annotation> annotations;  // sorted by (ped_id, frame)
    double dt = 0.4;                      // seconds per tick, metadata only
};

struct SceneWindow {
    std::vector<std::int64_t> ped_ids;
    PosSeq abs_positions;   // T entries of P x 2
    PosSeq displacements;   // T entries of P x 2, step 0 is all zeros
    int t_obs = 8;
    int t_pred = 12;

    int total_steps() const { return t_obs + t_pred; }
    Eigen::Index num_peds() const {
        return abs_positions.empty() ? 0 : abs_positions.front().rows();
    }
};

// Column order of an annotation file; values are column indices of
// frame, ped_id, x, y respectively. Default matches ETH/UCY-style files.
struct AnnotationLayout {
    int frame = 0;
    int ped = 1;
    int x = 2;
    int y = 3;
};

enum class SynthKind { linear, y_fork, t_junction };

struct SynthSpec {
    SynthKind kind = SynthKind::linear;
    int n_peds = 1;
    int n_windows = 1;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    int t_obs = 8;
    int t_pred = 12;
};

struct SynthOutput {
    Scene scene;
    // per (window, ped) branch label; 0 = straight/left stem-only, +1/-1 for
    // fork/turn direction. Empty for kinds without a branching decision.
    std::vector<int> branch_labels;
};

Scene parse_annotations(std::istream& stream, const AnnotationLayout& layout = {});
Scene parse_annotations_file(const std::string& path, const AnnotationLayout& layout = {});
void write_annotations(std::ostream& out, const Scene& scene);

std::vector<SceneWindow> build_windows(const Scene& scene, int t_obs = 8, int t_pred = 12,
                                       std::optional<int> stride = std::nullopt);

Mat to_displacements(const Mat& abs_xy);           // T x 2 for one pedestrian
PosSeq to_displacements(const PosSeq& abs_steps);  // T entries of P x 2
PosSeq reconstruct_absolute(const PosSeq& displacements, const Mat& start);

Scene center_scene(const Scene& scene, double cx, double cy);

Scene synth_generate(const SynthSpec& spec);
SynthOutput synth_generate_detailed(const SynthSpec& spec);

SynthKind synth_kind_from_string(const std::string& name);

// Per-pedestrian full tracks (each T_i x 2), in ped_id order. Used for grid
// construction over a training scene.
std::vector<Mat> extract_tracks(const Scene& scene);

}  // namespace mf
