#include "mf/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace mf {

namespace {

void sort_scene(Scene& scene) {
    std::sort(scene.annotations.begin(), scene.annotations.end(),
              [](const Annotation& a, const Annotation& b) {
                  if (a.ped_id != b.ped_id) return a.ped_id < b.ped_id;
                  return a.frame < b.frame;
              });
}

void check_integrity(const Scene& scene) {
    for (std::size_t i = 1; i < scene.annotations.size(); ++i) {
        const Annotation& prev = scene.annotations[i - 1];
        const Annotation& cur = scene.annotations[i];
        if (prev.ped_id == cur.ped_id && prev.frame == cur.frame) {
            throw IntegrityError("duplicate (frame, ped_id) pair: frame " +
                                 std::to_string(cur.frame) + ", ped " +
                                 std::to_string(cur.ped_id));
        }
    }
}

}  // namespace

Scene parse_annotations(std::istream& stream, const AnnotationLayout& layout) {
    Scene scene;
    std::string line;
    int line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        std::istringstream ls(line);
        double fields[4];
        for (int i = 0; i < 4; ++i) {
            if (!(ls >> fields[i])) {
                throw ParseError("line " + std::to_string(line_no) +
                                 ": expected 4 numeric fields");
            }
        }
        std::string trailing;
        if (ls >> trailing) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": trailing fields after 4 columns");
        }
        Annotation a;
        a.frame = static_cast<std::int64_t>(std::llround(fields[layout.frame]));
        a.ped_id = static_cast<std::int64_t>(std::llround(fields[layout.ped]));
        a.x = fields[layout.x];
        a.y = fields[layout.y];
        scene.annotations.push_back(a);
    }
    sort_scene(scene);
    check_integrity(scene);
    return scene;
}

Scene parse_annotations_file(const std::string& path, const AnnotationLayout& layout) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open annotation file: " + path);
    return parse_annotations(in, layout);
}

void write_annotations(std::ostream& out, const Scene& scene) {
    out.precision(17);
    for (const Annotation& a : scene.annotations) {
        out << a.frame << '\t' << a.ped_id << '\t' << a.x << '\t' << a.y << '\n';
    }
}

std::vector<SceneWindow> build_windows(const Scene& scene, int t_obs, int t_pred,
                                       std::optional<int> stride_opt) {
    if (t_obs < 1 || t_pred < 1) throw ConfigError("build_windows: t_obs and t_pred must be >= 1");
    const int T = t_obs + t_pred;
    const int stride = stride_opt.value_or(T);
    if (stride < 1) throw ConfigError("build_windows: stride must be >= 1");

    // global frame axis
    std::set<std::int64_t> frame_set;
    for (const auto& a : scene.annotations) frame_set.insert(a.frame);
    std::vector<std::int64_t> frames(frame_set.begin(), frame_set.end());

    // ped -> (frame -> position), peds iterated in id order
    std::map<std::int64_t, std::map<std::int64_t, Vec2>> tracks;
    for (const auto& a : scene.annotations) tracks[a.ped_id][a.frame] = Vec2(a.x, a.y);

    std::vector<SceneWindow> windows;
    for (std::size_t s = 0; s + static_cast<std::size_t>(T) <= frames.size(); s += stride) {
        std::vector<std::int64_t> peds;
        for (const auto& [ped, track] : tracks) {
            bool full = true;
            for (int t = 0; t < T && full; ++t) {
                if (!track.count(frames[s + t])) full = false;
            }
            if (full) peds.push_back(ped);
        }
        if (peds.empty()) continue;

        SceneWindow w;
        w.ped_ids = peds;
        w.t_obs = t_obs;
        w.t_pred = t_pred;
        w.abs_positions.resize(T);
        for (int t = 0; t < T; ++t) {
            Mat pos(static_cast<Eigen::Index>(peds.size()), 2);
            for (std::size_t p = 0; p < peds.size(); ++p) {
                pos.row(static_cast<Eigen::Index>(p)) =
                    tracks[peds[p]][frames[s + t]].transpose();
            }
            w.abs_positions[t] = std::move(pos);
        }
        w.displacements = to_displacements(w.abs_positions);
        windows.push_back(std::move(w));
    }
    return windows;
}

Mat to_displacements(const Mat& abs_xy) {
    Mat d = Mat::Zero(abs_xy.rows(), abs_xy.cols());
    for (Eigen::Index t = 1; t < abs_xy.rows(); ++t) {
        d.row(t) = abs_xy.row(t) - abs_xy.row(t - 1);
    }
    return d;
}

PosSeq to_displacements(const PosSeq& abs_steps) {
    PosSeq d(abs_steps.size());
    if (abs_steps.empty()) return d;
    d[0] = Mat::Zero(abs_steps[0].rows(), abs_steps[0].cols());
    for (std::size_t t = 1; t < abs_steps.size(); ++t) {
        d[t] = abs_steps[t] - abs_steps[t - 1];
    }
    return d;
}

PosSeq reconstruct_absolute(const PosSeq& displacements, const Mat& start) {
    PosSeq abs(displacements.size());
    if (displacements.empty()) return abs;
    Mat cur = start + displacements[0];
    abs[0] = cur;
    for (std::size_t t = 1; t < displacements.size(); ++t) {
        cur += displacements[t];
        abs[t] = cur;
    }
    return abs;
}

Scene center_scene(const Scene& scene, double cx, double cy) {
    Scene out = scene;
    for (auto& a : out.annotations) {
        a.x -= cx;
        a.y -= cy;
    }
    return out;
}

namespace {

// One synthetic episode occupies T consecutive frames; episodes are disjoint
// in both frame range and pedestrian ids, so default-stride windowing
// recovers exactly one window per episode.
struct EpisodeWriter {
    Scene& scene;
    int T;
    void emit(int episode, int ped_in_episode, int n_peds, const Mat& track) {
        for (int t = 0; t < T; ++t) {
            Annotation a;
            a.frame = static_cast<std::int64_t>(episode) * T + t;
            a.ped_id = static_cast<std::int64_t>(episode) * n_peds + ped_in_episode;
            a.x = track(t, 0);
            a.y = track(t, 1);
            scene.annotations.push_back(a);
        }
    }
};

Eigen::Rotation2D<double> rot(double radians) { return Eigen::Rotation2D<double>(radians); }

}  // namespace

SynthOutput synth_generate_detailed(const SynthSpec& spec) {
    if (spec.n_peds < 1 || spec.n_windows < 1) {
        throw ConfigError("synth_generate: n_peds and n_windows must be >= 1");
    }
    const int T = spec.t_obs + spec.t_pred;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SynthOutput out;
    out.scene.dt = 0.4;
    EpisodeWriter writer{out.scene, T};

    // The linear kind is a coherent flow: one heading and speed per scene,
    // so every bin's belief map encodes a single consistent transition.
    const double flow_heading = unit(rng) * 2.0 * M_PI;
    const double flow_speed = 0.3 + 0.5 * unit(rng);
    const Vec2 flow_vel = flow_speed * Vec2(std::cos(flow_heading), std::sin(flow_heading));

    for (int w = 0; w < spec.n_windows; ++w) {
        for (int p = 0; p < spec.n_peds; ++p) {
            Vec2 start(unit(rng) * 10.0, unit(rng) * 10.0);
            Mat track(T, 2);
            int label = 0;
            switch (spec.kind) {
                case SynthKind::linear: {
                    // keep the whole track inside [0, 20]^2 with a margin
                    const Vec2 span = (T - 1) * flow_vel;
                    const double lo_x = 0.5 + std::max(0.0, -span.x());
                    const double hi_x = 19.5 - std::max(0.0, span.x());
                    const double lo_y = 0.5 + std::max(0.0, -span.y());
                    const double hi_y = 19.5 - std::max(0.0, span.y());
                    start = Vec2(lo_x + (hi_x - lo_x) * unit(rng),
                                 lo_y + (hi_y - lo_y) * unit(rng));
                    for (int t = 0; t < T; ++t) {
                        track.row(t) = (start + t * flow_vel).transpose();
                    }
                    break;
                }
                case SynthKind::y_fork:
                case SynthKind::t_junction: {
                    // One junction shared by the whole scene: every track walks
                    // the same stem corridor along +y and splits left or right
                    // at the junction, so the junction bins see both branches.
                    // Step length sits in the heat kernel's sharp regime
                    // (exp(-d) has unit bandwidth), keeping the maps contrasty.
                    const double speed = 2.5;
                    label = unit(rng) < 0.5 ? -1 : 1;
                    const double angle =
                        spec.kind == SynthKind::y_fork ? M_PI / 4.0 : M_PI / 2.0;
                    const Vec2 stem_vel(0.0, speed);
                    const Vec2 branch_vel = rot(-label * angle) * stem_vel;
                    // the junction sits at the shared origin; the turn lands a
                    // step or two into the prediction horizon
                    const int turn_step =
                        spec.t_obs + 2 + static_cast<int>(unit(rng) * 2.0);
                    start = Vec2(0.0, -speed * turn_step);
                    Vec2 pos = start;
                    for (int t = 0; t < T; ++t) {
                        track.row(t) = pos.transpose();
                        pos += (t + 1 <= turn_step) ? stem_vel : branch_vel;
                    }
                    break;
                }
                default:
                    throw ConfigError("synth_generate: unknown kind");
            }
            if (spec.noise_std > 0.0) {
                for (int t = 0; t < T; ++t) {
                    track(t, 0) += spec.noise_std * gauss(rng);
                    track(t, 1) += spec.noise_std * gauss(rng);
                }
            }
            writer.emit(w, p, spec.n_peds, track);
            if (spec.kind != SynthKind::linear) out.branch_labels.push_back(label);
        }
    }
    sort_scene(out.scene);
    return out;
}

Scene synth_generate(const SynthSpec& spec) { return synth_generate_detailed(spec).scene; }

SynthKind synth_kind_from_string(const std::string& name) {
    if (name == "linear") return SynthKind::linear;
    if (name == "y_fork") return SynthKind::y_fork;
    if (name == "t_junction") return SynthKind::t_junction;
    throw ConfigError("unknown synthetic kind: " + name);
}

std::vector<Mat> extract_tracks(const Scene& scene) {
    std::map<std::int64_t, std::vector<Vec2>> per_ped;
    for (const auto& a : scene.annotations) per_ped[a.ped_id].emplace_back(a.x, a.y);
    std::vector<Mat> tracks;
    tracks.reserve(per_ped.size());
    for (const auto& [ped, pts] : per_ped) {
        Mat m(static_cast<Eigen::Index>(pts.size()), 2);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
        }
        tracks.push_back(std::move(m));
    }
    return tracks;
}

}  // namespace mf
