#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "poi/rng.hpp"
#include "poi/trajectory.hpp"

namespace poi {

// ---------------------------------------------------------------------------
// World geometry. The arena is the unit square; the paper-scale success
// threshold of 10 cm maps to 0.1 arena units.
// ---------------------------------------------------------------------------

inline constexpr double kActionLimit = 0.1;
inline constexpr double kSuccessDistance = 0.1;
inline constexpr int kCollisionSubsteps = 8;

struct Vec2 {
    double x = 0.0, y = 0.0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

struct ObjectDisk {
    Vec2 center;
    double radius = 0.05;
    int color = 0;
};

struct ToolCapsule {
    Vec2 a, b; // endpoints
    double radius = 0.035;
};

struct WorldState {
    Vec2 agent;
    double agent_radius = 0.05;
    Domain embodiment = Domain::interaction; // rendering sprite only
    ToolCapsule tool;
    bool tool_attached = false;
    std::vector<ObjectDisk> objects;
};

inline double clamp01(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// distance from point p to segment [a,b]
inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    Vec2 ab = b - a;
    double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 0.0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
    t = clamp01(t, 0.0, 1.0);
    Vec2 q = a + ab * t;
    return (p - q).norm();
}

inline Vec2 closest_point_on_segment(Vec2 p, Vec2 a, Vec2 b) {
    Vec2 ab = b - a;
    double len2 = ab.x * ab.x + ab.y * ab.y;
    double t = len2 > 0.0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
    t = clamp01(t, 0.0, 1.0);
    return a + ab * t;
}

namespace detail {

inline void clamp_object(ObjectDisk& o) {
    o.center.x = clamp01(o.center.x, o.radius, 1.0 - o.radius);
    o.center.y = clamp01(o.center.y, o.radius, 1.0 - o.radius);
}

// Push `o` out of a disk at `c` with combined radius `rsum`, along the
// center-to-center direction by the overlap amount.
inline void resolve_disk(ObjectDisk& o, Vec2 c, double rsum) {
    Vec2 d = o.center - c;
    double dist = d.norm();
    double pen = rsum - dist;
    if (pen <= 0.0) return;
    Vec2 dir = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
    o.center = o.center + dir * pen;
    clamp_object(o);
}

inline void resolve_capsule(ObjectDisk& o, const ToolCapsule& t) {
    Vec2 q = closest_point_on_segment(o.center, t.a, t.b);
    Vec2 d = o.center - q;
    double dist = d.norm();
    double pen = t.radius + o.radius - dist;
    if (pen <= 0.0) return;
    Vec2 dir = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
    o.center = o.center + dir * pen;
    clamp_object(o);
}

} // namespace detail

// Deterministic dynamics: the agent (and attached tool) translates by the
// action, clamped to the arena; overlapped objects are displaced along the
// penetration normal. The swept shape is approximated with fixed substeps.
inline WorldState step(const WorldState& state, Vec2 action) {
    if (std::fabs(action.x) > kActionLimit + 1e-12 || std::fabs(action.y) > kActionLimit + 1e-12)
        throw DataError("step: action out of bounds (" + std::to_string(action.x) + "," +
                        std::to_string(action.y) + ")");
    WorldState s = state;
    for (int i = 0; i < kCollisionSubsteps; ++i) {
        Vec2 sub = action * (1.0 / kCollisionSubsteps);
        double nx = clamp01(s.agent.x + sub.x, s.agent_radius, 1.0 - s.agent_radius);
        double ny = clamp01(s.agent.y + sub.y, s.agent_radius, 1.0 - s.agent_radius);
        Vec2 moved{nx - s.agent.x, ny - s.agent.y};
        s.agent = {nx, ny};
        if (s.tool_attached) {
            s.tool.a = s.tool.a + moved;
            s.tool.b = s.tool.b + moved;
        }
        for (auto& o : s.objects) {
            detail::resolve_disk(o, s.agent, s.agent_radius + o.radius);
            if (s.tool_attached) detail::resolve_capsule(o, s.tool);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Rendering. Interaction agents draw as a square sprite, observer agents as a
// disk of a different color — the visual embodiment shift.
// ---------------------------------------------------------------------------

struct Rgb {
    double r, g, b;
};

inline constexpr Rgb kBackground{0.92, 0.92, 0.92};
inline constexpr Rgb kInteractionAgentColor{0.10, 0.20, 0.85};
inline constexpr Rgb kObserverAgentColor{0.85, 0.45, 0.05};
inline constexpr Rgb kToolColor{0.05, 0.60, 0.20};

inline Rgb object_color(int index) {
    static constexpr std::array<Rgb, 4> palette{
        Rgb{0.85, 0.10, 0.10}, Rgb{0.75, 0.10, 0.70}, Rgb{0.90, 0.80, 0.10},
        Rgb{0.10, 0.75, 0.75}};
    return palette[static_cast<size_t>(index) % palette.size()];
}

// Rasterize to H x W x 3 float32 in [0,1], row-major HWC. Pixel (i,j) samples
// the point ((j+0.5)/W, (i+0.5)/H).
inline std::vector<float> render(const WorldState& state, int h, int w) {
    if (h < 8 || w < 8) throw DataError("render: frame must be at least 8x8");
    std::vector<float> img(static_cast<size_t>(h) * w * 3);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            Vec2 p{(j + 0.5) / w, (i + 0.5) / h};
            Rgb c = kBackground;
            for (const auto& o : state.objects)
                if ((p - o.center).norm() <= o.radius) c = object_color(o.color);
            if (point_segment_distance(p, state.tool.a, state.tool.b) <= state.tool.radius)
                c = kToolColor;
            if (state.embodiment == Domain::interaction) {
                if (std::fabs(p.x - state.agent.x) <= state.agent_radius &&
                    std::fabs(p.y - state.agent.y) <= state.agent_radius)
                    c = kInteractionAgentColor;
            } else if ((p - state.agent).norm() <= state.agent_radius) {
                c = kObserverAgentColor;
            }
            float* px = img.data() + (static_cast<size_t>(i) * w + j) * 3;
            px[0] = static_cast<float>(c.r);
            px[1] = static_cast<float>(c.g);
            px[2] = static_cast<float>(c.b);
        }
    return img;
}

// ---------------------------------------------------------------------------
// Episode policies
// ---------------------------------------------------------------------------

// i.i.d. uniform actions, the "random robot" regime
inline Vec2 random_policy(const WorldState&, Rng& rng) {
    return {rng.uniform(-kActionLimit, kActionLimit), rng.uniform(-kActionLimit, kActionLimit)};
}

// Temporally correlated tool-use controller: approach the tool, attach on
// contact, then push each object toward its goal through the tool. Actions
// saturate toward distant targets, giving strongly correlated sequences.
class ToolUsePolicy {
public:
    ToolUsePolicy(std::vector<Vec2> goals, double noise_sigma = 0.012)
        : goals_(std::move(goals)), noise_sigma_(noise_sigma) {}

    Vec2 act(WorldState& state, Rng& rng) {
        if (!state.tool_attached) {
            Vec2 grab = (state.tool.a + state.tool.b) * 0.5;
            if ((grab - state.agent).norm() <= state.agent_radius + state.tool.radius) {
                state.tool_attached = true;
            } else {
                return control_toward(state.agent, grab, rng);
            }
        }
        // pick first object not yet at its goal
        for (size_t i = 0; i < state.objects.size() && i < goals_.size(); ++i) {
            const auto& o = state.objects[i];
            Vec2 to_goal = goals_[i] - o.center;
            if (to_goal.norm() <= 0.06) continue;
            // steer the tool mid-point behind the object, then drive through it
            Vec2 mid = (state.tool.a + state.tool.b) * 0.5;
            double d = to_goal.norm();
            Vec2 dir = to_goal * (1.0 / d);
            Vec2 contact = o.center - dir * (o.radius + state.tool.radius + 0.01);
            if ((contact - mid).norm() > 0.05)
                return control_toward(mid, contact, rng);
            return control_toward(mid, o.center + dir * 0.05, rng);
        }
        // everything placed: drift gently
        return control_toward(state.agent, {0.5, 0.5}, rng);
    }

private:
    Vec2 control_toward(Vec2 from, Vec2 target, Rng& rng) {
        Vec2 d = target - from;
        double gain = 0.6;
        Vec2 a{gain * d.x + noise_sigma_ * rng.normal(), gain * d.y + noise_sigma_ * rng.normal()};
        a.x = clamp01(a.x, -kActionLimit, kActionLimit);
        a.y = clamp01(a.y, -kActionLimit, kActionLimit);
        return a;
    }

    std::vector<Vec2> goals_;
    double noise_sigma_;
};

// ---------------------------------------------------------------------------
// Episode and dataset generation
// ---------------------------------------------------------------------------

struct EpisodeSetup {
    WorldState state;
    std::vector<Vec2> goals; // per object, used by the tool-use policy
};

// Random scene: agent, one tool, three objects, goals on the far side of the
// objects so a pushing motion is required.
inline EpisodeSetup random_scene(Rng& rng, Domain embodiment) {
    EpisodeSetup ep;
    ep.state.embodiment = embodiment;
    ep.state.agent = {rng.uniform(0.12, 0.88), rng.uniform(0.12, 0.88)};
    double cx = rng.uniform(0.3, 0.7), cy = rng.uniform(0.3, 0.7);
    double angle = rng.uniform(0.0, 6.283185307179586);
    Vec2 half{0.11 * std::cos(angle), 0.11 * std::sin(angle)};
    ep.state.tool.a = {clamp01(cx - half.x, 0.05, 0.95), clamp01(cy - half.y, 0.05, 0.95)};
    ep.state.tool.b = {clamp01(cx + half.x, 0.05, 0.95), clamp01(cy + half.y, 0.05, 0.95)};
    for (int i = 0; i < 3; ++i) {
        ObjectDisk o;
        o.color = i;
        for (int tries = 0; tries < 100; ++tries) {
            o.center = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
            bool clear = (o.center - ep.state.agent).norm() > 0.16;
            for (const auto& other : ep.state.objects)
                clear = clear && (o.center - other.center).norm() > 0.14;
            if (clear) break;
        }
        ep.state.objects.push_back(o);
        Vec2 offset{rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25)};
        ep.goals.push_back({clamp01(o.center.x + offset.x, 0.1, 0.9),
                            clamp01(o.center.y + offset.y, 0.1, 0.9)});
    }
    return ep;
}

enum class PolicyKind { random, tool_use };

struct EpisodeResult {
    Trajectory trajectory;           // training view
    std::vector<float> true_actions; // always populated; sealed for observation
    std::vector<WorldState> states;
};

inline EpisodeResult run_episode(uint64_t seed, Domain embodiment, PolicyKind policy_kind,
                                 int t, int h, int w, bool record_actions) {
    Rng rng(seed);
    EpisodeSetup ep = random_scene(rng, embodiment);
    ToolUsePolicy tool_policy(ep.goals);

    EpisodeResult res;
    res.trajectory.domain = embodiment;
    res.trajectory.t = t;
    res.trajectory.h = h;
    res.trajectory.w = w;
    res.trajectory.c = 3;
    res.trajectory.action_dim = 2;
    res.trajectory.has_actions = record_actions;

    WorldState s = ep.state;
    for (int i = 0; i < t; ++i) {
        res.states.push_back(s);
        auto frame = render(s, h, w);
        res.trajectory.frames.insert(res.trajectory.frames.end(), frame.begin(), frame.end());
        if (i + 1 < t) {
            Vec2 a = policy_kind == PolicyKind::random ? random_policy(s, rng)
                                                       : tool_policy.act(s, rng);
            res.true_actions.push_back(static_cast<float>(a.x));
            res.true_actions.push_back(static_cast<float>(a.y));
            s = step(s, a);
        }
    }
    if (record_actions) res.trajectory.actions = res.true_actions;
    return res;
}

struct DatasetSpec {
    int interaction_count = 2000;
    int observation_count = 200;
    int eval_count = 100;
    int length = 17;
    int height = 16;
    int width = 16;
    uint64_t seed = 0;
    std::string out_dir;
};

// Three splits:
//   interaction/ — own embodiment, i.i.d. random actions, tool never attached
//   observation/ — observer embodiment, correlated tool-use, actions sealed
//   eval/        — own embodiment, tool-use policy WITH recorded actions
inline void gen_dataset(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    if (spec.interaction_count < 1 || spec.observation_count < 1 || spec.eval_count < 1)
        throw DataError("gen_dataset: counts must be >= 1");
    auto write_split = [&](const std::string& split, Domain dom, PolicyKind pk,
                           bool record, bool seal, int count, uint64_t stream_base) {
        fs::create_directories(fs::path(spec.out_dir) / split);
        for (int i = 0; i < count; ++i) {
            uint64_t seed = Rng::derive(spec.seed, stream_base + static_cast<uint64_t>(i));
            auto ep = run_episode(seed, dom, pk, spec.length, spec.height, spec.width, record);
            char name[32];
            std::snprintf(name, sizeof(name), "traj_%05d.bin", i);
            save_trajectory((fs::path(spec.out_dir) / split / name).string(), ep.trajectory,
                            seal ? ep.true_actions : std::vector<float>{});
        }
    };
    write_split("interaction", Domain::interaction, PolicyKind::random, true, false,
                spec.interaction_count, 0);
    write_split("observation", Domain::observation, PolicyKind::tool_use, false, true,
                spec.observation_count, 1u << 24);
    write_split("eval", Domain::interaction, PolicyKind::tool_use, true, false, spec.eval_count,
                2u << 24);
}

inline std::vector<std::string> list_split(const std::string& data_dir, const std::string& split) {
    namespace fs = std::filesystem;
    std::vector<std::string> files;
    fs::path dir = fs::path(data_dir) / split;
    if (!fs::exists(dir)) return files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".bin") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

} // namespace poi
