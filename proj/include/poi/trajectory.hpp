#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "poi/crc32.hpp"
#include "poi/tensor.hpp"

namespace poi {

enum class Domain : uint8_t { interaction = 0, observation = 1 };

inline const char* domain_name(Domain d) {
    return d == Domain::interaction ? "interaction" : "observation";
}

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One episode. Frames are T images of H x W x C float32 in [0,1], row-major.
// Interaction trajectories carry actions ((T-1) x action_dim). Observation
// trajectories never expose actions here; their ground truth lives in a
// sealed file section readable only via load_sealed_actions().
struct Trajectory {
    Domain domain = Domain::interaction;
    int t = 0, h = 0, w = 0, c = 0;
    int action_dim = 0;
    bool has_actions = false;
    std::vector<float> frames;  // t*h*w*c
    std::vector<float> actions; // (t-1)*action_dim when has_actions

    // Frame as a CHW double tensor for the model.
    Tensor frame_tensor(int idx) const {
        Tensor out = Tensor::zeros({c, h, w});
        const float* f = frames.data() + static_cast<int64_t>(idx) * h * w * c;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int ch = 0; ch < c; ++ch)
                    out.data()[(static_cast<int64_t>(ch) * h + i) * w + j] =
                        f[(static_cast<int64_t>(i) * w + j) * c + ch];
        return out;
    }

    Tensor action_tensor(int idx) const {
        Tensor out = Tensor::zeros({action_dim});
        for (int k = 0; k < action_dim; ++k)
            out.data()[k] = actions[static_cast<int64_t>(idx) * action_dim + k];
        return out;
    }
};

namespace detail {

constexpr char kTrajMagic[8] = {'P', 'O', 'I', 'T', 'R', 'A', 'J', '1'};
constexpr char kSealedMarker[8] = {'E', 'V', 'A', 'L', 'A', 'C', 'T', 'S'};
constexpr uint16_t kTrajVersion = 1;

template <class T>
void put(std::vector<uint8_t>& buf, T v) {
    // little-endian on all supported targets
    uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.insert(buf.end(), raw, raw + sizeof(T));
}

template <class T>
T take(const std::vector<uint8_t>& buf, size_t& off) {
    if (off + sizeof(T) > buf.size()) throw DataError("trajectory file truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

} // namespace detail

// Writes the trajectory file: magic, header, frames, actions, optional sealed
// action block, trailing CRC-32 of everything after the magic.
inline void save_trajectory(const std::string& path, const Trajectory& traj,
                            const std::vector<float>& sealed_actions = {}) {
    std::vector<uint8_t> payload;
    detail::put(payload, detail::kTrajVersion);
    detail::put(payload, static_cast<uint8_t>(traj.domain));
    detail::put(payload, static_cast<uint8_t>(traj.has_actions ? 1 : 0));
    detail::put(payload, static_cast<uint32_t>(traj.t));
    detail::put(payload, static_cast<uint16_t>(traj.h));
    detail::put(payload, static_cast<uint16_t>(traj.w));
    detail::put(payload, static_cast<uint16_t>(traj.c));
    detail::put(payload, static_cast<uint16_t>(traj.action_dim));
    for (float v : traj.frames) detail::put(payload, v);
    if (traj.has_actions)
        for (float v : traj.actions) detail::put(payload, v);
    if (!sealed_actions.empty()) {
        payload.insert(payload.end(), detail::kSealedMarker, detail::kSealedMarker + 8);
        for (float v : sealed_actions) detail::put(payload, v);
    }
    uint32_t crc = Crc32::of(payload.data(), payload.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(detail::kTrajMagic, 8);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&crc), 4);
    if (!out) throw DataError("write failed: " + path);
}

namespace detail {

inline Trajectory parse_trajectory(const std::vector<uint8_t>& bytes, const std::string& path,
                                   std::vector<float>* sealed_out) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kTrajMagic, 8) != 0)
        throw DataError("bad trajectory magic: " + path);
    std::vector<uint8_t> payload(bytes.begin() + 8, bytes.end() - 4);
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (Crc32::of(payload.data(), payload.size()) != stored)
        throw DataError("trajectory CRC mismatch: " + path);

    size_t off = 0;
    Trajectory traj;
    uint16_t version = take<uint16_t>(payload, off);
    if (version != kTrajVersion) throw DataError("unsupported trajectory version: " + path);
    traj.domain = static_cast<Domain>(take<uint8_t>(payload, off));
    traj.has_actions = take<uint8_t>(payload, off) != 0;
    traj.t = static_cast<int>(take<uint32_t>(payload, off));
    traj.h = take<uint16_t>(payload, off);
    traj.w = take<uint16_t>(payload, off);
    traj.c = take<uint16_t>(payload, off);
    traj.action_dim = take<uint16_t>(payload, off);

    int64_t n_frame = static_cast<int64_t>(traj.t) * traj.h * traj.w * traj.c;
    traj.frames.resize(n_frame);
    for (int64_t i = 0; i < n_frame; ++i) traj.frames[i] = take<float>(payload, off);
    if (traj.has_actions) {
        int64_t n_act = static_cast<int64_t>(traj.t - 1) * traj.action_dim;
        traj.actions.resize(n_act);
        for (int64_t i = 0; i < n_act; ++i) traj.actions[i] = take<float>(payload, off);
    }
    if (sealed_out) {
        sealed_out->clear();
        if (off + 8 <= payload.size() &&
            std::memcmp(payload.data() + off, kSealedMarker, 8) == 0) {
            off += 8;
            int64_t n_act = static_cast<int64_t>(traj.t - 1) * traj.action_dim;
            sealed_out->resize(n_act);
            for (int64_t i = 0; i < n_act; ++i) (*sealed_out)[i] = take<float>(payload, off);
        }
    }
    return traj;
}

} // namespace detail

// Training-facing loader: the sealed action block is skipped unconditionally.
inline Trajectory load_trajectory(const std::string& path) {
    return detail::parse_trajectory(detail::read_file(path), path, nullptr);
}

// Evaluation interface: ground-truth actions of an observation trajectory.
// Throws if the file carries no sealed block.
inline std::vector<float> load_sealed_actions(const std::string& path) {
    std::vector<float> sealed;
    detail::parse_trajectory(detail::read_file(path), path, &sealed);
    if (sealed.empty()) throw DataError("no sealed action block in " + path);
    return sealed;
}

} // namespace poi
