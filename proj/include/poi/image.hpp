#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "poi/tensor.hpp"
#include "poi/trajectory.hpp"

namespace poi {

// Binary portable pixmap (P6), 8 bits per channel.
inline void write_ppm(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb) {
    if (static_cast<int64_t>(rgb.size()) != static_cast<int64_t>(h) * w * 3)
        throw DataError("write_ppm: rgb buffer size does not match " + std::to_string(h) + "x" +
                        std::to_string(w));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write image: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw DataError("image write failed: " + path);
}

inline uint8_t to_byte(double v) {
    double s = std::round(v * 255.0);
    return static_cast<uint8_t>(s < 0.0 ? 0.0 : (s > 255.0 ? 255.0 : s));
}

// Lays CHW frames out left-to-right, top-to-bottom with a 1-pixel separator.
inline void write_ppm_grid(const std::string& path, const std::vector<Tensor>& frames, int cols) {
    if (frames.empty()) throw DataError("write_ppm_grid: no frames");
    if (cols < 1) cols = 1;
    const Shape& s = frames[0].shape();
    if (s.size() != 3 || s[0] != 3) shape_fail("write_ppm_grid", s, {3, -1, -1});
    const int h = static_cast<int>(s[1]), w = static_cast<int>(s[2]);
    const int n = static_cast<int>(frames.size());
    if (cols > n) cols = n;
    const int rows = (n + cols - 1) / cols;
    const int gh = rows * h + (rows - 1), gw = cols * w + (cols - 1);
    std::vector<uint8_t> rgb(static_cast<size_t>(gh) * gw * 3, 255);
    for (int f = 0; f < n; ++f) {
        if (frames[static_cast<size_t>(f)].shape() != s)
            shape_fail("write_ppm_grid(frame)", frames[static_cast<size_t>(f)].shape(), s);
        const auto& d = frames[static_cast<size_t>(f)].data();
        int r0 = (f / cols) * (h + 1), c0 = (f % cols) * (w + 1);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int c = 0; c < 3; ++c)
                    rgb[(static_cast<size_t>(r0 + i) * gw + (c0 + j)) * 3 + c] =
                        to_byte(d[(static_cast<size_t>(c) * h + i) * w + j]);
    }
    write_ppm(path, gh, gw, rgb);
}

} // namespace poi
