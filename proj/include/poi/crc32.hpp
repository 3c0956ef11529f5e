#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace poi {

// CRC-32 (IEEE 802.3 polynomial), used as the trailing checksum of the
// trajectory and checkpoint file formats.
class Crc32 {
public:
    void update(const void* bytes, size_t n) {
        const auto* p = static_cast<const uint8_t*>(bytes);
        for (size_t i = 0; i < n; ++i)
            crc_ = table()[(crc_ ^ p[i]) & 0xff] ^ (crc_ >> 8);
    }

    uint32_t value() const { return crc_ ^ 0xffffffffu; }

    static uint32_t of(const void* bytes, size_t n) {
        Crc32 c;
        c.update(bytes, n);
        return c.value();
    }

private:
    static const std::array<uint32_t, 256>& table() {
        static const std::array<uint32_t, 256> t = [] {
            std::array<uint32_t, 256> v{};
            for (uint32_t i = 0; i < 256; ++i) {
                uint32_t c = i;
                for (int k = 0; k < 8; ++k)
                    c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
                v[i] = c;
            }
            return v;
        }();
        return t;
    }

    uint32_t crc_ = 0xffffffffu;
};

} // namespace poi
