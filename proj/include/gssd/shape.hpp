#pragma once

#include <cstdint>
#include <string>

namespace gssd {

// Dense 4-D extents in (batch, channel, height, width) order. All tensors in
// this library are 4-D; scalars are (1,1,1,1).
struct Shape {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    constexpr int64_t numel() const { return n * c * h * w; }
    constexpr int64_t plane() const { return h * w; }

    constexpr int64_t index(int64_t in, int64_t ic, int64_t ih, int64_t iw) const {
        return ((in * c + ic) * h + ih) * w + iw;
    }

    bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
    return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
           std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

}  // namespace gssd
