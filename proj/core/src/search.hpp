#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

namespace uveqfed::detail {

// Smallest integer x in [lo, hi] with excess(x) <= 0, for excess non-increasing
// in x. Starts at `guess`, gallops outward until the answer is bracketed, then
// closes the bracket by regula falsi with a bisection fallback (Illinois
// style). Returns nullopt when excess(hi) > 0.
//
// `slopeHint` is the expected d excess / dx (negative) used before two points
// are known. The result is exact whenever excess is monotone; otherwise it is
// some x that fits and whose predecessor does not.
template <class Excess>
std::optional<std::int64_t> smallestFitting(std::int64_t lo, std::int64_t hi, std::int64_t guess, double slopeHint,
                                            Excess&& excess) {
    std::int64_t a = lo - 1;  // largest known non-fitting point
    std::int64_t b = hi + 1;  // smallest known fitting point
    double fa = 0.0;
    double fb = 0.0;
    bool haveA = false;
    bool haveB = false;
    double slope = slopeHint < 0.0 ? slopeHint : -1.0;
    std::int64_t x = std::clamp(guess, lo, hi);
    std::int64_t lastX = x;
    double lastF = 0.0;
    bool haveLast = false;
    int lastSide = 0;
    int streak = 0;
    while (true) {
        const double f = static_cast<double>(excess(x));
        if (haveLast && x != lastX) {
            const double s = (f - lastF) / static_cast<double>(x - lastX);
            if (s < 0.0) slope = s;
        }
        lastX = x;
        lastF = f;
        haveLast = true;
        const int side = f <= 0.0 ? 1 : -1;
        if (side > 0) {
            b = x;
            fb = f;
            haveB = true;
        } else {
            a = x;
            fa = f;
            haveA = true;
        }
        streak = side == lastSide ? streak + 1 : 0;
        lastSide = side;
        if (b - a <= 1) break;

        const std::int64_t gallop = std::int64_t{1} << std::min(streak, 30);
        if (!haveB) {
            const double d = f / -slope;
            x = std::min(hi, x + std::max<std::int64_t>(gallop, static_cast<std::int64_t>(std::ceil(d * 1.05))));
        } else if (!haveA) {
            const double d = f / slope;
            x = std::max(lo, x - std::max<std::int64_t>(gallop, static_cast<std::int64_t>(std::ceil(d * 1.05))));
        } else if (streak >= 2) {
            x = a + (b - a) / 2;
        } else {
            const double t = static_cast<double>(a) + static_cast<double>(b - a) * fa / (fa - fb);
            const auto c = static_cast<std::int64_t>(side > 0 ? std::floor(t) : std::ceil(t));
            x = std::clamp(c, a + 1, b - 1);
        }
    }
    if (!haveB) return std::nullopt;
    return b;
}

}  // namespace uveqfed::detail
