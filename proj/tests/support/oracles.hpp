#pragma once

// Reference implementations that the library code is checked against. They
// favour obviousness over speed and share no code with src/.

#include "roadprompt/grid.hpp"
#include "roadprompt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using roadprompt::BinaryMask;
using roadprompt::PointPrompt;

inline BinaryMask random_mask(int h, int w, double density, std::mt19937_64& rng) {
    std::bernoulli_distribution on(density);
    BinaryMask m(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, on(rng));
    return m;
}

/// Random rectangles and strokes, so openings have something to keep.
inline BinaryMask blobby_mask(int h, int w, std::mt19937_64& rng) {
    BinaryMask m(h, w);
    std::uniform_int_distribution<int> nblobs(0, 8);
    const int n = nblobs(rng);
    for (int b = 0; b < n; ++b) {
        const int bh = std::uniform_int_distribution<int>(1, std::max(1, h / 3))(rng);
        const int bw = std::uniform_int_distribution<int>(1, std::max(1, w / 3))(rng);
        const int r0 = std::uniform_int_distribution<int>(0, h - 1)(rng);
        const int c0 = std::uniform_int_distribution<int>(0, w - 1)(rng);
        for (int r = r0; r < std::min(h, r0 + bh); ++r)
            for (int c = c0; c < std::min(w, c0 + bw); ++c) m.set(r, c, true);
    }
    std::bernoulli_distribution flip(0.02);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (flip(rng)) m.set(r, c, !m(r, c));
    return m;
}

inline BinaryMask naive_erode(const BinaryMask& m, int k) {
    const int rad = k / 2;
    BinaryMask out(m.height(), m.width());
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            bool all = true;
            for (int dr = -rad; dr <= rad && all; ++dr) {
                for (int dc = -rad; dc <= rad && all; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= m.height() || cc < 0 || cc >= m.width() || !m(rr, cc)) all = false;
                }
            }
            out.set(r, c, all);
        }
    }
    return out;
}

inline BinaryMask naive_dilate(const BinaryMask& m, int k) {
    const int rad = k / 2;
    BinaryMask out(m.height(), m.width());
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            bool any = false;
            for (int dr = -rad; dr <= rad && !any; ++dr) {
                for (int dc = -rad; dc <= rad && !any; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < m.height() && cc >= 0 && cc < m.width() && m(rr, cc)) any = true;
                }
            }
            out.set(r, c, any);
        }
    }
    return out;
}

inline bool same_patch(int r, int c, const PointPrompt& p, int lh, int lw) {
    return r / lh == p.h / lh && c / lw == p.w / lw;
}

/// Pixel kept iff its patch contains a positive prompt.
inline BinaryMask brute_positive(const BinaryMask& m, const std::vector<PointPrompt>& pos, int lh, int lw) {
    BinaryMask out(m.height(), m.width());
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            bool hit = false;
            for (const auto& p : pos) hit = hit || same_patch(r, c, p, lh, lw);
            out.set(r, c, m(r, c) && hit);
        }
    }
    return out;
}

/// Pixel zeroed iff its patch contains a negative prompt.
inline BinaryMask brute_negative(const BinaryMask& m, const std::vector<PointPrompt>& neg, int lh, int lw) {
    BinaryMask out(m.height(), m.width());
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            bool hit = false;
            for (const auto& p : neg) hit = hit || same_patch(r, c, p, lh, lw);
            out.set(r, c, m(r, c) && !hit);
        }
    }
    return out;
}

// --- losses, straight from their formulas ----------------------------------

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double dice(const std::vector<double>& p, const BinaryMask& t, double eps = 1.0) {
    double num = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        num += p[i] * t.at_flat(i);
        a += p[i];
        b += t.at_flat(i);
    }
    return 1.0 - (2.0 * num + eps) / (a + b + eps);
}

/// Mean over pixels of -w (1 - p_t)^gamma log p_t, with w = balance on road and
/// 1 on background.
inline double focal(const std::vector<double>& p, const BinaryMask& t, double gamma = 2.0, double balance = 0.25) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pt = std::clamp(t.at_flat(i) ? p[i] : 1.0 - p[i], 1e-7, 1.0 - 1e-7);
        const double w = t.at_flat(i) ? balance : 1.0;
        s += -w * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return s / static_cast<double>(p.size());
}

template <class T>
std::vector<double> sigmoid_of(const std::vector<T>& o, double sign = 1.0) {
    std::vector<double> p(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) p[i] = sig(sign * o[i]);
    return p;
}

template <class T>
double head(const std::vector<T>& o, const BinaryMask& t) {
    const auto p = sigmoid_of(o);
    return 0.3 * dice(p, t) + 0.7 * focal(p, t);
}

template <class T>
double negative_region(const std::vector<T>& o, const BinaryMask& m, const BinaryMask& mn) {
    auto p = sigmoid_of(o, -1.0);
    BinaryMask target(m.height(), m.width());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] *= m.at_flat(i);
        target.set_flat(i, m.at_flat(i) && !mn.at_flat(i));
    }
    return 0.3 * dice(p, target) + 0.7 * focal(p, target);
}

template <class T>
double recall_only(const std::vector<T>& o, const BinaryMask& m) {
    auto p = sigmoid_of(o);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] *= m.at_flat(i);
    return 0.3 * dice(p, m) + 0.7 * focal(p, m);
}

template <class T>
double highrecall(const std::vector<T>& o, const BinaryMask& m) {
    const auto p = sigmoid_of(o);
    return 0.3 * dice(p, m) + 0.65 * focal(p, m) + 0.05 * recall_only(o, m);
}

} // namespace oracle
