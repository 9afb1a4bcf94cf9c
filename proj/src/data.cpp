#include "roadprompt/data.hpp"

#include "roadprompt/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace roadprompt {

namespace fs = std::filesystem;

const char* to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw InvalidArgument("unknown split '" + s + "'");
}

std::vector<DatasetEntry> DatasetManifest::split(Split s) const {
    std::vector<DatasetEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [s](const DatasetEntry& e) { return e.split == s; });
    return out;
}

namespace {

void sort_entries(std::vector<DatasetEntry>& entries) {
    std::stable_sort(entries.begin(), entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
        if (a.split != b.split) return a.split < b.split;
        return a.image.filename() < b.image.filename();
    });
}

DatasetManifest scan_layout(const fs::path& root) {
    DatasetManifest m{root, {}};
    for (Split s : {Split::train, Split::val, Split::test}) {
        const fs::path images = root / to_string(s) / "images";
        const fs::path masks = root / to_string(s) / "masks";
        if (!fs::is_directory(images)) continue;
        for (const auto& f : fs::directory_iterator(images)) {
            if (!f.is_regular_file() || f.path().extension() != ".png") continue;
            m.entries.push_back({s, f.path(), masks / f.path().filename()});
        }
    }
    sort_entries(m.entries);
    return m;
}

} // namespace

DatasetManifest load_manifest(const fs::path& root) {
    const fs::path index = root / kManifestFile;
    if (!fs::exists(index)) {
        if (!fs::is_directory(root)) throw RasterError("dataset root not found: " + root.string());
        return scan_layout(root);
    }
    std::ifstream in(index);
    if (!in) throw RasterError("cannot read " + index.string());
    DatasetManifest m{root, {}};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string split, image, mask;
        if (!(fields >> split >> image >> mask)) {
            throw RasterError("malformed manifest line in " + index.string() + ": " + line);
        }
        m.entries.push_back({split_from_string(split), root / image, root / mask});
    }
    sort_entries(m.entries);
    return m;
}

void write_manifest(const DatasetManifest& manifest) {
    fs::create_directories(manifest.root);
    std::ofstream out(manifest.root / kManifestFile, std::ios::trunc);
    out << "# split image mask\n";
    for (const auto& e : manifest.entries) {
        out << to_string(e.split) << ' ' << fs::relative(e.image, manifest.root).generic_string() << ' '
            << fs::relative(e.mask, manifest.root).generic_string() << '\n';
    }
}

std::pair<Image, BinaryMask> load_pair(const DatasetEntry& entry) {
    for (const auto& p : {entry.image, entry.mask}) {
        if (!fs::exists(p)) throw RasterError("missing file: " + p.string());
    }
    Image image = image_from_raster(read_png(entry.image));
    BinaryMask mask;
    try {
        mask = mask_from_raster(read_png(entry.mask));
    } catch (const RasterError& e) {
        throw RasterError(entry.mask.string() + ": " + e.what());
    }
    if (image.height != mask.height() || image.width != mask.width()) {
        throw RasterError("dimension mismatch: " + entry.image.string() + " is " +
                          std::to_string(image.height) + "x" + std::to_string(image.width) + " but " +
                          entry.mask.string() + " is " + shape_string(mask));
    }
    return {std::move(image), std::move(mask)};
}

void save_pair(const Image& image, const BinaryMask& mask, const DatasetEntry& entry) {
    write_png(entry.image, raster_from_image(image));
    write_png(entry.mask, raster_from_mask(mask));
}

// --- synthetic scenes ----------------------------------------------------------

void SyntheticSpec::validate() const {
    if (image_size < 16) throw InvalidArgument("synthetic image_size must be >= 16");
    if (count < 0) throw InvalidArgument("synthetic count must be >= 0");
    if (min_roads < 1 || max_roads < min_roads) throw InvalidArgument("invalid road count range");
    if (min_width < 1 || max_width < min_width) throw InvalidArgument("invalid road width range");
    if (low_contrast_fraction < 0.0 || low_contrast_fraction > 1.0) {
        throw InvalidArgument("low_contrast_fraction must lie in [0, 1]");
    }
    if (max_distractors < 0) throw InvalidArgument("max_distractors must be >= 0");
    if (!(min_foreground >= 0.0 && min_foreground < max_foreground && max_foreground <= 1.0)) {
        throw InvalidArgument("invalid foreground fraction range");
    }
}

namespace {

using Color = std::array<double, 3>;

// Sum of bilinearly interpolated Gaussian lattices at a few coarse scales.
std::vector<double> smooth_noise(Rng& rng, int size) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
    const std::array<int, 3> scales{16, 32, 64};
    for (int s : scales) {
        const int g = size / s + 2;
        std::vector<double> lattice(static_cast<std::size_t>(g) * g);
        for (auto& v : lattice) v = normal(rng);
        const double step = static_cast<double>(g - 2) / std::max(1, size - 1);
        for (int r = 0; r < size; ++r) {
            const double fy = r * step;
            const int y0 = std::min(static_cast<int>(fy), g - 2);
            const double ty = fy - y0;
            for (int c = 0; c < size; ++c) {
                const double fx = c * step;
                const int x0 = std::min(static_cast<int>(fx), g - 2);
                const double tx = fx - x0;
                const auto at = [&](int y, int x) { return lattice[static_cast<std::size_t>(y) * g + x]; };
                const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
                const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
                out[static_cast<std::size_t>(r) * size + c] += (top * (1 - ty) + bot * ty) / scales.size();
            }
        }
    }
    return out;
}

struct Vec2 {
    double y = 0.0, x = 0.0;
};

Vec2 edge_point(Rng& rng, int size) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int side = std::uniform_int_distribution<int>(0, 3)(rng);
    const double t = unit(rng) * (size - 1);
    switch (side) {
    case 0: return {0.0, t};
    case 1: return {size - 1.0, t};
    case 2: return {t, 0.0};
    default: return {t, size - 1.0};
    }
}

// Quadratic Bezier from p0 to p2; with p1 inside the image the whole curve is
// too (convex hull), so every stroke stays a single connected piece.
void stamp_road(BinaryMask& mask, Vec2 p0, Vec2 p1, Vec2 p2, int radius) {
    const double length = std::hypot(p1.y - p0.y, p1.x - p0.x) + std::hypot(p2.y - p1.y, p2.x - p1.x);
    const int samples = std::max(2, static_cast<int>(std::ceil(length * 3.0)));
    const double reach = radius * radius + radius * 0.5;
    for (int k = 0; k <= samples; ++k) {
        const double t = static_cast<double>(k) / samples;
        const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
        const int cy = static_cast<int>(std::lround(a * p0.y + b * p1.y + c * p2.y));
        const int cx = static_cast<int>(std::lround(a * p0.x + b * p1.x + c * p2.x));
        for (int dy = -radius; dy <= radius; ++dy) {
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dy * dy + dx * dx > reach) continue;
                const int y = cy + dy, x = cx + dx;
                if (y >= 0 && y < mask.height() && x >= 0 && x < mask.width()) mask.set(y, x, true);
            }
        }
    }
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

std::pair<Image, BinaryMask> render_synthetic(const SyntheticSpec& spec, int index) {
    spec.validate();
    const int n = spec.image_size;
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    Rng rng(seq);
    std::seed_seq tex_seq{static_cast<std::uint32_t>(spec.texture_seed),
                          static_cast<std::uint32_t>(spec.texture_seed >> 32), static_cast<std::uint32_t>(index),
                          0x7e47u};
    Rng texture_rng(tex_seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    const int min_radius = spec.min_width / 2;
    const int max_radius = std::max(min_radius, spec.max_width / 2);

    for (;;) {
        const Color base{0.35 + uniform(-0.1, 0.1), 0.45 + uniform(-0.1, 0.1), 0.25 + uniform(-0.1, 0.1)};
        const auto texture = smooth_noise(texture_rng, n);
        std::vector<Color> px(static_cast<std::size_t>(n) * n);
        const Color tint{1.0, 0.8, 0.6};
        for (std::size_t i = 0; i < px.size(); ++i) {
            for (int ch = 0; ch < 3; ++ch) px[i][ch] = base[ch] + 0.12 * texture[i] * tint[ch];
        }

        BinaryMask mask(n, n);
        const int roads = std::uniform_int_distribution<int>(spec.min_roads, spec.max_roads)(rng);
        for (int r = 0; r < roads; ++r) {
            const Vec2 p0 = edge_point(rng, n), p2 = edge_point(rng, n);
            const double bend_y = uniform(-0.25, 0.25) * n, bend_x = uniform(-0.25, 0.25) * n;
            const int radius = std::uniform_int_distribution<int>(min_radius, max_radius)(rng);
            const bool low_contrast = unit(rng) < spec.low_contrast_fraction;
            const double shade = uniform(-0.08, 0.08);
            const double lift = uniform(0.06, 0.12);
            if (std::hypot(p0.y - p2.y, p0.x - p2.x) < 0.3 * n) continue;
            const Vec2 p1{std::clamp((p0.y + p2.y) / 2 + bend_y, 0.0, n - 1.0),
                          std::clamp((p0.x + p2.x) / 2 + bend_x, 0.0, n - 1.0)};
            BinaryMask stroke(n, n);
            stamp_road(stroke, p0, p1, p2, radius);
            Color color{0.62 + shade, 0.60 + shade, 0.58 + shade};
            if (low_contrast) color = {base[0] + lift, base[1] + lift, base[2] + lift};
            for (std::size_t i = 0; i < px.size(); ++i) {
                if (!stroke.at_flat(i)) continue;
                for (int ch = 0; ch < 3; ++ch) px[i][ch] = color[ch] + 0.03 * normal(rng);
            }
            mask = mask | stroke;
        }

        const int distractors = std::uniform_int_distribution<int>(0, spec.max_distractors)(rng);
        for (int d = 0; d < distractors; ++d) {
            const int bh = std::uniform_int_distribution<int>(5, 13)(rng);
            const int bw = std::uniform_int_distribution<int>(5, 13)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, n - bh - 1)(rng);
            const int x0 = std::uniform_int_distribution<int>(0, n - bw - 1)(rng);
            const double shade = uniform(-0.1, 0.1);
            const Color color{0.62 + shade, 0.60 + shade, 0.58 + shade};
            for (int y = y0; y < y0 + bh; ++y) {
                for (int x = x0; x < x0 + bw; ++x) {
                    if (!mask(y, x)) px[static_cast<std::size_t>(y) * n + x] = color;
                }
            }
        }

        Image img(n, n);
        for (std::size_t i = 0; i < px.size(); ++i) {
            for (int ch = 0; ch < 3; ++ch) img.rgb[i * 3 + ch] = to_byte(px[i][ch] + 0.04 * normal(rng));
        }
        const double frac = static_cast<double>(mask.count()) / static_cast<double>(mask.size());
        if (frac >= spec.min_foreground && frac <= spec.max_foreground) return {std::move(img), std::move(mask)};
    }
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& root) {
    spec.validate();
    DatasetManifest manifest{root, {}};
    for (int i = 0; i < spec.count; ++i) {
        // 80/10/10 by index.
        const Split split = i * 10 < spec.count * 8 ? Split::train : (i * 10 < spec.count * 9 ? Split::val : Split::test);
        char name[32];
        std::snprintf(name, sizeof(name), "%05d.png", i);
        DatasetEntry entry{split, root / to_string(split) / "images" / name, root / to_string(split) / "masks" / name};
        auto [image, mask] = render_synthetic(spec, i);
        save_pair(image, mask, entry);
        manifest.entries.push_back(std::move(entry));
    }
    sort_entries(manifest.entries);
    write_manifest(manifest);
    return manifest;
}

} // namespace roadprompt
