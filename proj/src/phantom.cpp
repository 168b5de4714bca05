#include "pat/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "pat/rng.hpp"

namespace pat::data {

const char* phantom_kind_name(PhantomKind k) {
    switch (k) {
        case PhantomKind::VESSEL_TREE: return "vessel_tree";
        case PhantomKind::DISC_SET: return "disc_set";
        case PhantomKind::POINTS: return "points";
    }
    return "?";
}

PhantomKind phantom_kind_from_name(const std::string& s) {
    if (s == "vessel_tree") return PhantomKind::VESSEL_TREE;
    if (s == "disc_set") return PhantomKind::DISC_SET;
    if (s == "points") return PhantomKind::POINTS;
    throw ConfigError(msg("unknown phantom kind '", s, "'"));
}

namespace {

void stamp_disc(Image& img, double cx, double cy, double radius, float intensity) {
    const int x0 = std::max(0, int(std::floor(cx - radius - 1)));
    const int x1 = std::min(img.w - 1, int(std::ceil(cx + radius + 1)));
    const int y0 = std::max(0, int(std::floor(cy - radius - 1)));
    const int y1 = std::min(img.h - 1, int(std::ceil(cy + radius + 1)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r2) {
                img.at(y, x) = std::max(img.at(y, x), intensity);
            }
        }
    }
}

struct Walker {
    double x, y;     // position, pixels
    double angle;    // heading, radians
    double width;    // stroke width, pixels
    int depth;       // branch generation
    int steps_left;
};

} // namespace

Phantom generate_vessel_phantom(std::uint64_t seed, int size) {
    if (size != 64 && size != 128 && size != 256) {
        throw ValueError(msg("vessel phantom size must be 64, 128 or 256, got ", size));
    }
    Rng rng(mix_seed(seed, 0x76657373ULL));
    Image img(size, size);

    const double scale = size / 128.0;
    const int n_trunks = rng.range(2, 3);
    std::vector<Walker> stack;
    for (int t = 0; t < n_trunks; ++t) {
        Walker w;
        // Enter from a random border point heading inward.
        const int side = rng.range(0, 3);
        const double u = rng.uniform(0.15, 0.85) * size;
        switch (side) {
            case 0: w.x = u; w.y = 1; w.angle = 1.5707963; break;         // top
            case 1: w.x = u; w.y = size - 2; w.angle = -1.5707963; break; // bottom
            case 2: w.x = 1; w.y = u; w.angle = 0.0; break;               // left
            default: w.x = size - 2; w.y = u; w.angle = 3.1415926; break; // right
        }
        w.angle += rng.uniform(-0.5, 0.5);
        w.width = rng.uniform(2.2, 4.0) * scale;
        w.depth = 0;
        w.steps_left = int(rng.uniform(0.9, 1.4) * size);
        stack.push_back(w);
    }

    const int max_depth = 3;
    while (!stack.empty()) {
        Walker w = stack.back();
        stack.pop_back();
        const float intensity = float(rng.uniform(0.55, 1.0));
        while (w.steps_left-- > 0) {
            if (w.x < 1 || w.x > size - 2 || w.y < 1 || w.y > size - 2) break;
            stamp_disc(img, w.x, w.y, std::max(0.5, w.width / 2.0), intensity);
            w.angle += rng.uniform(-0.22, 0.22);
            w.x += std::cos(w.angle);
            w.y += std::sin(w.angle);
            w.width = std::max(0.8 * scale, w.width * 0.998);
            if (w.depth < max_depth && rng.bernoulli(0.025)) {
                Walker child = w;
                child.depth = w.depth + 1;
                child.angle += rng.bernoulli(0.5) ? rng.uniform(0.4, 0.9)
                                                  : -rng.uniform(0.4, 0.9);
                child.width = std::max(0.8 * scale, w.width * 0.7);
                child.steps_left = int(w.steps_left * rng.uniform(0.4, 0.8));
                stack.push_back(child);
            }
        }
    }

    for (auto& v : img.px) v = std::clamp(v, 0.0f, 1.0f);
    return Phantom{std::move(img), PhantomKind::VESSEL_TREE, seed};
}

Phantom generate_disc_phantom(std::uint64_t seed, int size) {
    Rng rng(mix_seed(seed, 0x64697363ULL));
    Image img(size, size);
    const int n = rng.range(3, 6);
    for (int i = 0; i < n; ++i) {
        const double r = rng.uniform(0.03, 0.12) * size;
        const double cx = rng.uniform(0.2, 0.8) * size;
        const double cy = rng.uniform(0.2, 0.8) * size;
        stamp_disc(img, cx, cy, r, float(rng.uniform(0.5, 1.0)));
    }
    return Phantom{std::move(img), PhantomKind::DISC_SET, seed};
}

Phantom generate_points_phantom(std::uint64_t seed, int size) {
    Rng rng(mix_seed(seed, 0x706f696eULL));
    Image img(size, size);
    const int n = rng.range(4, 10);
    for (int i = 0; i < n; ++i) {
        const int x = rng.range(size / 8, size - size / 8 - 1);
        const int y = rng.range(size / 8, size - size / 8 - 1);
        img.at(y, x) = float(rng.uniform(0.5, 1.0));
    }
    return Phantom{std::move(img), PhantomKind::POINTS, seed};
}

Phantom generate_phantom(PhantomKind kind, std::uint64_t seed, int size) {
    switch (kind) {
        case PhantomKind::VESSEL_TREE: return generate_vessel_phantom(seed, size);
        case PhantomKind::DISC_SET: return generate_disc_phantom(seed, size);
        case PhantomKind::POINTS: return generate_points_phantom(seed, size);
    }
    throw ValueError("unknown phantom kind");
}

Image centered_disc(int size, double radius_frac, float intensity) {
    Image img(size, size);
    const double c = (size - 1) / 2.0;
    stamp_disc(img, c, c, radius_frac * size, intensity);
    return img;
}

Image centered_point(int size, float intensity) {
    Image img(size, size);
    img.at(size / 2, size / 2) = intensity;
    return img;
}

} // namespace pat::data
