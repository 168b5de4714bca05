#pragma once

#include <cstdint>
#include <string>

#include "pat/image.hpp"

namespace pat::data {

enum class PhantomKind { VESSEL_TREE, DISC_SET, POINTS };

const char* phantom_kind_name(PhantomKind k);
PhantomKind phantom_kind_from_name(const std::string& s);

struct Phantom {
    Image image;
    PhantomKind kind = PhantomKind::VESSEL_TREE;
    std::uint64_t seed = 0;
};

// Procedural branching vessel trees: curved strokes of width 1-4 px and
// intensity in [0.5, 1] on a zero background. Deterministic per seed;
// nonzero fraction lands in [0.01, 0.25] for sizes 64/128/256.
Phantom generate_vessel_phantom(std::uint64_t seed, int size);

// A handful of random discs; used as a simple smooth test pattern.
Phantom generate_disc_phantom(std::uint64_t seed, int size);

// Sparse bright pixels.
Phantom generate_points_phantom(std::uint64_t seed, int size);

Phantom generate_phantom(PhantomKind kind, std::uint64_t seed, int size);

// Deterministic single centered disc (radius as a fraction of size).
Image centered_disc(int size, double radius_frac, float intensity = 1.0f);

// Single bright pixel at the image center.
Image centered_point(int size, float intensity = 1.0f);

} // namespace pat::data
