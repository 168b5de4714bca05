#pragma once

#include <cstdint>

#include "pat/image.hpp"

namespace pat::data {

// Which augmentation ops to apply. Parameters for crop and zoom are drawn
// from the seed; flips are deterministic mirrors.
struct AugmentOps {
    bool crop = false;
    bool zoom = false;
    bool hflip = false;
    bool vflip = false;
    double zoom_min = 1.0;
    double zoom_max = 1.5;
    double crop_min_frac = 0.6667; // smallest crop side as a fraction

    bool identity() const { return !crop && !zoom && !hflip && !vflip; }
};

// Applies crop -> zoom -> hflip -> vflip; square images only. Crops and
// zooms resample back to the original size with bilinear interpolation, so
// output shape and value range match the input.
Image augment(const Image& img, const AugmentOps& ops, std::uint64_t seed);

// Random op combination for augmentation index j > 0 (j == 0 is identity).
AugmentOps sample_augment_ops(std::uint64_t seed);

} // namespace pat::data
