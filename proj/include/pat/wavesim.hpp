#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pat/image.hpp"

namespace pat::sim {

// Regular 2-D grid for the scalar wave equation. The imaging region is a
// centered region_px x region_px square; the detector ring sits between the
// region and the absorbing sponge along the grid border.
struct AcousticGrid {
    int nx = 0;
    int ny = 0;
    double dx = 0.0;          // meters per cell
    double sound_speed = 1500.0;
    double dt = 0.0;          // seconds
    int damping_width = 20;   // sponge cells along each border
    double region_extent = 0.010; // meters
    int region_px = 0;

    double cfl() const { return sound_speed * dt / dx; }
    // Cell (ix, iy) center in meters, origin at the grid center.
    double x_of(int ix) const { return (ix - (nx - 1) / 2.0) * dx; }
    double y_of(int iy) const { return (iy - (ny - 1) / 2.0) * dx; }

    void validate() const;
};

struct DetectorRing {
    int num_detectors = 128;
    double radius = 0.0; // meters
    std::vector<std::uint8_t> active;

    static DetectorRing full_view(int num, double radius_m) {
        DetectorRing r;
        r.num_detectors = num;
        r.radius = radius_m;
        r.active.assign(std::size_t(num), 1);
        return r;
    }

    // Uniformly spaced by angle, index 0 at angle 0.
    std::pair<double, double> position(int i) const;
    int active_count() const;
    void validate() const;
};

struct SinogramMeta {
    int nx = 0, ny = 0;
    double dx = 0.0, dt = 0.0, sound_speed = 0.0;
    int num_detectors = 0;
    double radius = 0.0;

    bool operator==(const SinogramMeta&) const = default;
};

// Recorded pressure time series, one row per active detector.
struct Sinogram {
    std::vector<int> detector_indices; // ring indices of the rows
    int num_timesteps = 0;
    double dt = 0.0;
    std::vector<double> data; // rows x timesteps, row-major
    SinogramMeta meta;

    int rows() const { return int(detector_indices.size()); }
    double& at(int row, int t) { return data[std::size_t(row) * num_timesteps + t]; }
    double at(int row, int t) const { return data[std::size_t(row) * num_timesteps + t]; }
    const double* row_data(int row) const {
        return data.data() + std::size_t(row) * num_timesteps;
    }
};

// Desk-scale geometry: grid spans 2x the imaging region so the 10 mm region
// occupies the central region_px pixels; ring radius = grid extent / 2.4.
AcousticGrid desk_grid(int region_px, double cfl_fraction = 0.6);
// Literal paper geometry: 45 mm ring, 10 mm region, grid sized to wrap the
// ring in water plus the sponge.
AcousticGrid paper_grid(int region_px = 256, double cfl_fraction = 0.6);
double desk_ring_radius(const AcousticGrid& grid);

// Timestep count covering two ring crossings (the auto default used when
// num_timesteps == 0).
int default_num_timesteps(const AcousticGrid& grid, const DetectorRing& ring);

// Solves the lossless 2-D wave equation from initial pressure p0 (zero
// initial velocity) with an exponential damping sponge, sampling pressure at
// each active detector's nearest grid node every step.
Sinogram forward_simulate(const Image& p0, const AcousticGrid& grid,
                          const DetectorRing& ring, int num_timesteps = 0,
                          std::vector<double>* energy_trace = nullptr);

// Keeps detectors with ring index == 0 mod keep_every.
Sinogram sparse_subsample(const Sinogram& sino, int keep_every);

// Runs the solver backward in time, re-imposing the recorded traces as
// Dirichlet values at detector nodes; returns the t=0 field cropped to the
// imaging region, clamped to [0, inf) and normalized to [0, 1].
Image time_reversal(const Sinogram& sino, const AcousticGrid& grid,
                    const DetectorRing& ring);

// Sinogram container: magic "PATSINO1", JSON provenance header, f32 payload.
void save_sinogram(const std::string& path, const Sinogram& sino);
Sinogram load_sinogram(const std::string& path);

SinogramMeta make_meta(const AcousticGrid& grid, const DetectorRing& ring);

} // namespace pat::sim
