#include "pat/wavesim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pat/io_bytes.hpp"
#include "pat/parallel.hpp"

namespace pat::sim {

using nlohmann::ordered_json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCflBound = 0.70710678118654752440; // 1/sqrt(2)

struct WaveField {
    int nx, ny;
    double r2;
    std::vector<double> prev, cur, next;
    std::vector<double> damp;

    WaveField(const AcousticGrid& g)
        : nx(g.nx), ny(g.ny), r2(g.cfl() * g.cfl()),
          prev(std::size_t(nx) * ny, 0.0), cur(prev), next(prev),
          damp(std::size_t(nx) * ny, 1.0) {
        // Exponential sponge: per-step factor exp(-sigma0*(d/width)^2*dt)
        // with sigma0*dt = 2 at the outer edge.
        const int w = g.damping_width;
        for (int iy = 0; iy < ny; ++iy) {
            for (int ix = 0; ix < nx; ++ix) {
                const int db = std::min(std::min(ix, nx - 1 - ix), std::min(iy, ny - 1 - iy));
                if (db < w) {
                    const double d = double(w - db) / double(w);
                    damp[std::size_t(iy) * nx + ix] = std::exp(-2.0 * d * d);
                }
            }
        }
    }

    // One leapfrog update into `next`, then sponge damping; no rotation.
    void compute_next() {
        parallel_for_if(std::size_t(nx) * ny > (1u << 14), ny - 2, [&](int row) {
            const int iy = row + 1;
            const double* c0 = cur.data() + std::size_t(iy) * nx;
            const double* cn = c0 - nx;
            const double* cs = c0 + nx;
            const double* p0 = prev.data() + std::size_t(iy) * nx;
            double* n0 = next.data() + std::size_t(iy) * nx;
            for (int ix = 1; ix < nx - 1; ++ix) {
                const double lap = cn[ix] + cs[ix] + c0[ix - 1] + c0[ix + 1] - 4.0 * c0[ix];
                n0[ix] = 2.0 * c0[ix] - p0[ix] + r2 * lap;
            }
        });
    }

    void apply_damping() {
        const std::size_t n = damp.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (damp[i] != 1.0) {
                next[i] *= damp[i];
                cur[i] *= damp[i];
            }
        }
    }

    void rotate() {
        std::swap(prev, cur);
        std::swap(cur, next);
    }

    // Discrete energy conserved by the undamped leapfrog scheme:
    // sum ((cur-prev)/dt)^2 + c^2 * sum grad(cur).grad(prev) (forward diffs).
    double energy(double dt, double c, double dx) const {
        double kin = 0.0, pot = 0.0;
        for (int iy = 0; iy + 1 < ny; ++iy) {
            for (int ix = 0; ix + 1 < nx; ++ix) {
                const std::size_t i = std::size_t(iy) * nx + ix;
                const double dv = (cur[i] - prev[i]) / dt;
                kin += dv * dv;
                const double gx_c = (cur[i + 1] - cur[i]) / dx;
                const double gx_p = (prev[i + 1] - prev[i]) / dx;
                const double gy_c = (cur[i + nx] - cur[i]) / dx;
                const double gy_p = (prev[i + nx] - prev[i]) / dx;
                pot += gx_c * gx_p + gy_c * gy_p;
            }
        }
        return 0.5 * kin + 0.5 * c * c * pot;
    }
};

struct DetectorNodes {
    std::vector<int> ring_index;
    std::vector<std::size_t> cell;
};

DetectorNodes locate_detectors(const AcousticGrid& g, const DetectorRing& ring,
                               const std::vector<int>* subset = nullptr) {
    DetectorNodes out;
    const double cx = (g.nx - 1) / 2.0;
    const double cy = (g.ny - 1) / 2.0;
    auto add = [&](int i) {
        if (!ring.active[std::size_t(i)]) return;
        const auto [px, py] = ring.position(i);
        const int ix = int(std::lround(px / g.dx + cx));
        const int iy = int(std::lround(py / g.dx + cy));
        if (ix < 0 || ix >= g.nx || iy < 0 || iy >= g.ny) {
            throw ValueError(msg("detector ", i, " falls outside the grid"));
        }
        out.ring_index.push_back(i);
        out.cell.push_back(std::size_t(iy) * g.nx + ix);
    };
    if (subset) {
        for (int i : *subset) add(i);
    } else {
        for (int i = 0; i < ring.num_detectors; ++i) add(i);
    }
    return out;
}

void check_geometry(const AcousticGrid& g, const DetectorRing& ring) {
    g.validate();
    ring.validate();
    const double region_half_diag = g.region_px / 2.0 * g.dx * std::sqrt(2.0);
    if (region_half_diag >= ring.radius) {
        throw ValueError(msg("imaging region (half-diagonal ", region_half_diag,
                             " m) must lie strictly inside the detector ring (radius ",
                             ring.radius, " m)"));
    }
    const double interior_half =
        (std::min(g.nx, g.ny) / 2.0 - g.damping_width - 1) * g.dx;
    if (ring.radius >= interior_half) {
        throw ValueError(msg("detector ring (radius ", ring.radius,
                             " m) must lie inside the damped boundary layer (interior ",
                             interior_half, " m)"));
    }
}

} // namespace

void AcousticGrid::validate() const {
    if (nx < 8 || ny < 8) throw ValueError(msg("grid too small: ", nx, "x", ny));
    if (dx <= 0.0 || dt <= 0.0 || sound_speed <= 0.0) {
        throw ValueError("grid dx, dt and sound speed must be positive");
    }
    if (cfl() > kCflBound * (1.0 + 1e-12)) {
        throw ValueError(msg("CFL violation: c*dt/dx = ", cfl(), " exceeds 1/sqrt(2)"));
    }
    if (region_px <= 0 || region_px > std::min(nx, ny)) {
        throw ValueError(msg("imaging region of ", region_px, " px does not fit the grid"));
    }
    if (damping_width < 1 || 2 * damping_width >= std::min(nx, ny)) {
        throw ValueError(msg("damping width ", damping_width, " invalid for grid ", nx,
                             "x", ny));
    }
}

std::pair<double, double> DetectorRing::position(int i) const {
    const double a = 2.0 * kPi * double(i) / double(num_detectors);
    return {radius * std::cos(a), radius * std::sin(a)};
}

int DetectorRing::active_count() const {
    int n = 0;
    for (auto a : active) n += a ? 1 : 0;
    return n;
}

void DetectorRing::validate() const {
    if (num_detectors < 1) throw ValueError("ring needs at least one detector");
    if (radius <= 0.0) throw ValueError("ring radius must be positive");
    if (int(active.size()) != num_detectors) {
        throw ValueError(msg("active mask has ", active.size(), " entries for ",
                             num_detectors, " detectors"));
    }
    if (active_count() == 0) throw ValueError("ring has no active detectors");
}

AcousticGrid desk_grid(int region_px, double cfl_fraction) {
    AcousticGrid g;
    g.region_px = region_px;
    g.nx = g.ny = 2 * region_px;
    g.region_extent = 0.010;
    g.dx = g.region_extent / region_px;
    g.dt = cfl_fraction * g.dx / g.sound_speed;
    g.damping_width = 20;
    return g;
}

AcousticGrid paper_grid(int region_px, double cfl_fraction) {
    AcousticGrid g;
    g.region_px = region_px;
    g.region_extent = 0.010;
    g.dx = g.region_extent / region_px;
    g.dt = cfl_fraction * g.dx / g.sound_speed;
    g.damping_width = 20;
    // 45 mm ring plus 10% water margin plus the sponge.
    const int half = int(std::ceil(0.045 * 1.1 / g.dx)) + g.damping_width;
    g.nx = g.ny = 2 * half;
    return g;
}

double desk_ring_radius(const AcousticGrid& grid) {
    return grid.nx * grid.dx / 2.4;
}

int default_num_timesteps(const AcousticGrid& grid, const DetectorRing& ring) {
    return int(std::ceil(2.2 * (2.0 * ring.radius) / (grid.sound_speed * grid.dt)));
}

SinogramMeta make_meta(const AcousticGrid& g, const DetectorRing& ring) {
    return SinogramMeta{g.nx, g.ny, g.dx, g.dt, g.sound_speed, ring.num_detectors,
                        ring.radius};
}

Sinogram forward_simulate(const Image& p0, const AcousticGrid& grid,
                          const DetectorRing& ring, int num_timesteps,
                          std::vector<double>* energy_trace) {
    check_geometry(grid, ring);
    if (p0.h != grid.region_px || p0.w != grid.region_px) {
        throw ValueError(msg("initial pressure is ", p0.h, "x", p0.w,
                             " but the imaging region is ", grid.region_px, "x",
                             grid.region_px));
    }
    for (float v : p0.px) {
        if (!(v >= -1e-6f && v <= 1.0f + 1e-6f)) {
            throw ValueError(msg("initial pressure value ", v, " outside [0, 1]"));
        }
    }
    const int nt = num_timesteps > 0 ? num_timesteps : default_num_timesteps(grid, ring);
    const int min_nt = int(std::ceil(2.0 * (2.0 * ring.radius) /
                                     (grid.sound_speed * grid.dt)));
    if (nt < min_nt) {
        throw ValueError(msg("num_timesteps ", nt, " below the two-crossing minimum ",
                             min_nt));
    }

    const auto det = locate_detectors(grid, ring);
    WaveField f(grid);

    // Embed p0 at the grid center.
    const int ox = (grid.nx - grid.region_px) / 2;
    const int oy = (grid.ny - grid.region_px) / 2;
    for (int y = 0; y < p0.h; ++y) {
        for (int x = 0; x < p0.w; ++x) {
            f.cur[std::size_t(oy + y) * grid.nx + (ox + x)] = double(p0.at(y, x));
        }
    }

    Sinogram sino;
    sino.detector_indices = det.ring_index;
    sino.num_timesteps = nt;
    sino.dt = grid.dt;
    sino.meta = make_meta(grid, ring);
    sino.data.assign(det.cell.size() * std::size_t(nt), 0.0);

    auto record = [&](int t) {
        for (std::size_t d = 0; d < det.cell.size(); ++d) {
            sino.data[d * std::size_t(nt) + t] = f.cur[det.cell[d]];
        }
    };

    record(0);
    // First step uses the zero-initial-velocity Taylor start:
    // p^1 = p^0 + (r^2/2) lap(p^0).
    f.prev = f.cur;
    f.compute_next();
    for (std::size_t i = 0; i < f.next.size(); ++i) {
        f.next[i] = f.cur[i] + 0.5 * (f.next[i] - 2.0 * f.cur[i] + f.prev[i]);
    }
    f.apply_damping();
    f.rotate();
    record(1);
    if (energy_trace) {
        energy_trace->clear();
        energy_trace->push_back(f.energy(grid.dt, grid.sound_speed, grid.dx));
    }

    for (int t = 2; t < nt; ++t) {
        f.compute_next();
        f.apply_damping();
        f.rotate();
        record(t);
        if (energy_trace) {
            energy_trace->push_back(f.energy(grid.dt, grid.sound_speed, grid.dx));
        }
    }
    return sino;
}

Sinogram sparse_subsample(const Sinogram& sino, int keep_every) {
    if (keep_every < 1) throw ValueError(msg("keep_every must be >= 1, got ", keep_every));
    if (sino.meta.num_detectors % keep_every != 0) {
        throw ValueError(msg("keep_every ", keep_every, " does not divide ",
                             sino.meta.num_detectors, " detectors"));
    }
    Sinogram out;
    out.num_timesteps = sino.num_timesteps;
    out.dt = sino.dt;
    out.meta = sino.meta;
    for (int row = 0; row < sino.rows(); ++row) {
        if (sino.detector_indices[std::size_t(row)] % keep_every != 0) continue;
        out.detector_indices.push_back(sino.detector_indices[std::size_t(row)]);
        const double* src = sino.row_data(row);
        out.data.insert(out.data.end(), src, src + sino.num_timesteps);
    }
    return out;
}

Image time_reversal(const Sinogram& sino, const AcousticGrid& grid,
                    const DetectorRing& ring) {
    check_geometry(grid, ring);
    if (!(sino.meta == make_meta(grid, ring))) {
        throw ValueError("sinogram provenance does not match the grid/ring geometry");
    }
    const auto det = locate_detectors(grid, ring, &sino.detector_indices);
    // Map solver rows back to sinogram rows (active mask may drop some).
    std::vector<int> sino_row;
    sino_row.reserve(det.ring_index.size());
    for (int ri : det.ring_index) {
        const auto it = std::find(sino.detector_indices.begin(),
                                  sino.detector_indices.end(), ri);
        sino_row.push_back(int(it - sino.detector_indices.begin()));
    }

    const int nt = sino.num_timesteps;
    WaveField f(grid);
    auto impose = [&](std::vector<double>& field, int t) {
        for (std::size_t d = 0; d < det.cell.size(); ++d) {
            field[det.cell[d]] = sino.at(sino_row[d], t);
        }
    };

    impose(f.cur, nt - 1);
    for (int k = 1; k < nt; ++k) {
        f.compute_next();
        f.apply_damping();
        impose(f.next, nt - 1 - k);
        f.rotate();
    }

    const int ox = (grid.nx - grid.region_px) / 2;
    const int oy = (grid.ny - grid.region_px) / 2;
    Image img(grid.region_px, grid.region_px);
    double mx = 0.0;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double v = std::max(0.0, f.cur[std::size_t(oy + y) * grid.nx + (ox + x)]);
            img.at(y, x) = float(v);
            mx = std::max(mx, v);
        }
    }
    if (mx > 0.0) {
        for (auto& v : img.px) v = float(double(v) / mx);
    }
    return img;
}

void save_sinogram(const std::string& path, const Sinogram& sino) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(msg("cannot open ", path, " for writing"));

    ordered_json header;
    header["detector_indices"] = sino.detector_indices;
    header["num_timesteps"] = sino.num_timesteps;
    header["dt"] = sino.dt;
    header["grid"] = {{"nx", sino.meta.nx},
                      {"ny", sino.meta.ny},
                      {"dx", sino.meta.dx},
                      {"dt", sino.meta.dt},
                      {"sound_speed", sino.meta.sound_speed}};
    header["ring"] = {{"num_detectors", sino.meta.num_detectors},
                      {"radius", sino.meta.radius}};
    const std::string hs = header.dump();

    io::write_bytes(os, "PATSINO1", 8);
    io::write_u32(os, std::uint32_t(hs.size()));
    io::write_bytes(os, hs.data(), hs.size());
    std::vector<float> payload(sino.data.begin(), sino.data.end());
    io::write_f32s(os, payload.data(), payload.size());
    if (!os) throw IoError(msg("write failed for ", path));
}

Sinogram load_sinogram(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(msg("cannot open ", path));
    io::expect_magic(is, "PATSINO1", path);
    const auto hlen = io::read_u32(is);
    ordered_json header;
    try {
        header = ordered_json::parse(io::read_string(is, hlen));
    } catch (const std::exception& e) {
        throw IoError(msg(path, ": bad header JSON: ", e.what()));
    }
    Sinogram sino;
    sino.detector_indices = header.at("detector_indices").get<std::vector<int>>();
    sino.num_timesteps = header.at("num_timesteps").get<int>();
    sino.dt = header.at("dt").get<double>();
    const auto& g = header.at("grid");
    const auto& r = header.at("ring");
    sino.meta = SinogramMeta{g.at("nx").get<int>(),  g.at("ny").get<int>(),
                             g.at("dx").get<double>(), g.at("dt").get<double>(),
                             g.at("sound_speed").get<double>(),
                             r.at("num_detectors").get<int>(),
                             r.at("radius").get<double>()};
    std::vector<float> payload(sino.detector_indices.size() *
                               std::size_t(sino.num_timesteps));
    io::read_bytes(is, payload.data(), payload.size() * sizeof(float));
    sino.data.assign(payload.begin(), payload.end());
    return sino;
}

} // namespace pat::sim
