#ifndef FLIPCHIP_SYNTHETIC_HPP
#define FLIPCHIP_SYNTHETIC_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "constants.hpp"
#include "heightmap.hpp"
#include "vnafit.hpp"

// Generators for data with known ground truth, used by the test suites and
// by the sample-data tool.
namespace flipchip::synthetic
{
struct DeviceSpec
{
    double scan_extent_um = 13000.0; // square area covered by the scans
    double pitch_um = 50.0;
    double top_size_um = 11000.0; // centred square top chip
    heightmap::PlaneModel stage{0.0, 0.0, 0.0};
    double substrate_um = 525.2;
    double separation_um = 10.0; // top-surface height above substrate at the chip centre
    double tilt_urad = 0.0;
    double tilt_direction_rad = 0.0;
    double bow_um = 0.0; // paraboloid: mean corner height minus centre height
    double noise_um = 0.0;
    std::vector<std::pair<std::size_t, double>> artifact_scans; // (scan index, offset um)
    std::uint64_t seed = 1;
};

inline std::vector<heightmap::LineScan> make_device_scans(const DeviceSpec &spec)
{
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto n = static_cast<std::size_t>(std::lround(spec.scan_extent_um / spec.pitch_um)) + 1;
    const double centre = 0.5 * spec.scan_extent_um;
    const double half_top = 0.5 * spec.top_size_um;
    const double slope = std::tan(spec.tilt_urad / constants::urad_per_rad);
    const double gx = slope * std::cos(spec.tilt_direction_rad);
    const double gy = slope * std::sin(spec.tilt_direction_rad);
    // kappa (u^2 + v^2) - 2 kappa / 3 over u, v in [-1, 1]: zero mean, corner minus centre = 2 kappa.
    const double kappa = 0.5 * spec.bow_um;

    std::vector<heightmap::LineScan> scans(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto &scan = scans[i];
        scan.scan_index = static_cast<int>(i);
        scan.x_um = static_cast<double>(i) * spec.pitch_um;
        double offset = 0.0;
        for (const auto &[index, value] : spec.artifact_scans) {
            if (index == i) {
                offset += value;
            }
        }
        scan.samples.reserve(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double x = scan.x_um;
            const double y = static_cast<double>(j) * spec.pitch_um;
            double z = spec.stage.at(x, y);
            const double dx = x - centre;
            const double dy = y - centre;
            if (std::abs(dx) <= half_top && std::abs(dy) <= half_top) {
                const double u = dx / half_top;
                const double v = dy / half_top;
                z += spec.substrate_um + spec.separation_um + gx * dx + gy * dy +
                     kappa * (u * u + v * v - 2.0 / 3.0);
            }
            z += offset + spec.noise_um * gauss(rng);
            scan.samples.push_back({y, z});
        }
    }
    return scans;
}

struct TraceSpec
{
    vnafit::NotchParams params;
    std::size_t points = 201;
    double half_span_linewidths = 5.0;
    std::optional<double> snr_db;
    std::uint64_t seed = 1;
};

// Trace sampled over f0 +- half_span_linewidths * f0 / Q_l. Noise is complex
// Gaussian with total RMS amplitude a * 10^(-SNR/20).
inline vnafit::ComplexTrace make_notch_trace(const TraceSpec &spec)
{
    vnafit::ComplexTrace trace;
    const double linewidth = spec.params.f0 / spec.params.q_l;
    const double f_lo = spec.params.f0 - spec.half_span_linewidths * linewidth;
    const double step = 2.0 * spec.half_span_linewidths * linewidth / static_cast<double>(spec.points - 1);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sigma = spec.snr_db ? spec.params.background.amplitude * std::pow(10.0, -*spec.snr_db / 20.0) /
                                           std::sqrt(2.0)
                                     : 0.0;
    for (std::size_t k = 0; k < spec.points; ++k) {
        const double f = f_lo + static_cast<double>(k) * step;
        auto s = vnafit::notch_model(f, spec.params);
        if (sigma > 0.0) {
            const double re = gauss(rng);
            const double im = gauss(rng);
            s += vnafit::cplx(sigma * re, sigma * im);
        }
        trace.freqs.push_back(f);
        trace.s21.push_back(s);
    }
    return trace;
}

} // namespace flipchip::synthetic

#endif
