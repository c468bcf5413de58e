#ifndef FLIPCHIP_RESONATOR_HPP
#define FLIPCHIP_RESONATOR_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "constants.hpp"
#include "error.hpp"

// Quarter-wave resonator capacitively loaded by its feedline coupler.
//
// With electrical length theta = omega * l / v_ph the loaded resonance obeys
//     cot(theta) = b * omega,    b = (C_c + C_cgr) * Z0_r,
// which expands around theta = pi/2 to omega = (pi/2) / (l / v_ph + b).
namespace flipchip::resonator
{
struct ResonatorRecord
{
    int index = 0;
    double length_um = 0.0;
    std::optional<double> measured_f_ghz;
    std::string facing;
    std::string copy_id;
};

// Circuit values are in fF and Ohm. C_cgf only enters beyond first order and
// is carried for completeness.
struct CouplerModel
{
    double c_c_ff = 0.44;
    double c_cgr_ff = 0.6;
    double c_cgf_ff = 0.6;
    double z0_r = 50.0;
    double z0_f = 50.0;

    double loading_time() const { return (c_c_ff + c_cgr_ff) * 1e-15 * z0_r; }
};

struct Frequency
{
    double omega = 0.0; // rad/s
    double f_hz = 0.0;
};

inline Frequency from_omega(double omega) { return {omega, omega / (2.0 * constants::pi)}; }

inline double quarter_wave_delay(double length_um, double v_ph)
{
    detail::require(length_um > 0.0 && v_ph > 0.0, ErrorKind::validation,
                    "length and phase velocity must be positive");
    return length_um * constants::um / v_ph;
}

inline Frequency loaded_frequency_approx(double length_um, double v_ph, double b)
{
    const double denominator = quarter_wave_delay(length_um, v_ph) + b;
    detail::require(denominator > 0.0, ErrorKind::domain, "l / v_ph + b must be positive");
    return from_omega(0.5 * constants::pi / denominator);
}

// Fundamental root of cot(omega l / v_ph) = b omega, bracketed in
// (0.5, 1.5) x the first-order solution and bisected to machine precision.
inline Frequency loaded_frequency_exact(double length_um, double v_ph, double b)
{
    const double delay = quarter_wave_delay(length_um, v_ph);
    const double approx = loaded_frequency_approx(length_um, v_ph, b).omega;
    // cos - b w sin keeps the function continuous through theta = pi.
    auto condition = [&](double omega) {
        const double theta = omega * delay;
        return std::cos(theta) - b * omega * std::sin(theta);
    };
    const double lo = 0.5 * approx;
    const double hi = std::min(1.5 * approx, (constants::pi - 1e-9) / delay);
    if (!(condition(lo) > 0.0 && condition(hi) < 0.0)) {
        throw Error(ErrorKind::root_not_found, "resonance condition has no sign change in bracket");
    }
    boost::uintmax_t max_iter = 200;
    const auto [a, z] = boost::math::tools::bisect(condition, lo, hi, boost::math::tools::eps_tolerance<double>(), max_iter);
    return from_omega(0.5 * (a + z));
}

// Length whose first-order loaded resonance sits at target_f_ghz.
inline double design_length(double target_f_ghz, double v_ph, double b)
{
    detail::require(target_f_ghz > 0.0 && v_ph > 0.0, ErrorKind::validation,
                    "target frequency and phase velocity must be positive");
    const double omega = 2.0 * constants::pi * target_f_ghz * 1e9;
    const double length_m = v_ph * (0.5 * constants::pi / omega - b);
    if (!(length_m > 0.0)) {
        throw Error(ErrorKind::target_unreachable,
                    "loading time b exceeds the quarter period of the target frequency");
    }
    return length_m / constants::um;
}

struct FrequencyFit
{
    double v_ph = 0.0;
    double b = 0.0;
    double residual_rms_mhz = 0.0;
    std::vector<int> indices;
    std::vector<double> lengths_um;
    std::vector<double> mean_f_ghz;
    std::vector<double> residuals_mhz; // model minus measurement
};

// Averages copies per resonator index, then solves the exactly linear model
// 1 / (4 f) = l / v_ph + b by ordinary least squares.
inline FrequencyFit fit_vph(const std::vector<ResonatorRecord> &records)
{
    struct Accumulator
    {
        double length_um = 0.0;
        double sum_f = 0.0;
        int count = 0;
    };
    std::map<int, Accumulator> by_index;
    for (const auto &r : records) {
        if (!r.measured_f_ghz) {
            continue;
        }
        detail::require(r.length_um > 0.0 && *r.measured_f_ghz > 0.0, ErrorKind::validation,
                        "lengths and frequencies must be positive");
        auto &acc = by_index[r.index];
        if (acc.count > 0) {
            detail::require(acc.length_um == r.length_um, ErrorKind::validation,
                            "resonator " + std::to_string(r.index) + " listed with two lengths");
        }
        acc.length_um = r.length_um;
        acc.sum_f += *r.measured_f_ghz;
        ++acc.count;
    }
    detail::require(by_index.size() >= 2, ErrorKind::singular_fit,
                    "need at least two resonators with measured frequencies");

    FrequencyFit fit;
    for (const auto &[index, acc] : by_index) {
        fit.indices.push_back(index);
        fit.lengths_um.push_back(acc.length_um);
        fit.mean_f_ghz.push_back(acc.sum_f / acc.count);
    }

    const auto n = static_cast<double>(fit.indices.size());
    double mean_x = 0.0;
    double mean_y = 0.0;
    for (std::size_t i = 0; i < fit.indices.size(); ++i) {
        mean_x += fit.lengths_um[i] * constants::um;
        mean_y += 0.25 / (fit.mean_f_ghz[i] * 1e9);
    }
    mean_x /= n;
    mean_y /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (std::size_t i = 0; i < fit.indices.size(); ++i) {
        const double dx = fit.lengths_um[i] * constants::um - mean_x;
        const double dy = 0.25 / (fit.mean_f_ghz[i] * 1e9) - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
    }
    detail::require(sxx > 1e-24 * mean_x * mean_x * n, ErrorKind::singular_fit,
                    "all resonator lengths are equal");
    const double slope = sxy / sxx;
    detail::require(slope > 0.0, ErrorKind::singular_fit,
                    "frequency does not decrease with length; no positive phase velocity");
    fit.v_ph = 1.0 / slope;
    fit.b = mean_y - slope * mean_x;

    double sum_sq = 0.0;
    for (std::size_t i = 0; i < fit.indices.size(); ++i) {
        const double model = 1.0 / (4.0 * (fit.lengths_um[i] * constants::um / fit.v_ph + fit.b));
        const double r = (model - fit.mean_f_ghz[i] * 1e9) * 1e-6;
        fit.residuals_mhz.push_back(r);
        sum_sq += r * r;
    }
    fit.residual_rms_mhz = std::sqrt(sum_sq / n);
    return fit;
}

struct Deviation
{
    int index = 0;
    std::string copy_id;
    double deviation_mhz = 0.0;
};

struct DeviationStats
{
    std::vector<Deviation> deviations;
    double mean_abs_mhz = 0.0;
    double max_abs_mhz = 0.0;
    double max_pair_spread_mhz = 0.0; // largest difference between two copies of one resonator
};

using CopyTable = std::map<std::string, std::vector<std::pair<int, double>>>;

// Copy-to-copy frequency scatter: each measured frequency minus the mean over
// all copies of that resonator index. Only indices present on two or more
// copies contribute.
inline DeviationStats deviation_stats(const CopyTable &copies)
{
    detail::require(copies.size() >= 2, ErrorKind::validation, "need at least two copies");
    std::map<int, std::vector<std::pair<std::string, double>>> by_index;
    for (const auto &[copy, rows] : copies) {
        for (const auto &[index, f_ghz] : rows) {
            by_index[index].emplace_back(copy, f_ghz);
        }
    }
    DeviationStats stats;
    double sum_abs = 0.0;
    for (const auto &[index, entries] : by_index) {
        if (entries.size() < 2) {
            continue;
        }
        double mean = 0.0;
        double lo = entries.front().second;
        double hi = lo;
        for (const auto &e : entries) {
            mean += e.second;
            lo = std::min(lo, e.second);
            hi = std::max(hi, e.second);
        }
        mean /= static_cast<double>(entries.size());
        for (const auto &[copy, f] : entries) {
            const double dev = (f - mean) * 1e3;
            stats.deviations.push_back({index, copy, dev});
            sum_abs += std::abs(dev);
            stats.max_abs_mhz = std::max(stats.max_abs_mhz, std::abs(dev));
        }
        stats.max_pair_spread_mhz = std::max(stats.max_pair_spread_mhz, (hi - lo) * 1e3);
    }
    detail::require(!stats.deviations.empty(), ErrorKind::no_shared_indices,
                    "no resonator index is shared by two copies");
    stats.mean_abs_mhz = sum_abs / static_cast<double>(stats.deviations.size());
    return stats;
}

} // namespace flipchip::resonator

#endif
