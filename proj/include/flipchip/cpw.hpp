#ifndef FLIPCHIP_CPW_HPP
#define FLIPCHIP_CPW_HPP

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "constants.hpp"
#include "elliptic.hpp"
#include "error.hpp"

// Quasi-static partial-capacitance model of coplanar waveguides, either planar
// or facing a second chip across a vacuum gap. Lengths are in micrometres; the
// model is scale free so only ratios of lengths enter the elliptic moduli.
namespace flipchip::cpw
{
enum class Facing
{
    planar,
    metal,
    dielectric,
};

inline std::string_view to_string(Facing facing)
{
    switch (facing) {
    case Facing::planar: return "planar";
    case Facing::metal: return "metal";
    case Facing::dielectric: return "dielectric";
    }
    return "planar";
}

inline Facing parse_facing(std::string_view text)
{
    if (text == "planar") return Facing::planar;
    if (text == "metal" || text == "m") return Facing::metal;
    if (text == "dielectric" || text == "d") return Facing::dielectric;
    throw Error(ErrorKind::validation, "unknown facing '" + std::string(text) + "'");
}

struct CpwGeometry
{
    double w_um = 10.0;
    double s_um = 5.5;
    double eps_substrate = constants::eps_silicon;
    double h_substrate_um = 525.0;
    Facing facing = Facing::planar;
    std::optional<double> d_um;
    std::optional<double> eps_superstrate;
    double h_superstrate_um = 525.0;
};

struct LineParams
{
    double c_per_len = 0.0; // F/m
    double l_per_len = 0.0; // H/m
    double z0 = 0.0;        // Ohm
    double eps_eff = 1.0;
    double v_ph = constants::c_light; // m/s
};

inline void validate(const CpwGeometry &g)
{
    using detail::require;
    require(g.w_um > 0.0 && std::isfinite(g.w_um), ErrorKind::validation, "w must be positive");
    require(g.s_um > 0.0 && std::isfinite(g.s_um), ErrorKind::validation, "s must be positive");
    require(g.h_substrate_um > 0.0, ErrorKind::validation, "substrate thickness must be positive");
    require(g.eps_substrate >= 1.0, ErrorKind::validation, "substrate permittivity must be >= 1");
    if (g.facing != Facing::planar) {
        require(g.d_um.has_value() && *g.d_um > 0.0 && std::isfinite(*g.d_um), ErrorKind::validation,
                "chip separation d must be positive for flip-chip facing");
    }
    if (g.facing == Facing::dielectric) {
        require(g.eps_superstrate.has_value(), ErrorKind::validation,
                "dielectric facing requires the opposite-chip permittivity");
        require(*g.eps_superstrate >= 1.0, ErrorKind::validation,
                "superstrate permittivity must be >= 1");
        require(g.h_superstrate_um > 0.0, ErrorKind::validation,
                "superstrate thickness must be positive");
    }
}

// Capacitances per length in units of epsilon_0, split by region.
struct PartialCapacitances
{
    double vacuum_below = 0.0;
    double vacuum_above = 0.0;
    double substrate = 0.0;
    double superstrate = 0.0;

    double air() const { return vacuum_below + vacuum_above; }
    double total() const { return air() + substrate + superstrate; }
};

inline PartialCapacitances partial_capacitances(const CpwGeometry &g)
{
    validate(g);
    using namespace elliptic;
    const double a = 0.5 * g.w_um;
    const double b = a + g.s_um;
    const double open = k_ratio(from_ratio(a, b));

    PartialCapacitances parts;
    parts.vacuum_below = 2.0 * open;
    parts.vacuum_above = 2.0 * open;
    parts.substrate = 2.0 * (g.eps_substrate - 1.0) * k_ratio(sinh_modulus(a, b, g.h_substrate_um));

    switch (g.facing) {
    case Facing::planar:
        break;
    case Facing::metal:
        parts.vacuum_above = 2.0 * k_ratio(tanh_modulus(a, b, *g.d_um));
        break;
    case Facing::dielectric: {
        // Slab from d to d + h above the strip, seen as the difference of two
        // filled half-layers.
        const double d = *g.d_um;
        const double far = k_ratio(sinh_modulus(a, b, d + g.h_superstrate_um));
        const double near = k_ratio(sinh_modulus(a, b, d));
        parts.superstrate = 2.0 * (*g.eps_superstrate - 1.0) * (far - near);
        break;
    }
    }
    return parts;
}

inline LineParams line_params(const CpwGeometry &g)
{
    const PartialCapacitances parts = partial_capacitances(g);
    const double c_air = constants::epsilon_0 * parts.air();
    const double c_total = constants::epsilon_0 * parts.total();
    detail::require(std::isfinite(c_total) && c_air > 0.0, ErrorKind::numeric,
                    "non-finite capacitance from conformal mapping");

    LineParams p;
    p.c_per_len = c_total;
    p.l_per_len = 1.0 / (constants::c_light * constants::c_light * c_air);
    p.eps_eff = c_total / c_air;
    p.v_ph = 1.0 / std::sqrt(p.l_per_len * p.c_per_len);
    p.z0 = std::sqrt(p.l_per_len / p.c_per_len);
    return p;
}

struct GapSolution
{
    double s_um = 0.0;
    double z0 = 0.0;
};

inline constexpr double gap_bracket_min_um = 0.1;
inline constexpr double gap_bracket_max_um = 100.0;

// Gap width that brings the line to target_z0. Everything but s is taken from
// `rest`.
inline GapSolution solve_gap_for_impedance(double w_um, double target_z0, CpwGeometry rest)
{
    detail::require(target_z0 > 0.0 && std::isfinite(target_z0), ErrorKind::validation,
                    "target impedance must be positive");
    rest.w_um = w_um;
    auto z_of = [&rest](double s) {
        CpwGeometry g = rest;
        g.s_um = s;
        return line_params(g).z0;
    };

    constexpr int samples = 48;
    double previous = z_of(gap_bracket_min_um);
    const double z_low = previous;
    for (int i = 1; i <= samples; ++i) {
        const double s = gap_bracket_min_um *
                         std::pow(gap_bracket_max_um / gap_bracket_min_um, double(i) / samples);
        const double z = z_of(s);
        detail::require(z > previous, ErrorKind::numeric,
                        "impedance is not monotone in the gap width over the search bracket");
        previous = z;
    }
    const double z_high = previous;
    if (target_z0 < z_low || target_z0 > z_high) {
        throw Error(ErrorKind::unreachable_impedance,
                    "target " + std::to_string(target_z0) + " Ohm outside achievable range [" +
                        std::to_string(z_low) + ", " + std::to_string(z_high) + "] Ohm");
    }

    boost::uintmax_t max_iter = 200;
    const auto [lo, hi] = boost::math::tools::toms748_solve(
        [&](double s) { return z_of(s) - target_z0; }, gap_bracket_min_um, gap_bracket_max_um,
        boost::math::tools::eps_tolerance<double>(48), max_iter);
    const double s = 0.5 * (lo + hi);
    return GapSolution{s, z_of(s)};
}

struct ShiftPoint
{
    double d_um = 0.0;
    double ratio = 1.0;
};

// v_ph(d) / v_ph(d_ref), the relative resonance shift of a line of fixed length.
inline std::vector<ShiftPoint> shift_curve(const CpwGeometry &geom, const std::vector<double> &d_values,
                                           double d_ref)
{
    detail::require(d_ref > 0.0, ErrorKind::validation, "reference separation must be positive");
    auto v_at = [&geom](double d) {
        CpwGeometry g = geom;
        g.d_um = d;
        return line_params(g).v_ph;
    };
    const double v_ref = v_at(d_ref);
    std::vector<ShiftPoint> curve;
    curve.reserve(d_values.size());
    for (double d : d_values) {
        detail::require(d > 0.0, ErrorKind::validation, "separations must be positive");
        curve.push_back({d, d == d_ref ? 1.0 : v_at(d) / v_ref});
    }
    return curve;
}

inline std::vector<double> separation_grid(double d_min, double d_max, double d_step)
{
    detail::require(d_min > 0.0 && d_max >= d_min && d_step > 0.0, ErrorKind::validation,
                    "separation grid needs 0 < d_min <= d_max and a positive step");
    std::vector<double> grid;
    const auto n = static_cast<long>(std::floor((d_max - d_min) / d_step + 1e-9));
    for (long i = 0; i <= n; ++i) {
        grid.push_back(d_min + static_cast<double>(i) * d_step);
    }
    return grid;
}

} // namespace flipchip::cpw

#endif
