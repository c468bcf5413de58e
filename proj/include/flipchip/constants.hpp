#ifndef FLIPCHIP_CONSTANTS_HPP
#define FLIPCHIP_CONSTANTS_HPP

#include <numbers>

namespace flipchip::constants
{
inline constexpr double pi = std::numbers::pi;
inline constexpr double c_light = 299792458.0;        // m/s
inline constexpr double epsilon_0 = 8.8541878128e-12; // F/m
inline constexpr double mu_0 = 1.0 / (epsilon_0 * c_light * c_light);
inline constexpr double hbar = 1.054571817e-34; // J s

inline constexpr double um = 1e-6;
inline constexpr double urad_per_rad = 1e6;

// Relative permittivity of high-resistivity silicon at cryogenic temperature.
inline constexpr double eps_silicon = 11.45;
} // namespace flipchip::constants

#endif
