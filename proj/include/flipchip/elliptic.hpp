#ifndef FLIPCHIP_ELLIPTIC_HPP
#define FLIPCHIP_ELLIPTIC_HPP

#include <cmath>

#include "constants.hpp"
#include "error.hpp"

namespace flipchip::elliptic
{
// Modulus k together with its complement k' = sqrt(1 - k^2). Both are kept
// because the conformal maps below lose all precision if k' is recovered from
// a k that sits close to 1.
struct Modulus
{
    double k = 0.0;
    double kp = 1.0;
};

inline double agm(double a, double b)
{
    constexpr int max_iterations = 64;
    constexpr double tolerance = 1e-15;
    if (a == 0.0 || b == 0.0) {
        return 0.0;
    }
    for (int i = 0; i < max_iterations; ++i) {
        if (std::abs(a - b) <= tolerance * a) {
            return 0.5 * (a + b);
        }
        const double next_a = 0.5 * (a + b);
        b = std::sqrt(a * b);
        a = next_a;
    }
    throw Error(ErrorKind::numeric, "arithmetic-geometric mean did not converge");
}

inline void check(const Modulus &m)
{
    detail::require(std::isfinite(m.k) && std::isfinite(m.kp) && m.k >= 0.0 && m.k <= 1.0 &&
                        m.kp >= 0.0 && m.kp <= 1.0,
                    ErrorKind::numeric, "elliptic modulus outside [0, 1]");
}

// Complete elliptic integral of the first kind, K(k).
inline double complete_k(const Modulus &m)
{
    check(m);
    const double mean = agm(1.0, m.kp);
    detail::require(mean > 0.0, ErrorKind::numeric, "K(k) diverges at k = 1");
    return constants::pi / (2.0 * mean);
}

inline double complete_k(double k)
{
    return complete_k(Modulus{k, std::sqrt((1.0 - k) * (1.0 + k))});
}

// K(k)/K(k'), the quantity every conformal-mapping capacitance reduces to.
inline double k_ratio(const Modulus &m)
{
    check(m);
    const double denominator = agm(1.0, m.kp);
    detail::require(denominator > 0.0, ErrorKind::numeric, "K(k)/K(k') diverges at k = 1");
    return agm(1.0, m.k) / denominator;
}

inline Modulus complement(const Modulus &m) { return Modulus{m.kp, m.k}; }

// k = a / b for the open half-space around a coplanar strip of half-width a
// whose ground planes start at b.
inline Modulus from_ratio(double a, double b)
{
    return Modulus{a / b, std::sqrt((b - a) * (b + a)) / b};
}

// k = tanh(pi a / 2H) / tanh(pi b / 2H): region bounded by a conducting plane at height H.
inline Modulus tanh_modulus(double a, double b, double height)
{
    const double arg_a = constants::pi * a / (2.0 * height);
    const double arg_b = constants::pi * b / (2.0 * height);
    const double ta = std::exp(-2.0 * arg_a);
    const double tb = std::exp(-2.0 * arg_b);
    const double tanh_a = std::tanh(arg_a);
    const double tanh_b = std::tanh(arg_b);
    // tanh(B) - tanh(A) = 2 (e^-2A - e^-2B) / ((1 + e^-2A)(1 + e^-2B))
    const double diff = -2.0 * ta * std::expm1(-2.0 * (arg_b - arg_a)) / ((1.0 + ta) * (1.0 + tb));
    const double one_minus_k = diff / tanh_b;
    const double k = tanh_a / tanh_b;
    return Modulus{k, std::sqrt(one_minus_k * (1.0 + k))};
}

// k = sinh(pi a / 2H) / sinh(pi b / 2H): dielectric slab of thickness H under a strip.
inline Modulus sinh_modulus(double a, double b, double height)
{
    const double arg_a = constants::pi * a / (2.0 * height);
    const double arg_b = constants::pi * b / (2.0 * height);
    const double k = std::exp(arg_a - arg_b) * std::expm1(-2.0 * arg_a) / std::expm1(-2.0 * arg_b);
    return Modulus{k, std::sqrt((1.0 - k) * (1.0 + k))};
}

} // namespace flipchip::elliptic

#endif
