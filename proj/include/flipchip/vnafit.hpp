#ifndef FLIPCHIP_VNAFIT_HPP
#define FLIPCHIP_VNAFIT_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>
#include <boost/math/tools/minima.hpp>

#include "constants.hpp"
#include "error.hpp"

// Notch-type resonator fitting in the complex plane. The transmission model is
//
//   S21(f) = a e^{i alpha} e^{-2 pi i f tau}
//            [1 - (Q_l / |Q_c|) e^{i phi} / (1 + 2 i Q_l (f / f_r - 1))]
//
// where phi rotates the resonance circle about the off-resonant point to
// absorb impedance mismatch (diameter correction).
namespace flipchip::vnafit
{
using cplx = std::complex<double>;

struct ComplexTrace
{
    std::vector<double> freqs; // Hz, strictly increasing
    std::vector<cplx> s21;
    double vna_power_dbm = std::numeric_limits<double>::quiet_NaN();
    double line_attenuation_db = 0.0;
};

struct Background
{
    double amplitude = 1.0;
    double phase = 0.0; // rad
    double delay = 0.0; // s
};

struct NotchParams
{
    double f0 = 5e9;
    double q_l = 4e5;
    double q_c_mag = 2e6;
    double phi = 0.0;
    Background background;
};

struct NotchFit
{
    double f0 = 0.0;
    double q_l = 0.0;
    double q_c_mag = 0.0;
    double phi = 0.0;
    double q_i = 0.0;
    Background background;
    double rms_residual = 0.0;
    double circle_diameter = 0.0; // normalised by the background amplitude
    double noise_floor = 0.0;     // same units as the raw trace
};

struct FitOptions
{
    double wing_fraction = 0.2;
    double detection_factor = 5.0;
    bool refine_delay = true;
    bool polish = true; // final joint least squares over all seven parameters
};

inline cplx notch_model(double f, const NotchParams &p)
{
    const cplx i(0.0, 1.0);
    const cplx env = p.background.amplitude * std::exp(i * (p.background.phase - 2.0 * constants::pi * f * p.background.delay));
    const cplx resonance = (p.q_l / p.q_c_mag) * std::exp(i * p.phi) / (1.0 + 2.0 * i * p.q_l * (f / p.f0 - 1.0));
    return env * (1.0 - resonance);
}

// Q_l from Q_i, |Q_c| and phi through 1/Q_l = 1/Q_i + cos(phi)/|Q_c|.
inline double loaded_q(double q_i, double q_c_mag, double phi)
{
    return 1.0 / (1.0 / q_i + std::cos(phi) / q_c_mag);
}

inline void validate(const ComplexTrace &t)
{
    using detail::require;
    require(t.freqs.size() == t.s21.size(), ErrorKind::validation, "frequency and S21 lengths differ");
    require(t.freqs.size() >= 50, ErrorKind::validation, "trace needs at least 50 points");
    for (std::size_t k = 0; k < t.freqs.size(); ++k) {
        require(std::isfinite(t.freqs[k]) && std::isfinite(t.s21[k].real()) && std::isfinite(t.s21[k].imag()),
                ErrorKind::validation, "trace contains non-finite values");
        if (k > 0) {
            require(t.freqs[k] > t.freqs[k - 1], ErrorKind::validation, "frequencies must be strictly increasing");
        }
    }
}

struct Circle
{
    cplx center;
    double radius = 0.0;
};

namespace impl
{
inline double median(std::vector<double> v)
{
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
    }
    return m;
}

inline std::vector<double> unwrap(std::vector<double> phase)
{
    for (std::size_t k = 1; k < phase.size(); ++k) {
        double d = phase[k] - phase[k - 1];
        d -= 2.0 * constants::pi * std::round(d / (2.0 * constants::pi));
        phase[k] = phase[k - 1] + d;
    }
    return phase;
}

inline double geometric_cost(std::span<const cplx> z, const Circle &c)
{
    double sum = 0.0;
    for (const auto &p : z) {
        const double d = std::abs(p - c.center) - c.radius;
        sum += d * d;
    }
    return sum / static_cast<double>(z.size());
}

inline std::vector<cplx> remove_delay(const ComplexTrace &t, double tau)
{
    std::vector<cplx> out(t.s21.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = t.s21[k] * std::polar(1.0, 2.0 * constants::pi * t.freqs[k] * tau);
    }
    return out;
}
} // namespace impl

// Algebraic circle fit with the Pratt normalisation (smallest non-negative
// generalised eigenvalue of the moment matrix), followed by one Gauss-Newton
// step on the geometric distances.
inline Circle fit_circle(std::span<const cplx> z)
{
    detail::require(z.size() >= 3, ErrorKind::validation, "circle fit needs three points");
    cplx mean(0.0, 0.0);
    for (const auto &p : z) {
        mean += p;
    }
    mean /= static_cast<double>(z.size());
    double scale = 0.0;
    for (const auto &p : z) {
        scale += std::norm(p - mean);
    }
    scale = std::sqrt(scale / static_cast<double>(z.size()));
    detail::require(scale > 0.0, ErrorKind::no_resonance, "all samples coincide");

    Eigen::Matrix4d moments = Eigen::Matrix4d::Zero();
    for (const auto &p : z) {
        const cplx q = (p - mean) / scale;
        const Eigen::Vector4d row(std::norm(q), q.real(), q.imag(), 1.0);
        moments += row * row.transpose();
    }
    moments /= static_cast<double>(z.size());

    Eigen::Matrix4d constraint = Eigen::Matrix4d::Zero();
    constraint(0, 3) = constraint(3, 0) = -2.0;
    constraint(1, 1) = constraint(2, 2) = 1.0;

    const Eigen::Matrix4d system = constraint.inverse() * moments;
    Eigen::EigenSolver<Eigen::Matrix4d> solver(system);
    int best = -1;
    double best_eta = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 4; ++k) {
        const auto eta = solver.eigenvalues()(k);
        if (std::abs(eta.imag()) > 1e-9 * (1.0 + std::abs(eta.real()))) {
            continue;
        }
        if (eta.real() >= -1e-12 && eta.real() < best_eta) {
            best_eta = eta.real();
            best = k;
        }
    }
    detail::require(best >= 0, ErrorKind::non_convergent, "circle fit found no admissible eigenvalue");
    const Eigen::Vector4d coeffs = solver.eigenvectors().col(best).real();
    detail::require(std::abs(coeffs(0)) > 1e-14 * coeffs.norm(), ErrorKind::no_resonance,
                              "samples lie on a straight line");

    Circle c;
    c.center = mean + scale * cplx(-coeffs(1) / (2.0 * coeffs(0)), -coeffs(2) / (2.0 * coeffs(0)));
    const double disc = coeffs(1) * coeffs(1) + coeffs(2) * coeffs(2) - 4.0 * coeffs(0) * coeffs(3);
    detail::require(disc > 0.0, ErrorKind::non_convergent, "circle fit produced imaginary radius");
    c.radius = scale * std::sqrt(disc) / (2.0 * std::abs(coeffs(0)));

    Eigen::MatrixXd jac(static_cast<Eigen::Index>(z.size()), 3);
    Eigen::VectorXd res(static_cast<Eigen::Index>(z.size()));
    for (std::size_t k = 0; k < z.size(); ++k) {
        const cplx d = z[k] - c.center;
        const double rho = std::abs(d);
        const auto r = static_cast<Eigen::Index>(k);
        jac(r, 0) = rho > 0.0 ? -d.real() / rho : 0.0;
        jac(r, 1) = rho > 0.0 ? -d.imag() / rho : 0.0;
        jac(r, 2) = -1.0;
        res(r) = rho - c.radius;
    }
    const Eigen::Vector3d step = jac.colPivHouseholderQr().solve(-res);
    c.center += cplx(step(0), step(1));
    c.radius += step(2);
    return c;
}

namespace impl
{
// theta(f) = theta0 + 2 atan(2 Q_l (1 - f / f_r)); parameters are scaled to
// O(1): (theta0, Q_l / q_scale, (f_r - f_mid) / span).
struct PhaseFunctor
{
    using Scalar = double;
    enum
    {
        InputsAtCompileTime = Eigen::Dynamic,
        ValuesAtCompileTime = Eigen::Dynamic
    };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    std::span<const double> f;
    std::span<const double> theta;
    double f_mid = 0.0;
    double span = 1.0;
    double q_scale = 1.0;

    int inputs() const { return 3; }
    int values() const { return static_cast<int>(f.size()); }

    int operator()(const Eigen::VectorXd &p, Eigen::VectorXd &out) const
    {
        const double q = p(1) * q_scale;
        const double fr = f_mid + p(2) * span;
        for (std::size_t k = 0; k < f.size(); ++k) {
            out(static_cast<Eigen::Index>(k)) = p(0) + 2.0 * std::atan(2.0 * q * (1.0 - f[k] / fr)) - theta[k];
        }
        return 0;
    }

    int df(const Eigen::VectorXd &p, Eigen::MatrixXd &jac) const
    {
        const double q = p(1) * q_scale;
        const double fr = f_mid + p(2) * span;
        for (std::size_t k = 0; k < f.size(); ++k) {
            const double x = 2.0 * q * (1.0 - f[k] / fr);
            const double g = 2.0 / (1.0 + x * x);
            const auto r = static_cast<Eigen::Index>(k);
            jac(r, 0) = 1.0;
            jac(r, 1) = g * 2.0 * (1.0 - f[k] / fr) * q_scale;
            jac(r, 2) = g * 2.0 * q * f[k] / (fr * fr) * span;
        }
        return 0;
    }
};

struct PhaseFit
{
    double theta0 = 0.0;
    double q_l = 0.0;
    double f_r = 0.0;
};

inline PhaseFit fit_phase(std::span<const double> f, std::span<const cplx> z, const Circle &circle)
{
    const std::size_t n = f.size();
    // Resonance point: diametrically opposite the off-resonant point, which
    // both ends of the trace approach.
    const cplx ends = 0.5 * (z.front() + z.back());
    cplx toward_ends = ends - circle.center;
    if (std::abs(toward_ends) == 0.0) {
        toward_ends = cplx(1.0, 0.0);
    }
    const cplx resonance_point = circle.center - circle.radius * toward_ends / std::abs(toward_ends);
    std::size_t k_res = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
        const double d = std::abs(z[k] - resonance_point);
        if (d < best) {
            best = d;
            k_res = k;
        }
    }
    const double theta0_guess = std::arg(resonance_point - circle.center);

    std::vector<double> rel(n);
    for (std::size_t k = 0; k < n; ++k) {
        rel[k] = std::arg((z[k] - circle.center) / (resonance_point - circle.center));
    }
    rel = unwrap(std::move(rel));
    const double anchor = rel[k_res] - 2.0 * constants::pi * std::round(rel[k_res] / (2.0 * constants::pi));
    const double shift = anchor - rel[k_res];
    std::vector<double> theta(n);
    for (std::size_t k = 0; k < n; ++k) {
        theta[k] = theta0_guess + rel[k] + shift;
    }

    // Half-width from the first crossings of +-pi/2 on each side.
    const double fr_guess = f[k_res];
    std::size_t lo = k_res;
    while (lo > 0 && std::abs(theta[lo] - theta0_guess) < 0.5 * constants::pi) {
        --lo;
    }
    std::size_t hi = k_res;
    while (hi + 1 < n && std::abs(theta[hi] - theta0_guess) < 0.5 * constants::pi) {
        ++hi;
    }
    const double span = f.back() - f.front();
    const double width = std::max(f[hi] - f[lo], 2.0 * span / static_cast<double>(n));
    const double q_guess = fr_guess / width;

    PhaseFunctor functor{f, theta, 0.5 * (f.front() + f.back()), span, q_guess};
    Eigen::VectorXd p(3);
    p << theta0_guess, 1.0, (fr_guess - functor.f_mid) / span;
    Eigen::LevenbergMarquardt<PhaseFunctor> lm(functor);
    lm.parameters.maxfev = 2000;
    lm.parameters.xtol = 1e-14;
    lm.parameters.ftol = 1e-14;
    const auto status = lm.minimize(p);
    const bool converged = status == Eigen::LevenbergMarquardtSpace::RelativeReductionTooSmall ||
                           status == Eigen::LevenbergMarquardtSpace::RelativeErrorTooSmall ||
                           status == Eigen::LevenbergMarquardtSpace::RelativeErrorAndReductionTooSmall ||
                           status == Eigen::LevenbergMarquardtSpace::CosinusTooSmall ||
                           status == Eigen::LevenbergMarquardtSpace::XtolTooSmall ||
                           status == Eigen::LevenbergMarquardtSpace::FtolTooSmall;
    if (!converged || !p.allFinite()) {
        throw Error(ErrorKind::non_convergent, "phase fit did not converge (status " +
                                                   std::to_string(static_cast<int>(status)) + ", start Q_l " +
                                                   std::to_string(q_guess) + ", start f_r " +
                                                   std::to_string(fr_guess) + " Hz)");
    }
    PhaseFit out{p(0), p(1) * q_guess, functor.f_mid + p(2) * span};
    if (out.q_l < 0.0) {
        // atan is odd: a negative Q_l is the same curve traversed with theta0 + pi.
        throw Error(ErrorKind::non_convergent, "phase fit converged to a negative loaded Q");
    }
    return out;
}

inline double delay_from_wings(const ComplexTrace &t, double wing_fraction)
{
    const std::size_t n = t.freqs.size();
    const auto wing = std::max<std::size_t>(2, static_cast<std::size_t>(wing_fraction * static_cast<double>(n)));
    std::vector<double> phase(n);
    for (std::size_t k = 0; k < n; ++k) {
        phase[k] = std::arg(t.s21[k]);
    }
    phase = unwrap(std::move(phase));
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, m = 0.0;
    auto add = [&](std::size_t k) {
        const double x = t.freqs[k] - t.freqs.front();
        sx += x;
        sy += phase[k];
        sxx += x * x;
        sxy += x * phase[k];
        m += 1.0;
    };
    for (std::size_t k = 0; k < wing; ++k) {
        add(k);
        add(n - 1 - k);
    }
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return -slope / (2.0 * constants::pi);
}

// Robust per-sample complex noise amplitude from successive differences of
// the off-resonant wings, where the resonance curve itself varies slowly.
inline double wing_noise_floor(std::span<const cplx> z, double wing_fraction)
{
    const std::size_t n = z.size();
    const auto wing = std::max<std::size_t>(3, static_cast<std::size_t>(wing_fraction * static_cast<double>(n)));
    std::vector<double> diffs;
    for (std::size_t k = 1; k < wing; ++k) {
        diffs.push_back(std::abs(z[k] - z[k - 1]));
        diffs.push_back(std::abs(z[n - k] - z[n - 1 - k]));
    }
    return median(std::move(diffs)) / std::sqrt(2.0);
}

// Joint least squares of the full complex model, started from the staged
// estimate. Parameters are scaled to O(1) around that start.
struct ModelFunctor
{
    using Scalar = double;
    enum
    {
        InputsAtCompileTime = Eigen::Dynamic,
        ValuesAtCompileTime = Eigen::Dynamic
    };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const ComplexTrace *trace = nullptr;
    NotchParams start;
    double span = 1.0;

    NotchParams unpack(const Eigen::VectorXd &p) const
    {
        NotchParams q = start;
        q.background.amplitude = start.background.amplitude * p(0);
        q.background.phase = start.background.phase + p(1);
        q.background.delay = start.background.delay + p(2) / (2.0 * constants::pi * span);
        q.f0 = start.f0 + p(3) * span;
        q.q_l = start.q_l * p(4);
        q.q_c_mag = start.q_c_mag * p(5);
        q.phi = start.phi + p(6);
        return q;
    }

    int inputs() const { return 7; }
    int values() const { return static_cast<int>(2 * trace->freqs.size()); }

    int operator()(const Eigen::VectorXd &p, Eigen::VectorXd &out) const
    {
        const NotchParams q = unpack(p);
        for (std::size_t k = 0; k < trace->freqs.size(); ++k) {
            const cplx r = notch_model(trace->freqs[k], q) - trace->s21[k];
            out(static_cast<Eigen::Index>(2 * k)) = r.real();
            out(static_cast<Eigen::Index>(2 * k + 1)) = r.imag();
        }
        return 0;
    }
};

inline double sum_squares(const ComplexTrace &t, const NotchParams &p)
{
    double sum = 0.0;
    for (std::size_t k = 0; k < t.freqs.size(); ++k) {
        sum += std::norm(t.s21[k] - notch_model(t.freqs[k], p));
    }
    return sum;
}

inline NotchParams polish(const ComplexTrace &t, const NotchParams &start)
{
    ModelFunctor functor{&t, start, t.freqs.back() - t.freqs.front()};
    Eigen::NumericalDiff<ModelFunctor, Eigen::Central> numeric(functor, 1e-7);
    Eigen::LevenbergMarquardt<Eigen::NumericalDiff<ModelFunctor, Eigen::Central>> lm(numeric);
    lm.parameters.maxfev = 4000;
    lm.parameters.xtol = 1e-13;
    lm.parameters.ftol = 1e-13;
    Eigen::VectorXd p(7);
    p << 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0;
    lm.minimize(p);
    if (!p.allFinite()) {
        return start;
    }
    const NotchParams refined = functor.unpack(p);
    if (!(refined.q_l > 0.0 && refined.q_c_mag > 0.0 && refined.background.amplitude > 0.0) ||
        sum_squares(t, refined) > sum_squares(t, start)) {
        return start;
    }
    return refined;
}
} // namespace impl

inline NotchFit fit_notch(const ComplexTrace &trace, const FitOptions &options = {})
{
    validate(trace);
    const double span = trace.freqs.back() - trace.freqs.front();

    double tau = impl::delay_from_wings(trace, options.wing_fraction);
    if (options.refine_delay) {
        // The wing estimate is biased by the resonance's own phase response;
        // the refinement searches +-0.3 rad of accumulated phase across the span.
        const double window = 0.3 / (2.0 * constants::pi * span);
        // Searched in units of the window: Brent's absolute tolerance is O(1e-8).
        const double start = tau;
        auto cost = [&](double u) {
            const auto z = impl::remove_delay(trace, start + u * window);
            return impl::geometric_cost(z, fit_circle(z));
        };
        boost::uintmax_t iterations = 200;
        const auto best = boost::math::tools::brent_find_minima(cost, -1.0, 1.0, 40, iterations);
        tau = start + best.first * window;
    }
    const auto z = impl::remove_delay(trace, tau);

    const double noise = impl::wing_noise_floor(z, options.wing_fraction);
    const Circle circle = fit_circle(z);
    double extent = 0.0;
    for (const auto &p : z) {
        extent = std::max(extent, std::abs(p - 0.5 * (z.front() + z.back())));
    }
    if (!(2.0 * circle.radius > options.detection_factor * noise) || !(extent > options.detection_factor * noise) ||
        extent < 0.5 * circle.radius) {
        throw Error(ErrorKind::no_resonance, "circle diameter " + std::to_string(2.0 * circle.radius) +
                                                 " does not stand out of the noise floor " + std::to_string(noise));
    }

    const auto phase = impl::fit_phase(trace.freqs, z, circle);
    const cplx off_resonant = circle.center + std::polar(circle.radius, phase.theta0 + constants::pi);
    detail::require(std::abs(off_resonant) > 0.0, ErrorKind::non_convergent,
                              "off-resonant point at the origin");
    const cplx center_n = circle.center / off_resonant;
    const double radius_n = circle.radius / std::abs(off_resonant);

    NotchParams staged;
    staged.f0 = phase.f_r;
    staged.q_l = phase.q_l;
    staged.phi = std::arg(1.0 - center_n);
    staged.q_c_mag = phase.q_l / (2.0 * radius_n);
    staged.background = Background{std::abs(off_resonant), std::arg(off_resonant), tau};
    const NotchParams best = options.polish ? impl::polish(trace, staged) : staged;

    NotchFit fit;
    fit.f0 = best.f0;
    fit.q_l = best.q_l;
    fit.phi = std::remainder(best.phi, 2.0 * constants::pi);
    fit.q_c_mag = best.q_c_mag;
    const double inv_qi = 1.0 / fit.q_l - std::cos(fit.phi) / fit.q_c_mag;
    if (!(inv_qi > 0.0)) {
        throw Error(ErrorKind::non_convergent, "diameter correction gives a non-positive internal loss rate");
    }
    fit.q_i = 1.0 / inv_qi;
    fit.background = best.background;
    fit.background.phase = std::remainder(best.background.phase, 2.0 * constants::pi);
    fit.circle_diameter = best.q_l / best.q_c_mag;
    fit.noise_floor = noise;

    const NotchParams model{fit.f0, fit.q_l, fit.q_c_mag, fit.phi, fit.background};
    double sum = 0.0;
    for (std::size_t k = 0; k < trace.freqs.size(); ++k) {
        sum += std::norm(trace.s21[k] - notch_model(trace.freqs[k], model));
    }
    fit.rms_residual = std::sqrt(sum / static_cast<double>(trace.freqs.size()));
    return fit;
}

// Power reaching the sample input for a VNA setting and a measured line
// attenuation, in watts.
inline double applied_power(double vna_power_dbm, double line_attenuation_db)
{
    detail::require(std::isfinite(vna_power_dbm) && std::isfinite(line_attenuation_db), ErrorKind::validation,
                    "power and attenuation must be finite");
    return 1e-3 * std::pow(10.0, (vna_power_dbm - line_attenuation_db) / 10.0);
}

struct PhotonCalc
{
    double kappa = 0.0; // rad/s
    double gamma = 0.0; // rad/s
    double p_app = 0.0; // W
    double n_int = 0.0;
};

// n = 2 kappa P / (hbar omega0 (kappa + gamma)^2), kappa = omega0/|Q_c|, gamma = omega0/Q_i.
inline PhotonCalc photon_number(double f0_hz, double q_c_mag, double q_i, double p_app)
{
    detail::require(f0_hz > 0.0 && q_c_mag > 0.0 && q_i > 0.0, ErrorKind::validation,
                    "f0 and quality factors must be positive");
    detail::require(p_app >= 0.0 && std::isfinite(p_app), ErrorKind::validation, "applied power must be >= 0");
    const double omega = 2.0 * constants::pi * f0_hz;
    PhotonCalc out;
    out.kappa = omega / q_c_mag;
    out.gamma = omega / q_i;
    out.p_app = p_app;
    const double total = out.kappa + out.gamma;
    detail::require(total > 0.0 && std::isfinite(total), ErrorKind::domain, "zero total linewidth");
    out.n_int = 2.0 * out.kappa * p_app / (constants::hbar * omega * total * total);
    return out;
}

inline PhotonCalc photon_number(const NotchFit &fit, double p_app)
{
    return photon_number(fit.f0, fit.q_c_mag, fit.q_i, p_app);
}

struct PhotonBand
{
    double low = 0.0;
    double nominal = 0.0;
    double high = 0.0;
};

// Photon number with the attenuation uncertainty applied as +-uncertainty_db.
inline PhotonBand photon_band(const NotchFit &fit, double vna_power_dbm, double line_attenuation_db,
                              double uncertainty_db = 3.0)
{
    const auto at = [&](double att) { return photon_number(fit, applied_power(vna_power_dbm, att)).n_int; };
    return PhotonBand{at(line_attenuation_db + uncertainty_db), at(line_attenuation_db),
                      at(line_attenuation_db - uncertainty_db)};
}

} // namespace flipchip::vnafit

#endif
