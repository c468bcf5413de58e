#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "flipchip/cpw.hpp"
#include "flipchip/elliptic.hpp"

using namespace flipchip;
using cpw::CpwGeometry;
using cpw::Facing;

namespace
{
// Reference values from an independent 40-digit evaluation (mpmath ellipk).
struct KCase
{
    double k;
    double K;
    double ratio; // K(k) / K(k')
};
const KCase k_table[] = {
    {0.1, 1.5747455615173559527, 0.42610933023021026507},
    {0.5, 1.6857503548125960429, 0.78170096134805575348},
    {0.9, 2.2805491384227702046, 1.3782945519565313176},
    {0.999, 4.4955963958421441704, 2.8605543824368632373},
};

CpwGeometry metal(double w, double s, double d)
{
    CpwGeometry g;
    g.w_um = w;
    g.s_um = s;
    g.facing = Facing::metal;
    g.d_um = d;
    return g;
}

CpwGeometry dielectric(double w, double s, double d)
{
    CpwGeometry g = metal(w, s, d);
    g.facing = Facing::dielectric;
    g.eps_superstrate = constants::eps_silicon;
    return g;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }
} // namespace

TEST(Elliptic, CompleteIntegralAtZero)
{
    EXPECT_NEAR(elliptic::complete_k(0.0), constants::pi / 2.0, 1e-15);
}

TEST(Elliptic, MatchesHighPrecisionTable)
{
    for (const auto &c : k_table) {
        EXPECT_LT(rel(elliptic::complete_k(c.k), c.K), 1e-13) << "k = " << c.k;
        const auto m = elliptic::Modulus{c.k, std::sqrt(1.0 - c.k * c.k)};
        EXPECT_LT(rel(elliptic::k_ratio(m), c.ratio), 1e-12) << "k = " << c.k;
    }
}

TEST(Elliptic, RatioInvertsUnderComplement)
{
    for (double k = 0.01; k < 1.0; k += 0.07) {
        const elliptic::Modulus m{k, std::sqrt(1.0 - k * k)};
        EXPECT_LT(std::abs(elliptic::k_ratio(m) * elliptic::k_ratio(elliptic::complement(m)) - 1.0), 1e-12);
    }
}

TEST(Elliptic, MappedModuliStayInUnitInterval)
{
    for (double h : {1e-3, 0.1, 10.0, 1e4, 1e7}) {
        const auto s = elliptic::sinh_modulus(2.5, 5.74, h);
        const auto t = elliptic::tanh_modulus(2.5, 5.74, h);
        for (const auto &m : {s, t}) {
            EXPECT_GE(m.k, 0.0);
            EXPECT_LE(m.k, 1.0);
            EXPECT_NEAR(m.k * m.k + m.kp * m.kp, 1.0, 1e-12);
        }
    }
}

TEST(Cpw, PlanarThickSubstrateLimit)
{
    CpwGeometry g;
    g.w_um = 10.0;
    g.s_um = 5.5;
    const auto p = cpw::line_params(g);
    const double eps_limit = (1.0 + constants::eps_silicon) / 2.0;
    EXPECT_LT(rel(p.eps_eff, eps_limit), 0.005);
    EXPECT_LT(rel(p.v_ph, 1.2016e8), 0.005);
}

// Same partial-capacitance expressions evaluated with 40-digit elliptic
// integrals outside this code base.
TEST(Cpw, MatchesHighPrecisionEvaluation)
{
    struct Case
    {
        CpwGeometry g;
        double v;
        double z;
    };
    CpwGeometry planar;
    planar.w_um = 10.0;
    planar.s_um = 5.5;
    const Case cases[] = {
        {planar, 120161077.509756, 49.6383061138038},
        {metal(5.0, 3.24, 10.0), 122740417.084805, 50.5321169337768},
        {dielectric(5.0, 3.14, 10.0), 117721864.22862, 50.5337589868354},
        {metal(10.0, 5.5, 9.0), 128966996.473141, 44.9040015796384},
        {dielectric(10.0, 5.5, 9.0), 112464535.594812, 46.4588797012812},
    };
    for (const auto &c : cases) {
        const auto p = cpw::line_params(c.g);
        EXPECT_LT(rel(p.v_ph, c.v), 1e-11);
        EXPECT_LT(rel(p.z0, c.z), 1e-11);
    }
}

TEST(Cpw, LineParameterIdentities)
{
    for (const auto &g : {metal(5.0, 3.24, 10.0), dielectric(5.0, 3.14, 7.0), metal(20.0, 2.0, 3.0)}) {
        const auto p = cpw::line_params(g);
        EXPECT_LT(rel(p.v_ph, 1.0 / std::sqrt(p.l_per_len * p.c_per_len)), 1e-12);
        EXPECT_LT(rel(p.z0, std::sqrt(p.l_per_len / p.c_per_len)), 1e-12);
        EXPECT_LT(rel(p.eps_eff, std::pow(constants::c_light / p.v_ph, 2)), 1e-12);
        EXPECT_GT(p.v_ph, 0.0);
        EXPECT_LT(p.v_ph, constants::c_light);
    }
}

TEST(Cpw, PublishedConformalMappingVelocities)
{
    EXPECT_LT(rel(cpw::line_params(metal(5.0, 3.24, 10.0)).v_ph, 1.215e8), 0.02);
    EXPECT_LT(rel(cpw::line_params(dielectric(5.0, 3.14, 10.0)).v_ph, 1.185e8), 0.02);
}

TEST(Cpw, ScaleFree)
{
    for (auto g : {metal(5.0, 3.24, 10.0), dielectric(10.0, 5.5, 8.0)}) {
        const auto base = cpw::line_params(g);
        for (double f : {1e-3, 7.0, 1e3}) {
            auto scaled = g;
            scaled.w_um *= f;
            scaled.s_um *= f;
            scaled.h_substrate_um *= f;
            scaled.h_superstrate_um *= f;
            scaled.d_um = *g.d_um * f;
            const auto p = cpw::line_params(scaled);
            EXPECT_LT(rel(p.eps_eff, base.eps_eff), 1e-10);
            EXPECT_LT(rel(p.z0, base.z0), 1e-10);
            EXPECT_LT(rel(p.v_ph, base.v_ph), 1e-10);
        }
    }
}

TEST(Cpw, Validation)
{
    auto g = dielectric(5.0, 3.0, 10.0);
    g.eps_superstrate.reset();
    EXPECT_THROW(cpw::line_params(g), Error);
    auto m = metal(5.0, 3.0, 10.0);
    m.d_um.reset();
    EXPECT_THROW(cpw::line_params(m), Error);
    m.d_um = 10.0;
    m.s_um = 0.0;
    EXPECT_THROW(cpw::line_params(m), Error);
    EXPECT_THROW(cpw::parse_facing("sideways"), Error);
}

TEST(Cpw, GapSolverRoundTrip)
{
    const auto sol = cpw::solve_gap_for_impedance(5.0, 50.0, metal(5.0, 1.0, 10.0));
    auto g = metal(5.0, sol.s_um, 10.0);
    EXPECT_NEAR(cpw::line_params(g).z0, 50.0, 0.01);
    EXPECT_LT(std::abs(sol.s_um - 3.24) / 3.24, 0.25);

    const auto sol_d = cpw::solve_gap_for_impedance(5.0, 50.0, dielectric(5.0, 1.0, 10.0));
    EXPECT_NEAR(cpw::line_params(dielectric(5.0, sol_d.s_um, 10.0)).z0, 50.0, 0.01);
    EXPECT_LT(std::abs(sol_d.s_um - 3.14) / 3.14, 0.25);
}

TEST(Cpw, GapSolverRejectsUnreachableTarget)
{
    try {
        cpw::solve_gap_for_impedance(5.0, 500.0, metal(5.0, 1.0, 10.0));
        FAIL() << "expected unreachable_impedance";
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::unreachable_impedance);
        EXPECT_NE(std::string(e.what()).find("achievable range"), std::string::npos);
    }
}

TEST(Cpw, ShiftCurveReferenceIsExactlyOne)
{
    const auto curve = cpw::shift_curve(metal(10.0, 5.5, 10.0), {5.0, 10.0, 12.5}, 10.0);
    EXPECT_EQ(curve[1].ratio, 1.0);
}

TEST(Cpw, ShiftCurveMonotoneBySide)
{
    const auto grid = cpw::separation_grid(2.0, 60.0, 0.5);
    for (double w : {5.0, 10.0}) {
        const double s = w == 5.0 ? 3.24 : 5.5;
        const auto m = cpw::shift_curve(metal(w, s, 10.0), grid, 10.0);
        const auto d = cpw::shift_curve(dielectric(w, s, 10.0), grid, 10.0);
        for (std::size_t i = 1; i < grid.size(); ++i) {
            EXPECT_LE(m[i].ratio, m[i - 1].ratio) << "metal, d = " << grid[i];
            EXPECT_GE(d[i].ratio, d[i - 1].ratio) << "dielectric, d = " << grid[i];
        }
    }
}

TEST(Cpw, FacingConvergesToPlanarFarAway)
{
    for (double w : {5.0, 10.0}) {
        const double s = w == 5.0 ? 3.24 : 5.5;
        CpwGeometry planar;
        planar.w_um = w;
        planar.s_um = s;
        const double v_planar = cpw::line_params(planar).v_ph;
        const double d_far = 10.0 * (w + 2.0 * s);
        EXPECT_LT(rel(cpw::line_params(metal(w, s, d_far)).v_ph, v_planar), 1e-3);
        EXPECT_LT(rel(cpw::line_params(dielectric(w, s, d_far)).v_ph, v_planar), 1e-3);
    }
}

TEST(Cpw, MetalShiftExceedsDielectricAndNarrowLinesAreFlatter)
{
    const auto ratio = [](const CpwGeometry &g, double d) { return cpw::shift_curve(g, {d}, 10.0)[0].ratio; };
    for (double d : {3.0, 5.0, 8.0}) {
        EXPECT_GT(std::abs(ratio(metal(10.0, 5.5, 10.0), d) - 1.0),
                  std::abs(ratio(dielectric(10.0, 5.5, 10.0), d) - 1.0));
    }
    EXPECT_LT(std::abs(ratio(metal(5.0, 3.24, 10.0), 5.0) - 1.0), std::abs(ratio(metal(10.0, 5.5, 10.0), 5.0) - 1.0));
    EXPECT_LT(std::abs(ratio(dielectric(5.0, 3.14, 10.0), 5.0) - 1.0),
              std::abs(ratio(dielectric(10.0, 5.5, 10.0), 5.0) - 1.0));
}

TEST(Cpw, SeparationGrid)
{
    const auto grid = cpw::separation_grid(9.0, 11.0, 0.5);
    ASSERT_EQ(grid.size(), 5u);
    EXPECT_DOUBLE_EQ(grid.back(), 11.0);
    EXPECT_THROW(cpw::separation_grid(0.0, 1.0, 0.1), Error);
}
