#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "flipchip/io.hpp"
#include "flipchip/resonator.hpp"

using namespace flipchip;
using namespace flipchip::resonator;

namespace
{
double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

std::vector<ResonatorRecord> table_rows(const std::string &facing)
{
    auto all = io::read_resonators(FLIPCHIP_DATA_DIR "/table_I.csv");
    std::erase_if(all, [&](const auto &r) { return r.facing != facing; });
    return all;
}
} // namespace

TEST(Approx, QuarterWaveWithoutLoading)
{
    const auto f = loaded_frequency_approx(6000.0, 1.2e8, 0.0);
    EXPECT_NEAR(f.f_hz, 5e9, 1e-3);
    EXPECT_NEAR(f.omega, 2.0 * constants::pi * 1.2e8 / (4.0 * 6000e-6), 1e-3);
}

// (pi/2) / (l/v + b) / 2 pi evaluated by hand: 1 / (4 (5e-11 + b)).
TEST(Approx, DirectEvaluation)
{
    EXPECT_NEAR(loaded_frequency_approx(6000.0, 1.2e8, 5e-13).f_hz, 4.950495050e9, 1e3);
    EXPECT_NEAR(loaded_frequency_approx(6000.0, 1.2e8, -7e-13).f_hz, 5.070993915e9, 1e3);
    EXPECT_NEAR(loaded_frequency_approx(6000.0, 1.2e8, -5e-13).f_hz, 5.050505051e9, 1e3);
}

TEST(Approx, DomainError)
{
    try {
        loaded_frequency_approx(6000.0, 1.2e8, -6e-11);
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::domain);
    }
}

TEST(Exact, ReducesToQuarterWave)
{
    const auto exact = loaded_frequency_exact(6000.0, 1.2e8, 0.0);
    EXPECT_LT(rel(exact.omega, constants::pi * 1.2e8 / (2.0 * 6000e-6)), 1e-9);
}

// Roots from an independent 40-digit root finder on cos(w l / v) = b w sin(w l / v).
TEST(Exact, MatchesHighPrecisionRoots)
{
    EXPECT_LT(rel(loaded_frequency_exact(6000.0, 1.2e8, 5e-13).f_hz, 4950499000.8142519834), 1e-12);
    EXPECT_LT(rel(loaded_frequency_exact(6000.0, 1.2e8, 5e-12).f_hz, 4548234506.4098454396), 1e-12);
    EXPECT_LT(rel(loaded_frequency_exact(6000.0, 1.2e8, -7e-13).f_hz, 5070981979.5361475452), 1e-12);
}

TEST(Exact, FirstOrderNatureOfApproximation)
{
    const auto gap = [](double b) {
        const double e = loaded_frequency_exact(6000.0, 1.2e8, b).omega;
        return std::abs(e - loaded_frequency_approx(6000.0, 1.2e8, b).omega) / e;
    };
    EXPECT_LT(gap(5e-13), 1e-3);
    EXPECT_GT(gap(5e-12), gap(5e-13));
}

TEST(Exact, SweepAgreesWithApproximation)
{
    int checked = 0;
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 10; ++j) {
            const double length = 3000.0 + 600.0 * i;
            const double b = -3e-13 + 6e-13 * j / 9.0;
            const auto approx = loaded_frequency_approx(length, 1.2e8, b);
            if (std::abs(b * approx.omega) >= 0.02) {
                continue;
            }
            const auto exact = loaded_frequency_exact(length, 1.2e8, b);
            EXPECT_LT(rel(approx.omega, exact.omega), 1e-3);
            ++checked;
        }
    }
    EXPECT_EQ(checked, 100);
}

TEST(Monotonicity, LengthAndLoading)
{
    double previous = std::numeric_limits<double>::infinity();
    for (double length = 4000.0; length <= 7000.0; length += 250.0) {
        const double f = loaded_frequency_approx(length, 1.2e8, 3e-13).f_hz;
        EXPECT_LT(f, previous);
        EXPECT_LT(loaded_frequency_exact(length, 1.2e8, 3e-13).f_hz,
                  loaded_frequency_exact(length, 1.2e8, 2e-13).f_hz);
        previous = f;
    }
}

TEST(DesignLength, Inverses)
{
    EXPECT_NEAR(design_length(5.0, 1.2e8, 0.0), 6000.0, 1e-9);
    EXPECT_NEAR(design_length(4.9505, 1.2e8, 5e-13), 6000.0, 0.1);
    for (double b : {-5e-13, 0.0, 8e-13}) {
        const double l = design_length(5.37, 1.18e8, b);
        EXPECT_NEAR(loaded_frequency_approx(l, 1.18e8, b).f_hz, 5.37e9, 1.0);
    }
    try {
        design_length(100.0, 1.2e8, 1e-11);
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::target_unreachable);
    }
}

TEST(FitVph, TableMetalFacing)
{
    const auto fit = fit_vph(table_rows("metal"));
    EXPECT_LT(rel(fit.v_ph, 1.182e8), 0.01);
    EXPECT_EQ(fit.indices.size(), 8u);
}

TEST(FitVph, TableDielectricFacing)
{
    const auto fit = fit_vph(table_rows("dielectric"));
    EXPECT_LT(rel(fit.v_ph, 1.175e8), 0.01);
}

// Slope through rows 0 and 7 alone: v = (l0 - l7) / (1/(4 f0) - 1/(4 f7)).
TEST(FitVph, TwoPointHandCheck)
{
    auto rows = table_rows("metal");
    std::erase_if(rows, [](const auto &r) { return r.index != 0 && r.index != 7; });
    const double hand = (6049.8e-6 - 4720.5e-6) / (0.25 / 4.9729e9 - 0.25 / 6.3988e9);
    EXPECT_NEAR(fit_vph(rows).v_ph, hand, 1e-6 * hand);
    EXPECT_NEAR(hand, 1.187e8, 0.001e8);
}

TEST(FitVph, ExactOnOwnModel)
{
    std::vector<ResonatorRecord> rows;
    for (int i = 0; i < 8; ++i) {
        const double l = 4700.0 + 190.0 * i;
        rows.push_back({i, l, loaded_frequency_approx(l, 1.2e8, -5e-13).f_hz / 1e9, "metal", "a"});
    }
    const auto fit = fit_vph(rows);
    EXPECT_LT(rel(fit.v_ph, 1.2e8), 1e-6);
    EXPECT_LT(rel(fit.b, -5e-13), 1e-6);
    EXPECT_LT(fit.residual_rms_mhz, 1e-6);
}

TEST(FitVph, NoiseRobustness)
{
    const auto base = table_rows("metal");
    const double v0 = fit_vph(base).v_ph;
    int within = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 1e-3); // 1 MHz in GHz
        auto rows = base;
        for (auto &r : rows) {
            *r.measured_f_ghz += noise(rng);
        }
        within += rel(fit_vph(rows).v_ph, v0) < 3e-3;
    }
    EXPECT_GE(within, 99);
}

TEST(FitVph, CopiesAveragedPerIndex)
{
    std::vector<ResonatorRecord> rows = {
        {0, 6000.0, 5.00, "", "a"}, {0, 6000.0, 5.02, "", "b"}, {1, 5000.0, 6.00, "", "a"}, {1, 5000.0, 5.98, "", "b"}};
    const auto fit = fit_vph(rows);
    EXPECT_NEAR(fit.mean_f_ghz[0], 5.01, 1e-12);
    EXPECT_NEAR(fit.mean_f_ghz[1], 5.99, 1e-12);
}

TEST(FitVph, SingularInputs)
{
    std::vector<ResonatorRecord> same = {{0, 6000.0, 5.0, "", ""}, {1, 6000.0, 5.1, "", ""}};
    try {
        fit_vph(same);
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::singular_fit);
    }
    EXPECT_THROW(fit_vph({{0, 6000.0, 5.0, "", ""}}), Error);
}

TEST(TableOrdering, FrequencyRisesAsLengthFalls)
{
    for (const char *facing : {"metal", "dielectric"}) {
        auto rows = table_rows(facing);
        std::sort(rows.begin(), rows.end(), [](const auto &a, const auto &b) { return a.length_um > b.length_um; });
        for (std::size_t i = 1; i < rows.size(); ++i) {
            EXPECT_GT(*rows[i].measured_f_ghz, *rows[i - 1].measured_f_ghz);
        }
    }
}

TEST(Deviations, IdenticalCopies)
{
    const auto s = deviation_stats({{"a", {{0, 5.0}, {1, 5.2}}}, {"b", {{0, 5.0}, {1, 5.2}}}});
    EXPECT_EQ(s.mean_abs_mhz, 0.0);
    EXPECT_EQ(s.max_abs_mhz, 0.0);
}

TEST(Deviations, TwoCopies)
{
    const auto s = deviation_stats({{"a", {{0, 5.000}}}, {"b", {{0, 5.006}}}});
    ASSERT_EQ(s.deviations.size(), 2u);
    EXPECT_NEAR(s.deviations[0].deviation_mhz, -3.0, 1e-9);
    EXPECT_NEAR(s.deviations[1].deviation_mhz, 3.0, 1e-9);
    EXPECT_NEAR(s.mean_abs_mhz, 3.0, 1e-9);
}

TEST(Deviations, ThreeCopies)
{
    const auto s = deviation_stats({{"a", {{0, 5.000}}}, {"b", {{0, 5.000}}}, {"c", {{0, 5.030}}}});
    EXPECT_NEAR(s.deviations[0].deviation_mhz, -10.0, 1e-9);
    EXPECT_NEAR(s.deviations[1].deviation_mhz, -10.0, 1e-9);
    EXPECT_NEAR(s.deviations[2].deviation_mhz, 20.0, 1e-9);
    EXPECT_NEAR(s.mean_abs_mhz, 40.0 / 3.0, 1e-9);
    EXPECT_NEAR(s.max_abs_mhz, 20.0, 1e-9);
}

TEST(Deviations, NoSharedIndex)
{
    try {
        deviation_stats({{"a", {{0, 5.0}}}, {"b", {{1, 5.1}}}});
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::no_shared_indices);
    }
}

TEST(Coupler, LoadingTimeUnits)
{
    const CouplerModel c;
    EXPECT_DOUBLE_EQ(c.loading_time(), (0.44e-15 + 0.6e-15) * 50.0);
}
