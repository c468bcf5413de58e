#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "flipchip/heightmap.hpp"
#include "flipchip/synthetic.hpp"

using namespace flipchip;
using namespace flipchip::heightmap;

namespace
{
// n x n grid at the given pitch filled with z = f(x, y).
template <typename F>
std::vector<LineScan> grid_scans(std::size_t n, double pitch, F &&f)
{
    std::vector<LineScan> scans(n);
    for (std::size_t i = 0; i < n; ++i) {
        scans[i].scan_index = static_cast<int>(i);
        scans[i].x_um = static_cast<double>(i) * pitch;
        for (std::size_t j = 0; j < n; ++j) {
            const double y = static_cast<double>(j) * pitch;
            scans[i].samples.push_back({y, f(scans[i].x_um, y)});
        }
    }
    return scans;
}

Rect everywhere() { return {-1e9, -1e9, 1e9, 1e9}; }

HeightMap smooth_map(std::size_t columns)
{
    return make_height_map(grid_scans(columns, 100.0, [](double x, double y) { return 530.0 + 1e-5 * x - 2e-5 * y; }));
}
} // namespace

TEST(Leveling, ExactPlaneLevelsToZero)
{
    const auto scans = grid_scans(41, 50.0, [](double x, double) { return 1e-4 * x + 5.0; });
    const auto r = level_to_bottom_plane(scans, {everywhere()});
    r.map.for_each_valid([](std::size_t, std::size_t, double z) { EXPECT_NEAR(z, 0.0, 1e-9); });
    EXPECT_NEAR(r.bottom_plane.a, 1e-4, 1e-12);
    EXPECT_NEAR(r.bottom_plane.b, 0.0, 1e-12);
}

TEST(Leveling, PlateauKeepsItsOwnGradient)
{
    // Bottom chip on a tilted stage, top plateau with an additional 100 urad slope.
    const double slope = std::tan(100e-6);
    auto top = [&](double x, double y) { return x >= 1000 && x <= 4000 && y >= 1000 && y <= 4000; };
    const auto scans = grid_scans(51, 100.0, [&](double x, double y) {
        const double stage = 3e-4 * x - 1e-4 * y + 2.0;
        return stage + (top(x, y) ? 535.2 + slope * (x - 2500.0) : 0.0);
    });
    const auto r = level_to_bottom_plane(scans, {});
    for (std::size_t i = 0; i < r.map.columns(); ++i) {
        for (std::size_t j = 0; j < r.map.rows(); ++j) {
            const double x = r.map.x(i);
            const double y = r.map.y(j);
            const double expected = top(x, y) ? 535.2 + slope * (x - 2500.0) : 0.0;
            EXPECT_NEAR(r.map.at(i, j), expected, 1e-9);
        }
    }
    const auto cropped = crop_top_chip(r.map, 400.0);
    EXPECT_NEAR(fit_plane(cropped).tilt_urad(), 100.0, 1e-6);
}

TEST(Leveling, Idempotent)
{
    auto spec = synthetic::DeviceSpec{};
    spec.pitch_um = 200.0;
    spec.stage = {1e-4, 2e-4, -1.0};
    spec.noise_um = 0.05;
    const auto once = level_to_bottom_plane(synthetic::make_device_scans(spec), {});
    const auto twice = level_to_bottom_plane(once.map, {});
    for (std::size_t i = 0; i < once.map.columns(); ++i) {
        for (std::size_t j = 0; j < once.map.rows(); ++j) {
            EXPECT_NEAR(once.map.at(i, j), twice.map.at(i, j), 1e-9);
        }
    }
}

TEST(Leveling, Errors)
{
    // All samples on one line: the plane is undetermined.
    std::vector<LineScan> line(1);
    line[0].x_um = 0.0;
    for (int j = 0; j < 10; ++j) {
        line[0].samples.push_back({j * 10.0, 1.0});
    }
    try {
        level_to_bottom_plane(line, {everywhere()});
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::unlevelable);
    }

    auto scans = grid_scans(5, 10.0, [](double, double) { return std::nan(""); });
    try {
        level_to_bottom_plane(scans, {everywhere()});
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::all_masked);
    }
}

TEST(Crop, SelectsPlateau)
{
    auto plateau = [](double x, double y) { return x >= 300 && x <= 600 && y >= 200 && y <= 500; };
    const auto map = make_height_map(grid_scans(11, 100.0, [&](double x, double y) { return plateau(x, y) ? 535.0 : 0.0; }));
    const auto top = crop_top_chip(map, 400.0);
    EXPECT_EQ(top.columns(), 4u);
    EXPECT_EQ(top.rows(), 4u);
    EXPECT_EQ(top.count_valid(), 16u);
    EXPECT_DOUBLE_EQ(top.x0(), 300.0);
    EXPECT_DOUBLE_EQ(top.y0(), 200.0);
    try {
        crop_top_chip(map, 600.0);
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::empty_selection);
    }
}

TEST(Crop, TiltedPlateauFullyRetained)
{
    const double slope = std::tan(100e-6);
    const auto map = make_height_map(grid_scans(21, 1000.0, [&](double x, double) { return 535.0 + slope * (x - 10000.0); }));
    EXPECT_EQ(crop_top_chip(map, 400.0).count_valid(), map.count_valid());
}

TEST(Masking, SmoothMapUntouched)
{
    const auto out = mask_artifact_scans(smooth_map(30), 2.0);
    EXPECT_TRUE(out.masked_columns.empty());
}

TEST(Masking, SingleOffsetColumn)
{
    auto map = smooth_map(30);
    for (std::size_t j = 0; j < map.rows(); ++j) {
        map.at(12, j) += 5.0;
    }
    const auto out = mask_artifact_scans(map, 2.0);
    ASSERT_EQ(out.masked_columns, std::vector<std::size_t>{12});
    EXPECT_EQ(out.count_valid(), map.count_valid() - map.rows());
}

TEST(Masking, AdjacentOffsetColumns)
{
    for (std::size_t first : {0u, 7u, 28u}) {
        auto map = smooth_map(30);
        for (std::size_t j = 0; j < map.rows(); ++j) {
            map.at(first, j) += 5.0;
            map.at(first + 1, j) += 5.0;
        }
        const auto out = mask_artifact_scans(map, 2.0);
        EXPECT_EQ(out.masked_columns, (std::vector<std::size_t>{first, first + 1})) << "first = " << first;
    }
}

TEST(Masking, SurvivingCellsUnchanged)
{
    auto map = smooth_map(20);
    for (std::size_t j = 0; j < map.rows(); ++j) {
        map.at(4, j) -= 9.0;
    }
    const auto out = mask_artifact_scans(map, 2.0);
    for (std::size_t i = 0; i < map.columns(); ++i) {
        for (std::size_t j = 0; j < map.rows(); ++j) {
            if (out.valid(i, j)) {
                EXPECT_EQ(out.at(i, j), map.at(i, j));
            }
        }
    }
    EXPECT_THROW(mask_artifact_scans(smooth_map(2), 2.0), Error);
}

TEST(Summary, UniformChip)
{
    const auto map = make_height_map(grid_scans(21, 50.0, [](double, double) { return 535.2; }));
    const auto s = summarize_chip(map, 525.2);
    EXPECT_NEAR(s.mean_separation_um, 10.0, 1e-9);
    EXPECT_NEAR(s.tilt_urad, 0.0, 1e-9);
    EXPECT_NEAR(s.bow_um, 0.0, 1e-9);
}

TEST(Summary, ConstructedSlope)
{
    const auto map = make_height_map(grid_scans(21, 50.0, [](double x, double) { return 535.2 + 1e-4 * x; }));
    const auto s = summarize_chip(map, 525.2);
    EXPECT_NEAR(s.tilt_urad, 1e6 * std::atan(1e-4), 0.01);
    EXPECT_NEAR(s.tilt_urad, 100.0, 0.01);
}

TEST(Summary, TranslationChangesOffsetOnly)
{
    auto f = [](double x, double y) {
        const double u = (x - 1000.0) / 1000.0;
        const double v = (y - 1000.0) / 1000.0;
        return 530.0 + 3e-5 * x - 7e-5 * y + 0.8 * (u * u + v * v);
    };
    const auto base = summarize_chip(make_height_map(grid_scans(41, 50.0, f)), 525.2);
    const auto moved =
        summarize_chip(make_height_map(grid_scans(41, 50.0, [&](double x, double y) { return f(x, y) + 17.5; })), 525.2);
    EXPECT_NEAR(moved.tilt_urad, base.tilt_urad, 1e-12 * base.tilt_urad);
    EXPECT_NEAR(moved.bow_um, base.bow_um, 1e-12 * std::abs(base.bow_um) + 1e-12);
    EXPECT_NEAR(moved.plane.c - base.plane.c, 17.5, 1e-9);
    EXPECT_GT(base.bow_um, 0.0); // raised corners give positive bow
}

TEST(Summary, SyntheticBowRecovered)
{
    synthetic::DeviceSpec spec;
    spec.pitch_um = 100.0;
    spec.bow_um = 1.0;
    const auto a = level_to_bottom_plane(synthetic::make_device_scans(spec), {});
    const auto s = summarize_chip(crop_top_chip(a.map, 400.0), spec.substrate_um);
    // The paraboloid has zero mean over the continuous square, not exactly over the grid.
    EXPECT_NEAR(s.mean_separation_um, spec.separation_um, 1e-2);
    // Patch averages sit slightly inside the corners, so the bow is somewhat below 1.
    EXPECT_GT(s.bow_um, 0.7);
    EXPECT_LT(s.bow_um, 1.0);
}

TEST(PlaneFit, NoiseFreeRecovery)
{
    const auto map = make_height_map(grid_scans(61, 50.0, [](double x, double y) { return 3e-5 * x - 8e-5 * y + 12.0; }));
    const auto p = fit_plane(map);
    EXPECT_NEAR(p.a, 3e-5, 1e-12);
    EXPECT_NEAR(p.b, -8e-5, 1e-12);
}

TEST(PlaneFit, NoisyTiltWithinTwoMicroradians)
{
    // 11 x 11 mm at 50 um pitch, sigma = 50 nm.
    int within = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 0.05);
        const auto map = make_height_map(grid_scans(221, 50.0, [&](double x, double) { return 1e-4 * x + noise(rng); }));
        within += std::abs(fit_plane(map).tilt_urad() - 100.0) < 2.0;
    }
    EXPECT_GE(within, 99);
}

TEST(Corners, EqualCornersGiveZero)
{
    CornerSet c{{{"a", 0, 0, 10}, {"b", 1000, 0, 10}, {"c", 0, 1000, 10}, {"d", 1000, 1000, 10}}};
    const auto t = corner_tilt_worst_case(c);
    EXPECT_EQ(t.worst_case_urad, 0.0);
    EXPECT_EQ(t.mean_separation_um, 10.0);
}

TEST(Corners, EdgePairDominates)
{
    CornerSet c{{{"LL", 0, 0, 10.0}, {"LR", 11000, 0, 10.5}, {"UL", 0, 11000, 10.0}, {"UR", 11000, 11000, 10.5}}};
    const auto t = corner_tilt_worst_case(c);
    EXPECT_NEAR(t.worst_case_urad, 1e6 * std::atan(0.5 / 11000.0), 0.01);
    EXPECT_NEAR(t.worst_case_urad, 45.45, 0.01);
    EXPECT_NEAR(t.mean_separation_um, 10.25, 1e-12);
}

// Brute force over all pairs, written independently of the library loop.
TEST(Corners, MatchesBruteForceOnRandomSets)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> pos(0.0, 12000.0);
    std::uniform_real_distribution<double> sep(9.0, 12.0);
    for (int trial = 0; trial < 200; ++trial) {
        CornerSet c;
        for (int k = 0; k < 4; ++k) {
            c[k] = {std::string(1, char('A' + k)), pos(rng), pos(rng), sep(rng)};
        }
        double worst = 0.0;
        for (int p = 0; p < 4; ++p) {
            for (int q = 0; q < 4; ++q) {
                if (p != q) {
                    const double dist = std::sqrt(std::pow(c[p].x_um - c[q].x_um, 2) + std::pow(c[p].y_um - c[q].y_um, 2));
                    worst = std::max(worst, 1e6 * std::atan(std::abs(c[p].separation_um - c[q].separation_um) / dist));
                }
            }
        }
        EXPECT_NEAR(corner_tilt_worst_case(c).worst_case_urad, worst, 1e-9);
    }
}

// On an exact plane sampled at the corners of a square, the worst pair lies
// between cos(45 deg) and 1 times the plane tilt, depending on direction.
TEST(Corners, BoundedByPlaneTiltOnExactPlanes)
{
    const double side = 11000.0;
    for (double dir = 0.0; dir < 2.0 * constants::pi; dir += 0.1) {
        const double t = 80e-6;
        const double gx = std::tan(t) * std::cos(dir);
        const double gy = std::tan(t) * std::sin(dir);
        auto z = [&](double x, double y) { return 10.0 + gx * x + gy * y; };
        CornerSet c{{{"LL", 0, 0, z(0, 0)}, {"LR", side, 0, z(side, 0)}, {"UL", 0, side, z(0, side)},
                     {"UR", side, side, z(side, side)}}};
        const double worst = corner_tilt_worst_case(c).worst_case_urad;
        EXPECT_GE(worst, 80.0 * std::cos(constants::pi / 4.0) - 1e-6);
        EXPECT_LE(worst, 80.0 + 1e-6);
    }
}

TEST(Corners, CoincidentCornersRejected)
{
    CornerSet c{{{"a", 0, 0, 10}, {"b", 0, 0, 11}, {"c", 0, 1000, 10}, {"d", 1000, 1000, 10}}};
    try {
        corner_tilt_worst_case(c);
        FAIL();
    }
    catch (const Error &e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate);
    }
}

TEST(HeightMapGrid, RejectsMisalignedScans)
{
    auto scans = grid_scans(5, 100.0, [](double, double) { return 1.0; });
    scans[2].x_um += 40.0;
    EXPECT_THROW(make_height_map(scans), Error);
}
