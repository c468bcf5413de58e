#ifndef FLIPCHIP_HEIGHTMAP_HPP
#define FLIPCHIP_HEIGHTMAP_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "constants.hpp"
#include "error.hpp"

// Profilometer height maps of a flip-chip module: leveling against the bottom
// chip, cropping to the top chip, rejection of offset scans and extraction of
// separation, tilt and bow. Lateral positions and heights are in micrometres.
namespace flipchip::heightmap
{
inline constexpr double invalid = std::numeric_limits<double>::quiet_NaN();

struct Sample
{
    double y_um = 0.0;
    double z_um = 0.0;
};

// One stylus pass at fixed x.
struct LineScan
{
    int scan_index = 0;
    double x_um = 0.0;
    std::vector<Sample> samples;
    bool masked = false;
};

struct Rect
{
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    bool contains(double x, double y) const
    {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
    }
};

struct PlaneModel
{
    double a = 0.0; // dz/dx
    double b = 0.0; // dz/dy
    double c = 0.0; // z at the origin

    double at(double x, double y) const { return a * x + b * y + c; }
    double tilt_urad() const { return constants::urad_per_rad * std::atan(std::hypot(a, b)); }
};

// Rectangular grid, stored scan by scan (column-major). Invalid cells hold NaN.
class HeightMap
{
public:
    HeightMap() = default;

    HeightMap(std::size_t columns, std::size_t rows, double x0, double y0, double x_pitch, double y_pitch)
        : columns_(columns), rows_(rows), x0_(x0), y0_(y0), x_pitch_(x_pitch), y_pitch_(y_pitch),
          z_(columns * rows, invalid)
    {
        detail::require(x_pitch > 0.0 && y_pitch > 0.0, ErrorKind::validation, "pitches must be positive");
    }

    std::size_t columns() const { return columns_; }
    std::size_t rows() const { return rows_; }
    double x0() const { return x0_; }
    double y0() const { return y0_; }
    double x_pitch() const { return x_pitch_; }
    double y_pitch() const { return y_pitch_; }
    double x(std::size_t column) const { return x0_ + static_cast<double>(column) * x_pitch_; }
    double y(std::size_t row) const { return y0_ + static_cast<double>(row) * y_pitch_; }

    double &at(std::size_t column, std::size_t row) { return z_[column * rows_ + row]; }
    double at(std::size_t column, std::size_t row) const { return z_[column * rows_ + row]; }
    bool valid(std::size_t column, std::size_t row) const { return std::isfinite(at(column, row)); }

    std::span<const double> column(std::size_t column) const
    {
        return {z_.data() + column * rows_, rows_};
    }

    void invalidate_column(std::size_t column)
    {
        std::fill_n(z_.begin() + static_cast<std::ptrdiff_t>(column * rows_), rows_, invalid);
    }

    std::size_t count_valid() const
    {
        return static_cast<std::size_t>(
            std::count_if(z_.begin(), z_.end(), [](double v) { return std::isfinite(v); }));
    }

    template <typename Visitor>
    void for_each_valid(Visitor &&visit) const
    {
        for (std::size_t i = 0; i < columns_; ++i) {
            for (std::size_t j = 0; j < rows_; ++j) {
                const double z = at(i, j);
                if (std::isfinite(z)) {
                    visit(i, j, z);
                }
            }
        }
    }

    // Column indices invalidated by artifact masking, in this map's indexing.
    std::vector<std::size_t> masked_columns;

private:
    std::size_t columns_ = 0;
    std::size_t rows_ = 0;
    double x0_ = 0.0;
    double y0_ = 0.0;
    double x_pitch_ = 1.0;
    double y_pitch_ = 1.0;
    std::vector<double> z_;
};

namespace impl
{
inline double median(std::vector<double> values)
{
    if (values.empty()) {
        return invalid;
    }
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) {
        return upper;
    }
    return 0.5 * (upper + *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)));
}

struct Axis
{
    double origin = 0.0;
    double pitch = 1.0;
    std::size_t count = 1;
};

inline Axis infer_axis(std::vector<double> positions, double fallback_pitch, const char *name)
{
    std::sort(positions.begin(), positions.end());
    std::vector<double> diffs;
    for (std::size_t i = 1; i < positions.size(); ++i) {
        const double d = positions[i] - positions[i - 1];
        if (d > 0.0) {
            diffs.push_back(d);
        }
    }
    Axis axis;
    axis.origin = positions.front();
    axis.pitch = diffs.empty() ? fallback_pitch : median(diffs);
    axis.count = static_cast<std::size_t>(std::lround((positions.back() - axis.origin) / axis.pitch)) + 1;
    for (double p : positions) {
        const double offset = (p - axis.origin) / axis.pitch;
        detail::require(std::abs(offset - std::round(offset)) < 0.25, ErrorKind::validation,
                        std::string(name) + " positions do not lie on a regular grid");
    }
    return axis;
}

inline std::size_t grid_index(const Axis &axis, double position)
{
    return static_cast<std::size_t>(std::lround((position - axis.origin) / axis.pitch));
}
} // namespace impl

// Lays line scans onto a regular grid; cells no scan visits stay invalid.
inline HeightMap make_height_map(const std::vector<LineScan> &scans)
{
    using detail::require;
    require(!scans.empty(), ErrorKind::validation, "no line scans");
    std::vector<double> xs;
    std::vector<double> ys;
    for (const auto &scan : scans) {
        require(!scan.samples.empty(), ErrorKind::validation,
                "scan " + std::to_string(scan.scan_index) + " has no samples");
        for (std::size_t k = 1; k < scan.samples.size(); ++k) {
            require(scan.samples[k].y_um > scan.samples[k - 1].y_um, ErrorKind::validation,
                    "scan " + std::to_string(scan.scan_index) + " y positions not strictly increasing");
        }
        xs.push_back(scan.x_um);
        for (const auto &s : scan.samples) {
            ys.push_back(s.y_um);
        }
    }
    const auto y_axis = impl::infer_axis(ys, 1.0, "y");
    const auto x_axis = impl::infer_axis(xs, y_axis.pitch, "x");

    HeightMap map(x_axis.count, y_axis.count, x_axis.origin, y_axis.origin, x_axis.pitch, y_axis.pitch);
    std::vector<bool> seen(x_axis.count, false);
    for (const auto &scan : scans) {
        const auto i = impl::grid_index(x_axis, scan.x_um);
        require(!seen[i], ErrorKind::validation, "two scans share x position");
        seen[i] = true;
        if (scan.masked) {
            continue;
        }
        for (const auto &s : scan.samples) {
            map.at(i, impl::grid_index(y_axis, s.y_um)) = s.z_um;
        }
    }
    return map;
}

// Least-squares plane through the valid cells accepted by `select`, with
// coordinates centred before forming the normal equations.
template <typename Select>
PlaneModel fit_plane(const HeightMap &map, Select &&select)
{
    double n = 0.0;
    double mx = 0.0;
    double my = 0.0;
    double mz = 0.0;
    map.for_each_valid([&](std::size_t i, std::size_t j, double z) {
        if (select(i, j)) {
            n += 1.0;
            mx += map.x(i);
            my += map.y(j);
            mz += z;
        }
    });
    detail::require(n >= 3.0, ErrorKind::unlevelable, "fewer than three valid points for a plane");
    mx /= n;
    my /= n;
    mz /= n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    double sxz = 0.0;
    double syz = 0.0;
    map.for_each_valid([&](std::size_t i, std::size_t j, double z) {
        if (select(i, j)) {
            const double dx = map.x(i) - mx;
            const double dy = map.y(j) - my;
            const double dz = z - mz;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
            sxz += dx * dz;
            syz += dy * dz;
        }
    });
    const double det = sxx * syy - sxy * sxy;
    detail::require(sxx > 0.0 && syy > 0.0 && det > 1e-10 * sxx * syy, ErrorKind::unlevelable,
                    "points are collinear; plane is undetermined");
    PlaneModel plane;
    plane.a = (sxz * syy - syz * sxy) / det;
    plane.b = (syz * sxx - sxz * sxy) / det;
    plane.c = mz - plane.a * mx - plane.b * my;
    return plane;
}

inline PlaneModel fit_plane(const HeightMap &map)
{
    return fit_plane(map, [](std::size_t, std::size_t) { return true; });
}

inline HeightMap subtract_plane(HeightMap map, const PlaneModel &plane)
{
    for (std::size_t i = 0; i < map.columns(); ++i) {
        for (std::size_t j = 0; j < map.rows(); ++j) {
            if (map.valid(i, j)) {
                map.at(i, j) -= plane.at(map.x(i), map.y(j));
            }
        }
    }
    return map;
}

inline constexpr double default_step_threshold_um = 400.0;
inline constexpr double default_mask_threshold_um = 2.0;

// Lower of two height clusters found by 1-D two-means, seeded at the extremes.
inline double lower_cluster_center(const HeightMap &map)
{
    std::vector<double> z;
    map.for_each_valid([&](std::size_t, std::size_t, double v) { z.push_back(v); });
    double lo = *std::min_element(z.begin(), z.end());
    double hi = *std::max_element(z.begin(), z.end());
    for (int iter = 0; iter < 100 && hi > lo; ++iter) {
        const double split = 0.5 * (lo + hi);
        double sum_lo = 0.0;
        double sum_hi = 0.0;
        std::size_t n_lo = 0;
        std::size_t n_hi = 0;
        for (double v : z) {
            if (v < split) {
                sum_lo += v;
                ++n_lo;
            }
            else {
                sum_hi += v;
                ++n_hi;
            }
        }
        const double next_lo = n_lo ? sum_lo / static_cast<double>(n_lo) : lo;
        const double next_hi = n_hi ? sum_hi / static_cast<double>(n_hi) : hi;
        if (next_lo == lo && next_hi == hi) {
            break;
        }
        lo = next_lo;
        hi = next_hi;
    }
    return lo;
}

struct LevelResult
{
    HeightMap map;
    PlaneModel bottom_plane;
    std::size_t bottom_cells = 0;
};

// Subtracts the least-squares plane of the bottom-chip region from every
// cell. An empty region list selects the bottom chip automatically: cells
// lower than the lower height cluster plus half the step threshold.
inline LevelResult level_to_bottom_plane(const HeightMap &raw, const std::vector<Rect> &bottom_region,
                                         double step_threshold_um = default_step_threshold_um)
{
    detail::require(raw.count_valid() > 0, ErrorKind::all_masked, "map has no valid cells");
    std::vector<char> selected(raw.columns() * raw.rows(), 0);
    if (bottom_region.empty()) {
        detail::require(step_threshold_um > 0.0, ErrorKind::validation,
                        "step threshold must be positive");
        const double cut = lower_cluster_center(raw) + 0.5 * step_threshold_um;
        raw.for_each_valid([&](std::size_t i, std::size_t j, double z) {
            selected[i * raw.rows() + j] = z < cut;
        });
    }
    else {
        raw.for_each_valid([&](std::size_t i, std::size_t j, double) {
            selected[i * raw.rows() + j] = std::any_of(bottom_region.begin(), bottom_region.end(),
                                                       [&](const Rect &r) { return r.contains(raw.x(i), raw.y(j)); });
        });
    }
    LevelResult result;
    result.bottom_cells = static_cast<std::size_t>(std::count(selected.begin(), selected.end(), 1));
    result.bottom_plane =
        fit_plane(raw, [&](std::size_t i, std::size_t j) { return selected[i * raw.rows() + j] != 0; });
    result.map = subtract_plane(raw, result.bottom_plane);
    return result;
}

inline LevelResult level_to_bottom_plane(const std::vector<LineScan> &scans, const std::vector<Rect> &bottom_region,
                                         double step_threshold_um = default_step_threshold_um)
{
    return level_to_bottom_plane(make_height_map(scans), bottom_region, step_threshold_um);
}

// Sub-grid bounding the cells above step_threshold; everything at or below
// the threshold inside that box is invalidated.
inline HeightMap crop_top_chip(const HeightMap &map, double step_threshold_um)
{
    detail::require(step_threshold_um > 0.0 && std::isfinite(step_threshold_um), ErrorKind::validation,
                    "step threshold must be positive");
    std::size_t i_lo = map.columns();
    std::size_t i_hi = 0;
    std::size_t j_lo = map.rows();
    std::size_t j_hi = 0;
    map.for_each_valid([&](std::size_t i, std::size_t j, double z) {
        if (z > step_threshold_um) {
            i_lo = std::min(i_lo, i);
            i_hi = std::max(i_hi, i);
            j_lo = std::min(j_lo, j);
            j_hi = std::max(j_hi, j);
        }
    });
    if (i_lo > i_hi) {
        throw Error(ErrorKind::empty_selection, "no cell lies above the step threshold");
    }
    HeightMap top(i_hi - i_lo + 1, j_hi - j_lo + 1, map.x(i_lo), map.y(j_lo), map.x_pitch(), map.y_pitch());
    for (std::size_t i = i_lo; i <= i_hi; ++i) {
        for (std::size_t j = j_lo; j <= j_hi; ++j) {
            const double z = map.at(i, j);
            if (std::isfinite(z) && z > step_threshold_um) {
                top.at(i - i_lo, j - j_lo) = z;
            }
        }
    }
    for (auto c : map.masked_columns) {
        if (c >= i_lo && c <= i_hi) {
            top.masked_columns.push_back(c - i_lo);
        }
    }
    return top;
}

inline constexpr std::size_t mask_neighbours_per_side = 3;

// Invalidates scans whose median height jumps by more than the threshold
// against the median of their neighbouring scans (up to three on each side,
// borrowed from the other side at the map edges). Using several neighbours
// lets a run of two or three offset scans fail against the unaffected ones.
inline HeightMap mask_artifact_scans(const HeightMap &map, double median_jump_threshold_um)
{
    detail::require(map.columns() >= 3, ErrorKind::validation, "masking needs at least three scans");
    detail::require(median_jump_threshold_um > 0.0, ErrorKind::validation,
                    "mask threshold must be positive");
    std::vector<std::size_t> candidates;
    std::vector<double> medians;
    for (std::size_t i = 0; i < map.columns(); ++i) {
        std::vector<double> values;
        for (double z : map.column(i)) {
            if (std::isfinite(z)) {
                values.push_back(z);
            }
        }
        if (!values.empty()) {
            candidates.push_back(i);
            medians.push_back(impl::median(std::move(values)));
        }
    }

    HeightMap out = map;
    const std::size_t m = candidates.size();
    if (m < 2) {
        return out;
    }
    const std::size_t want = std::min<std::size_t>(2 * mask_neighbours_per_side, m - 1);
    for (std::size_t p = 0; p < m; ++p) {
        std::vector<double> neighbours;
        std::size_t left = p;
        std::size_t right = p + 1;
        std::size_t left_taken = 0;
        std::size_t right_taken = 0;
        while (neighbours.size() < want) {
            const bool left_ok = left > 0;
            const bool right_ok = right < m;
            const bool prefer_left = left_taken <= right_taken;
            if (left_ok && (prefer_left || !right_ok)) {
                neighbours.push_back(medians[--left]);
                ++left_taken;
            }
            else if (right_ok) {
                neighbours.push_back(medians[right++]);
                ++right_taken;
            }
            else {
                break;
            }
        }
        const double reference = impl::median(std::move(neighbours));
        if (std::abs(medians[p] - reference) > median_jump_threshold_um) {
            out.invalidate_column(candidates[p]);
            out.masked_columns.push_back(candidates[p]);
        }
    }
    std::sort(out.masked_columns.begin(), out.masked_columns.end());
    out.masked_columns.erase(std::unique(out.masked_columns.begin(), out.masked_columns.end()),
                             out.masked_columns.end());
    return out;
}

struct ChipSummary
{
    double mean_separation_um = 0.0;
    double tilt_urad = 0.0;
    double bow_um = 0.0; // mean corner residual minus centre residual
    double substrate_thickness_used_um = 0.0;
    std::size_t n_masked_scans = 0;
    std::size_t valid_cells = 0;
    PlaneModel plane;
};

inline constexpr double bow_patch_fraction = 0.1;

// Mean plane residual in a square patch (side = bow_patch_fraction of the
// valid extent) anchored at (fx, fy) in fractional coordinates of that extent.
// Falls back to the nearest valid cell when the patch is fully masked.
inline double patch_residual(const HeightMap &map, const PlaneModel &plane, double fx, double fy)
{
    double x_lo = std::numeric_limits<double>::infinity();
    double x_hi = -x_lo;
    double y_lo = x_lo;
    double y_hi = -x_lo;
    map.for_each_valid([&](std::size_t i, std::size_t j, double) {
        x_lo = std::min(x_lo, map.x(i));
        x_hi = std::max(x_hi, map.x(i));
        y_lo = std::min(y_lo, map.y(j));
        y_hi = std::max(y_hi, map.y(j));
    });
    const double half_x = std::max(0.5 * map.x_pitch(), 0.5 * bow_patch_fraction * (x_hi - x_lo));
    const double half_y = std::max(0.5 * map.y_pitch(), 0.5 * bow_patch_fraction * (y_hi - y_lo));
    // Patch centres are pulled inwards so the patch stays inside the extent.
    const double cx = std::clamp(x_lo + fx * (x_hi - x_lo), x_lo + half_x, std::max(x_lo + half_x, x_hi - half_x));
    const double cy = std::clamp(y_lo + fy * (y_hi - y_lo), y_lo + half_y, std::max(y_lo + half_y, y_hi - half_y));

    double sum = 0.0;
    std::size_t n = 0;
    double nearest_distance = std::numeric_limits<double>::infinity();
    double nearest_residual = 0.0;
    map.for_each_valid([&](std::size_t i, std::size_t j, double z) {
        const double x = map.x(i);
        const double y = map.y(j);
        const double r = z - plane.at(x, y);
        if (std::abs(x - cx) <= half_x + 1e-9 && std::abs(y - cy) <= half_y + 1e-9) {
            sum += r;
            ++n;
        }
        const double dist = std::hypot(x - cx, y - cy);
        if (dist < nearest_distance) {
            nearest_distance = dist;
            nearest_residual = r;
        }
    });
    return n ? sum / static_cast<double>(n) : nearest_residual;
}

inline ChipSummary summarize_chip(const HeightMap &top, double substrate_thickness_um)
{
    detail::require(std::isfinite(substrate_thickness_um) && substrate_thickness_um >= 0.0,
                    ErrorKind::validation, "substrate thickness must be non-negative");
    ChipSummary s;
    s.plane = fit_plane(top);
    double sum = 0.0;
    top.for_each_valid([&](std::size_t, std::size_t, double z) {
        sum += z;
        ++s.valid_cells;
    });
    s.mean_separation_um = sum / static_cast<double>(s.valid_cells) - substrate_thickness_um;
    s.tilt_urad = s.plane.tilt_urad();
    const double corners = 0.25 * (patch_residual(top, s.plane, 0.0, 0.0) + patch_residual(top, s.plane, 1.0, 0.0) +
                                   patch_residual(top, s.plane, 0.0, 1.0) + patch_residual(top, s.plane, 1.0, 1.0));
    s.bow_um = corners - patch_residual(top, s.plane, 0.5, 0.5);
    s.substrate_thickness_used_um = substrate_thickness_um;
    s.n_masked_scans = top.masked_columns.size();
    return s;
}

struct Corner
{
    std::string label;
    double x_um = 0.0;
    double y_um = 0.0;
    double separation_um = 0.0;
};

using CornerSet = std::array<Corner, 4>;

struct CornerTilt
{
    double worst_case_urad = 0.0;
    double mean_separation_um = 0.0;
    std::string pair_first;
    std::string pair_second;
};

// Largest arctan(|dz| / lateral distance) over the six corner pairs.
inline CornerTilt corner_tilt_worst_case(const CornerSet &corners)
{
    CornerTilt result;
    double sum = 0.0;
    for (const auto &c : corners) {
        detail::require(std::isfinite(c.separation_um) && std::isfinite(c.x_um) && std::isfinite(c.y_um),
                        ErrorKind::validation, "corner values must be finite");
        sum += c.separation_um;
    }
    result.mean_separation_um = 0.25 * sum;
    result.worst_case_urad = -1.0;
    for (std::size_t p = 0; p < corners.size(); ++p) {
        for (std::size_t q = p + 1; q < corners.size(); ++q) {
            const double lateral = std::hypot(corners[q].x_um - corners[p].x_um, corners[q].y_um - corners[p].y_um);
            detail::require(lateral > 1e-9, ErrorKind::degenerate,
                            "corners " + corners[p].label + " and " + corners[q].label + " coincide");
            const double tilt = constants::urad_per_rad *
                                std::atan(std::abs(corners[q].separation_um - corners[p].separation_um) / lateral);
            if (tilt > result.worst_case_urad) {
                result.worst_case_urad = tilt;
                result.pair_first = corners[p].label;
                result.pair_second = corners[q].label;
            }
        }
    }
    return result;
}

} // namespace flipchip::heightmap

#endif
