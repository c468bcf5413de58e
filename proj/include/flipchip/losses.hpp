#ifndef FLIPCHIP_LOSSES_HPP
#define FLIPCHIP_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"

// Relative quality factors from interface participation ratios. The ratios
// themselves come from an external electrostatic solver (10 nm interface
// layers with eps = 10 in the usual convention) and are consumed as data.
namespace flipchip::losses
{
struct ParticipationRecord
{
    double w_um = 0.0;
    std::string facing;
    std::optional<double> p_ms;
    std::optional<double> p_mv;
    std::optional<double> p_sv;
    std::optional<double> p_bulk_substrate;
    std::optional<double> p_vacuum;
};

inline void validate(const ParticipationRecord &r)
{
    detail::require(r.w_um > 0.0, ErrorKind::validation, "width must be positive");
    double sum = 0.0;
    for (const auto &p : {r.p_ms, r.p_mv, r.p_sv, r.p_bulk_substrate, r.p_vacuum}) {
        if (p) {
            detail::require(*p >= 0.0 && *p <= 1.0, ErrorKind::validation, "participation ratio outside [0, 1]");
            sum += *p;
        }
    }
    detail::require(sum <= 1.0 + 1e-6, ErrorKind::validation, "participation ratios sum above one");
}

// p_sigma = p_MS + p_MV + p_SV, all interfaces weighted equally.
inline double total_participation(const ParticipationRecord &r)
{
    detail::require(r.p_ms && r.p_mv && r.p_sv, ErrorKind::validation,
                    "MS, MV and SV participation ratios are all required");
    validate(r);
    return *r.p_ms + *r.p_mv + *r.p_sv;
}

struct QPoint
{
    double w_um = 0.0;
    double q_pr = 0.0;
};

struct RelativeQCurve
{
    std::string facing;
    double anchor_w_um = 0.0;
    double anchor_q = 0.0;
    std::vector<QPoint> points;
};

inline std::vector<ParticipationRecord> select_facing(const std::vector<ParticipationRecord> &records,
                                                      const std::string &facing)
{
    std::vector<ParticipationRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [&](const ParticipationRecord &r) { return facing.empty() || r.facing == facing; });
    std::sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.w_um < b.w_um; });
    return out;
}

// Q_pr(w) = Q_anchor * p_sigma(w_anchor) / p_sigma(w) for one facing.
inline RelativeQCurve relative_q(const std::vector<ParticipationRecord> &records, double anchor_w_um, double anchor_q,
                                 const std::string &facing = {})
{
    detail::require(anchor_q > 0.0, ErrorKind::validation, "anchor Q must be positive");
    const auto rows = select_facing(records, facing);
    const auto anchor = std::find_if(rows.begin(), rows.end(), [&](const auto &r) { return r.w_um == anchor_w_um; });
    if (anchor == rows.end()) {
        throw Error(ErrorKind::missing_anchor, "no participation record at w = " + std::to_string(anchor_w_um) +
                                                   " um for facing '" + facing + "'");
    }
    const double p_anchor = total_participation(*anchor);
    detail::require(p_anchor > 0.0, ErrorKind::domain, "zero participation at the anchor width");

    RelativeQCurve curve{facing, anchor_w_um, anchor_q, {}};
    for (const auto &r : rows) {
        const double p = total_participation(r);
        detail::require(p > 0.0, ErrorKind::domain, "zero participation at w = " + std::to_string(r.w_um) + " um");
        curve.points.push_back({r.w_um, r.w_um == anchor_w_um ? anchor_q : anchor_q * (p_anchor / p)});
    }
    return curve;
}

// Log-log linear interpolation of p_sigma between the bracketing widths.
inline double interpolate_p_sigma(const std::vector<ParticipationRecord> &records, double w_query_um,
                                  const std::string &facing = {})
{
    const auto rows = select_facing(records, facing);
    detail::require(!rows.empty(), ErrorKind::validation, "no participation records");
    if (w_query_um < rows.front().w_um || w_query_um > rows.back().w_um) {
        throw Error(ErrorKind::extrapolation, "w = " + std::to_string(w_query_um) + " um outside [" +
                                                  std::to_string(rows.front().w_um) + ", " +
                                                  std::to_string(rows.back().w_um) + "] um");
    }
    auto upper = std::lower_bound(rows.begin(), rows.end(), w_query_um,
                                  [](const ParticipationRecord &r, double w) { return r.w_um < w; });
    if (upper->w_um == w_query_um) {
        return total_participation(*upper);
    }
    const auto lower = std::prev(upper);
    const double p_lo = total_participation(*lower);
    const double p_hi = total_participation(*upper);
    detail::require(p_lo > 0.0 && p_hi > 0.0, ErrorKind::domain, "log interpolation needs positive p_sigma");
    const double t = std::log(w_query_um / lower->w_um) / std::log(upper->w_um / lower->w_um);
    return std::exp((1.0 - t) * std::log(p_lo) + t * std::log(p_hi));
}

} // namespace flipchip::losses

#endif
