#ifndef FLIPCHIP_IO_HPP
#define FLIPCHIP_IO_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "error.hpp"
#include "heightmap.hpp"
#include "losses.hpp"
#include "resonator.hpp"
#include "vnafit.hpp"

// File formats: comma-separated tables with a header row, JSON reports with
// fixed key order and nine significant digits.
namespace flipchip::io
{
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int significant_digits = 9;

// Value as printed with nine significant digits and read back, so that the
// JSON serializer emits a stable short form.
inline double round_sig(double value)
{
    if (!std::isfinite(value)) {
        return value;
    }
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.*g", significant_digits, value);
    return std::strtod(buffer, nullptr);
}

// Non-finite numbers become null; JSON has no NaN.
inline json number(double value)
{
    if (!std::isfinite(value)) {
        return nullptr;
    }
    return round_sig(value);
}

inline json numbers(const std::vector<double> &values)
{
    json out = json::array();
    for (double v : values) {
        out.push_back(number(v));
    }
    return out;
}

inline std::string format_number(double value)
{
    if (std::isnan(value)) {
        return "NaN";
    }
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.*g", significant_digits, value);
    return buffer;
}

inline std::string dump(const json &document) { return document.dump(2) + "\n"; }

inline std::string read_text(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline void write_text(const fs::path &path, const std::string &text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw Error(ErrorKind::io, "write failed for " + path.string());
    }
}

inline std::string sha256_hex(const std::string &bytes)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorKind::io, "SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < length; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

inline std::string sha256_file(const fs::path &path) { return sha256_hex(read_text(path)); }

// ---------------------------------------------------------------------------
// CSV

struct Table
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> lines; // source line of each row, for messages

    std::optional<std::size_t> column(const std::string &name) const
    {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - header.begin());
    }

    std::size_t require_column(const std::string &name, const std::string &source) const
    {
        const auto c = column(name);
        if (!c) {
            throw Error(ErrorKind::validation, source + ": missing column '" + name + "'");
        }
        return *c;
    }
};

inline std::string trim(const std::string &text)
{
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = text.find_last_not_of(" \t\r\n");
    return text.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string &line)
{
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(trim(field));
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

// Blank lines and lines starting with '#' are skipped.
inline Table parse_csv(const std::string &text, const std::string &source)
{
    Table table;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string clean = trim(line);
        if (clean.empty() || clean.front() == '#') {
            continue;
        }
        auto fields = split(clean);
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw Error(ErrorKind::validation, source + ":" + std::to_string(line_no) + ": expected " +
                                                   std::to_string(table.header.size()) + " fields, found " +
                                                   std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
        table.lines.push_back(line_no);
    }
    if (!have_header) {
        throw Error(ErrorKind::validation, source + ": empty file");
    }
    return table;
}

inline Table read_csv(const fs::path &path) { return parse_csv(read_text(path), path.string()); }

inline double parse_double(const std::string &field, const std::string &where)
{
    const std::string lowered = [&] {
        std::string s = field;
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    }();
    if (lowered == "nan" || lowered.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    char *end = nullptr;
    errno = 0;
    const double value = std::strtod(field.c_str(), &end);
    if (end == field.c_str() || *end != '\0' || errno == ERANGE) {
        throw Error(ErrorKind::validation, where + ": not a number: '" + field + "'");
    }
    return value;
}

inline double parse_finite(const std::string &field, const std::string &where)
{
    const double value = parse_double(field, where);
    if (!std::isfinite(value)) {
        throw Error(ErrorKind::validation, where + ": value must be finite");
    }
    return value;
}

inline int parse_int(const std::string &field, const std::string &where)
{
    const double value = parse_finite(field, where);
    if (value != std::floor(value) || std::abs(value) > 1e9) {
        throw Error(ErrorKind::validation, where + ": not an integer: '" + field + "'");
    }
    return static_cast<int>(value);
}

inline std::string where(const std::string &source, const Table &t, std::size_t row)
{
    return source + ":" + std::to_string(t.lines[row]);
}

enum class FileKind
{
    height_map,
    resonators,
    trace,
    participation,
    corners,
    unknown,
};

inline std::string_view to_string(FileKind kind)
{
    switch (kind) {
    case FileKind::height_map: return "height_map";
    case FileKind::resonators: return "resonators";
    case FileKind::trace: return "trace";
    case FileKind::participation: return "participation";
    case FileKind::corners: return "corners";
    case FileKind::unknown: return "unknown";
    }
    return "unknown";
}

// Recognises a table by the leading columns of its header.
inline FileKind classify(const std::vector<std::string> &header)
{
    auto starts_with = [&](std::initializer_list<const char *> names) {
        if (header.size() < names.size()) {
            return false;
        }
        std::size_t i = 0;
        for (const char *n : names) {
            if (header[i++] != n) {
                return false;
            }
        }
        return true;
    };
    if (starts_with({"x_um", "y_um", "z_um"})) return FileKind::height_map;
    if (starts_with({"index", "length_um", "f_ghz"})) return FileKind::resonators;
    if (starts_with({"f_hz", "re_s21", "im_s21"})) return FileKind::trace;
    if (starts_with({"w_um", "facing", "p_ms", "p_mv", "p_sv"})) return FileKind::participation;
    if (starts_with({"module", "corner", "x_um", "y_um", "sep_um"})) return FileKind::corners;
    return FileKind::unknown;
}

inline FileKind classify_file(const fs::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open " + path.string());
    }
    std::string line;
    while (std::getline(in, line)) {
        const std::string clean = trim(line);
        if (!clean.empty() && clean.front() != '#') {
            return classify(split(clean));
        }
    }
    return FileKind::unknown;
}

// --- height maps -----------------------------------------------------------

// Rows sharing an x value form one line scan; scans are ordered by x and
// samples by y.
inline std::vector<heightmap::LineScan> scans_from_table(const Table &t, const std::string &source)
{
    const auto cx = t.require_column("x_um", source);
    const auto cy = t.require_column("y_um", source);
    const auto cz = t.require_column("z_um", source);
    std::map<double, std::vector<heightmap::Sample>> by_x;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto at = where(source, t, r);
        const double x = parse_finite(t.rows[r][cx], at);
        const double y = parse_finite(t.rows[r][cy], at);
        const double z = parse_double(t.rows[r][cz], at);
        by_x[x].push_back({y, z});
    }
    detail::require(!by_x.empty(), ErrorKind::validation, source + ": no samples");
    std::vector<heightmap::LineScan> scans;
    int index = 0;
    for (auto &[x, samples] : by_x) {
        std::sort(samples.begin(), samples.end(), [](const auto &a, const auto &b) { return a.y_um < b.y_um; });
        for (std::size_t k = 1; k < samples.size(); ++k) {
            detail::require(samples[k].y_um > samples[k - 1].y_um, ErrorKind::validation,
                            source + ": repeated y position in scan at x = " + format_number(x));
        }
        scans.push_back({index++, x, std::move(samples), false});
    }
    return scans;
}

inline std::vector<heightmap::LineScan> read_scans(const fs::path &path)
{
    return scans_from_table(read_csv(path), path.string());
}

inline std::string height_map_csv(const heightmap::HeightMap &map)
{
    std::string out = "x_um,y_um,z_um\n";
    for (std::size_t i = 0; i < map.columns(); ++i) {
        for (std::size_t j = 0; j < map.rows(); ++j) {
            out += format_number(map.x(i)) + ',' + format_number(map.y(j)) + ',' + format_number(map.at(i, j)) + '\n';
        }
    }
    return out;
}

inline std::string scans_csv(const std::vector<heightmap::LineScan> &scans)
{
    std::string out = "x_um,y_um,z_um\n";
    for (const auto &scan : scans) {
        for (const auto &s : scan.samples) {
            out += format_number(scan.x_um) + ',' + format_number(s.y_um) + ',' + format_number(s.z_um) + '\n';
        }
    }
    return out;
}

// --- resonators ------------------------------------------------------------

// Columns index,length_um,f_ghz,copy_id with an optional facing column. An
// empty or NaN frequency marks a resonator without measurement.
inline std::vector<resonator::ResonatorRecord> resonators_from_table(const Table &t, const std::string &source)
{
    const auto ci = t.require_column("index", source);
    const auto cl = t.require_column("length_um", source);
    const auto cf = t.require_column("f_ghz", source);
    const auto cc = t.column("copy_id");
    const auto cfacing = t.column("facing");
    std::vector<resonator::ResonatorRecord> records;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto at = where(source, t, r);
        resonator::ResonatorRecord rec;
        rec.index = parse_int(t.rows[r][ci], at);
        rec.length_um = parse_finite(t.rows[r][cl], at);
        const double f = parse_double(t.rows[r][cf], at);
        if (std::isfinite(f)) {
            rec.measured_f_ghz = f;
        }
        if (cc) {
            rec.copy_id = t.rows[r][*cc];
        }
        if (cfacing) {
            rec.facing = t.rows[r][*cfacing];
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<resonator::ResonatorRecord> read_resonators(const fs::path &path)
{
    return resonators_from_table(read_csv(path), path.string());
}

// --- traces ----------------------------------------------------------------

inline vnafit::ComplexTrace trace_from_table(const Table &t, const std::string &source)
{
    const auto cf = t.require_column("f_hz", source);
    const auto cr = t.require_column("re_s21", source);
    const auto cim = t.require_column("im_s21", source);
    vnafit::ComplexTrace trace;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto at = where(source, t, r);
        trace.freqs.push_back(parse_finite(t.rows[r][cf], at));
        trace.s21.emplace_back(parse_finite(t.rows[r][cr], at), parse_finite(t.rows[r][cim], at));
    }
    return trace;
}

inline vnafit::ComplexTrace read_trace(const fs::path &path)
{
    return trace_from_table(read_csv(path), path.string());
}

inline std::string trace_csv(const vnafit::ComplexTrace &trace)
{
    std::string out = "f_hz,re_s21,im_s21\n";
    for (std::size_t k = 0; k < trace.freqs.size(); ++k) {
        char line[96];
        std::snprintf(line, sizeof line, "%.12g,%.12g,%.12g\n", trace.freqs[k], trace.s21[k].real(),
                      trace.s21[k].imag());
        out += line;
    }
    return out;
}

// --- participation ratios ---------------------------------------------------

inline std::vector<losses::ParticipationRecord> participation_from_table(const Table &t, const std::string &source)
{
    const auto cw = t.require_column("w_um", source);
    const auto cfacing = t.require_column("facing", source);
    const auto optional_ratio = [&](const char *name, const std::vector<std::string> &row,
                                    const std::string &at) -> std::optional<double> {
        const auto c = t.column(name);
        if (!c) {
            return std::nullopt;
        }
        const double v = parse_double(row[*c], at);
        return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
    };
    std::vector<losses::ParticipationRecord> records;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto at = where(source, t, r);
        const auto &row = t.rows[r];
        losses::ParticipationRecord rec;
        rec.w_um = parse_finite(row[cw], at);
        rec.facing = row[cfacing];
        rec.p_ms = optional_ratio("p_ms", row, at);
        rec.p_mv = optional_ratio("p_mv", row, at);
        rec.p_sv = optional_ratio("p_sv", row, at);
        rec.p_bulk_substrate = optional_ratio("p_bulk_substrate", row, at);
        rec.p_vacuum = optional_ratio("p_vacuum", row, at);
        losses::validate(rec);
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<losses::ParticipationRecord> read_participation(const fs::path &path)
{
    return participation_from_table(read_csv(path), path.string());
}

// --- SEM corner tables ------------------------------------------------------

struct CornerModule
{
    std::string module;
    heightmap::CornerSet corners;
};

// Columns module,corner,x_um,y_um,sep_um. Any further sep_* columns are
// additional readings of the same corner and are averaged with sep_um.
inline std::vector<CornerModule> corners_from_table(const Table &t, const std::string &source)
{
    const auto cm = t.require_column("module", source);
    const auto cc = t.require_column("corner", source);
    const auto cx = t.require_column("x_um", source);
    const auto cy = t.require_column("y_um", source);
    std::vector<std::size_t> readings;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        if (t.header[c].rfind("sep", 0) == 0) {
            readings.push_back(c);
        }
    }
    std::vector<CornerModule> modules;
    std::map<std::string, std::vector<heightmap::Corner>> grouped;
    std::vector<std::string> order;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto at = where(source, t, r);
        const auto &row = t.rows[r];
        heightmap::Corner corner;
        corner.label = row[cc];
        corner.x_um = parse_finite(row[cx], at);
        corner.y_um = parse_finite(row[cy], at);
        double sum = 0.0;
        int n = 0;
        for (auto c : readings) {
            const double v = parse_double(row[c], at);
            if (std::isfinite(v)) {
                sum += v;
                ++n;
            }
        }
        detail::require(n > 0, ErrorKind::validation, at + ": corner has no separation reading");
        corner.separation_um = sum / n;
        if (!grouped.count(row[cm])) {
            order.push_back(row[cm]);
        }
        grouped[row[cm]].push_back(std::move(corner));
    }
    for (const auto &name : order) {
        const auto &list = grouped[name];
        detail::require(list.size() == 4, ErrorKind::validation,
                        source + ": module '" + name + "' has " + std::to_string(list.size()) +
                            " corners, expected 4");
        CornerModule m{name, {}};
        std::copy(list.begin(), list.end(), m.corners.begin());
        modules.push_back(std::move(m));
    }
    detail::require(!modules.empty(), ErrorKind::validation, source + ": no corner rows");
    return modules;
}

inline std::vector<CornerModule> read_corners(const fs::path &path)
{
    return corners_from_table(read_csv(path), path.string());
}

// ---------------------------------------------------------------------------
// JSON views of the result types

inline json to_json(const heightmap::PlaneModel &p)
{
    return json{{"a", number(p.a)}, {"b", number(p.b)}, {"c", number(p.c)}};
}

inline json to_json(const heightmap::ChipSummary &s, const std::vector<std::size_t> &masked_columns)
{
    json out;
    out["mean_separation_um"] = number(s.mean_separation_um);
    out["tilt_urad"] = number(s.tilt_urad);
    out["bow_um"] = number(s.bow_um);
    out["masked_columns"] = masked_columns;
    out["plane"] = to_json(s.plane);
    out["substrate_thickness_um"] = number(s.substrate_thickness_used_um);
    out["valid_cells"] = s.valid_cells;
    return out;
}

inline json to_json(const resonator::FrequencyFit &fit)
{
    json out;
    out["v_ph"] = number(fit.v_ph);
    out["b_s"] = number(fit.b);
    out["residual_rms_mhz"] = number(fit.residual_rms_mhz);
    out["indices"] = fit.indices;
    out["lengths_um"] = numbers(fit.lengths_um);
    out["mean_f_ghz"] = numbers(fit.mean_f_ghz);
    out["residuals_mhz"] = numbers(fit.residuals_mhz);
    return out;
}

inline json to_json(const resonator::DeviationStats &stats)
{
    json rows = json::array();
    for (const auto &d : stats.deviations) {
        rows.push_back({{"index", d.index}, {"copy_id", d.copy_id}, {"deviation_mhz", number(d.deviation_mhz)}});
    }
    json out;
    out["mean_abs_mhz"] = number(stats.mean_abs_mhz);
    out["max_abs_mhz"] = number(stats.max_abs_mhz);
    out["max_pair_spread_mhz"] = number(stats.max_pair_spread_mhz);
    out["deviations"] = std::move(rows);
    return out;
}

inline json to_json(const vnafit::NotchFit &fit)
{
    json out;
    out["f0_hz"] = number(fit.f0);
    out["q_l"] = number(fit.q_l);
    out["q_c_mag"] = number(fit.q_c_mag);
    out["phi_rad"] = number(fit.phi);
    out["q_i"] = number(fit.q_i);
    out["background"] = {{"amplitude", number(fit.background.amplitude)},
                         {"phase_rad", number(fit.background.phase)},
                         {"delay_s", number(fit.background.delay)}};
    out["rms_residual"] = number(fit.rms_residual);
    out["circle_diameter"] = number(fit.circle_diameter);
    out["noise_floor"] = number(fit.noise_floor);
    return out;
}

inline json to_json(const vnafit::PhotonCalc &p)
{
    return json{{"kappa_rad_per_s", number(p.kappa)},
                {"gamma_rad_per_s", number(p.gamma)},
                {"p_app_w", number(p.p_app)},
                {"n_int", number(p.n_int)}};
}

inline json to_json(const losses::RelativeQCurve &curve)
{
    json points = json::array();
    for (const auto &p : curve.points) {
        points.push_back({{"w_um", number(p.w_um)}, {"q_pr", number(p.q_pr)}});
    }
    json out;
    out["facing"] = curve.facing;
    out["anchor_w_um"] = number(curve.anchor_w_um);
    out["anchor_q"] = number(curve.anchor_q);
    out["points"] = std::move(points);
    return out;
}

inline std::string relative_q_csv(const losses::RelativeQCurve &curve)
{
    std::string out = "w_um,q_pr\n";
    for (const auto &p : curve.points) {
        out += format_number(p.w_um) + ',' + format_number(p.q_pr) + '\n';
    }
    return out;
}

inline std::string fit_residuals_csv(const resonator::FrequencyFit &fit)
{
    std::string out = "index,length_um,mean_f_ghz,residual_mhz\n";
    for (std::size_t i = 0; i < fit.indices.size(); ++i) {
        out += std::to_string(fit.indices[i]) + ',' + format_number(fit.lengths_um[i]) + ',' +
               format_number(fit.mean_f_ghz[i]) + ',' + format_number(fit.residuals_mhz[i]) + '\n';
    }
    return out;
}

} // namespace flipchip::io

#endif
