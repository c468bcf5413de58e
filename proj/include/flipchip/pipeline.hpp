#ifndef FLIPCHIP_PIPELINE_HPP
#define FLIPCHIP_PIPELINE_HPP

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cpw.hpp"
#include "heightmap.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "resonator.hpp"
#include "vnafit.hpp"

// Configuration and the batch report that runs every module over a dataset.
namespace flipchip::pipeline
{
namespace fs = std::filesystem;
using io::json;

inline constexpr const char *report_version = "1";

struct PipelineConfig
{
    double substrate_thickness_um = 525.2;
    double step_threshold_um = heightmap::default_step_threshold_um;
    double mask_threshold_um = heightmap::default_mask_threshold_um;

    double cpw_eps = constants::eps_silicon;
    double cpw_d_um = 10.0;
    double cpw_h_substrate_um = 525.0;

    vnafit::FitOptions fit;
    std::optional<double> power_dbm;
    double attenuation_db = 0.0;

    std::optional<double> relq_anchor_w_um;
    std::optional<double> relq_anchor_q;

    fs::path output_dir = "flipchip-out";
};

inline void validate(const PipelineConfig &c)
{
    using detail::require;
    require(c.substrate_thickness_um >= 0.0, ErrorKind::validation, "substrate_thickness_um must be >= 0");
    require(c.step_threshold_um > 0.0, ErrorKind::validation, "step_threshold_um must be positive");
    require(c.mask_threshold_um > 0.0, ErrorKind::validation, "mask_threshold_um must be positive");
    require(c.cpw_eps >= 1.0, ErrorKind::validation, "cpw.eps must be >= 1");
    require(c.cpw_d_um > 0.0 && c.cpw_h_substrate_um > 0.0, ErrorKind::validation,
            "cpw lengths must be positive");
    require(c.fit.wing_fraction > 0.0 && c.fit.wing_fraction < 0.5, ErrorKind::validation,
            "fit.wing_fraction must lie in (0, 0.5)");
    require(c.fit.detection_factor > 0.0, ErrorKind::validation, "fit.detection_factor must be positive");
    require(c.relq_anchor_w_um.has_value() == c.relq_anchor_q.has_value(), ErrorKind::validation,
            "relq.anchor_w_um and relq.anchor_q must be given together");
}

inline std::optional<double> optional_number(const json &j)
{
    if (j.is_null()) {
        return std::nullopt;
    }
    return j.get<double>();
}

// Unknown keys are rejected so that typos do not silently fall back to defaults.
inline PipelineConfig config_from_json(const json &j)
{
    PipelineConfig c;
    detail::require(j.is_object(), ErrorKind::validation, "config must be a JSON object");
    const auto reject = [](const std::string &key) {
        throw Error(ErrorKind::validation, "unknown config key '" + key + "'");
    };
    try {
        for (const auto &[key, value] : j.items()) {
            if (key == "substrate_thickness_um") c.substrate_thickness_um = value.get<double>();
            else if (key == "step_threshold_um") c.step_threshold_um = value.get<double>();
            else if (key == "mask_threshold_um") c.mask_threshold_um = value.get<double>();
            else if (key == "output_dir") c.output_dir = value.get<std::string>();
            else if (key == "cpw") {
                for (const auto &[k, v] : value.items()) {
                    if (k == "eps") c.cpw_eps = v.get<double>();
                    else if (k == "d_um") c.cpw_d_um = v.get<double>();
                    else if (k == "h_substrate_um") c.cpw_h_substrate_um = v.get<double>();
                    else reject("cpw." + k);
                }
            }
            else if (key == "fit") {
                for (const auto &[k, v] : value.items()) {
                    if (k == "wing_fraction") c.fit.wing_fraction = v.get<double>();
                    else if (k == "detection_factor") c.fit.detection_factor = v.get<double>();
                    else if (k == "refine_delay") c.fit.refine_delay = v.get<bool>();
                    else if (k == "polish") c.fit.polish = v.get<bool>();
                    else reject("fit." + k);
                }
            }
            else if (key == "photons") {
                for (const auto &[k, v] : value.items()) {
                    if (k == "power_dbm") c.power_dbm = optional_number(v);
                    else if (k == "attenuation_db") c.attenuation_db = v.get<double>();
                    else reject("photons." + k);
                }
            }
            else if (key == "relq") {
                for (const auto &[k, v] : value.items()) {
                    if (k == "anchor_w_um") c.relq_anchor_w_um = optional_number(v);
                    else if (k == "anchor_q") c.relq_anchor_q = optional_number(v);
                    else reject("relq." + k);
                }
            }
            else reject(key);
        }
    }
    catch (const nlohmann::json::exception &e) {
        throw Error(ErrorKind::validation, std::string("config: ") + e.what());
    }
    validate(c);
    return c;
}

inline PipelineConfig load_config(const fs::path &path)
{
    json j;
    try {
        j = json::parse(io::read_text(path));
    }
    catch (const nlohmann::json::parse_error &e) {
        throw Error(ErrorKind::validation, path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

// Explicit path first, then FLIPCHIP_CONFIG, then built-in defaults.
inline PipelineConfig resolve_config(const std::optional<fs::path> &explicit_path)
{
    if (explicit_path) {
        return load_config(*explicit_path);
    }
    if (const char *env = std::getenv("FLIPCHIP_CONFIG"); env && *env) {
        return load_config(env);
    }
    return PipelineConfig{};
}

// The output directory is left out: it does not affect any result and would
// otherwise make reports differ between runs into different directories.
inline json to_json(const PipelineConfig &c)
{
    json out;
    out["substrate_thickness_um"] = io::number(c.substrate_thickness_um);
    out["step_threshold_um"] = io::number(c.step_threshold_um);
    out["mask_threshold_um"] = io::number(c.mask_threshold_um);
    out["cpw"] = {{"eps", io::number(c.cpw_eps)},
                  {"d_um", io::number(c.cpw_d_um)},
                  {"h_substrate_um", io::number(c.cpw_h_substrate_um)}};
    out["fit"] = {{"wing_fraction", io::number(c.fit.wing_fraction)},
                  {"detection_factor", io::number(c.fit.detection_factor)},
                  {"refine_delay", c.fit.refine_delay},
                  {"polish", c.fit.polish}};
    out["photons"] = {{"power_dbm", c.power_dbm ? io::number(*c.power_dbm) : json(nullptr)},
                      {"attenuation_db", io::number(c.attenuation_db)}};
    out["relq"] = {{"anchor_w_um", c.relq_anchor_w_um ? io::number(*c.relq_anchor_w_um) : json(nullptr)},
                   {"anchor_q", c.relq_anchor_q ? io::number(*c.relq_anchor_q) : json(nullptr)}};
    return out;
}

// --- single-stage helpers shared by the CLI and the report -----------------

struct ChipAnalysis
{
    heightmap::LevelResult level;
    heightmap::HeightMap top;
    heightmap::ChipSummary summary;
};

inline ChipAnalysis analyse_chip(const std::vector<heightmap::LineScan> &scans, const PipelineConfig &c,
                                 const std::vector<heightmap::Rect> &bottom_region = {})
{
    ChipAnalysis a;
    a.level = heightmap::level_to_bottom_plane(scans, bottom_region, c.step_threshold_um);
    const auto cropped = heightmap::crop_top_chip(a.level.map, c.step_threshold_um);
    a.top = heightmap::mask_artifact_scans(cropped, c.mask_threshold_um);
    a.summary = heightmap::summarize_chip(a.top, c.substrate_thickness_um);
    return a;
}

inline json chip_json(const ChipAnalysis &a)
{
    json out = io::to_json(a.summary, a.top.masked_columns);
    out["bottom_plane"] = io::to_json(a.level.bottom_plane);
    out["bottom_cells"] = a.level.bottom_cells;
    return out;
}

// Records grouped by facing; an absent facing column yields one unnamed group.
inline std::map<std::string, std::vector<resonator::ResonatorRecord>>
group_by_facing(const std::vector<resonator::ResonatorRecord> &records)
{
    std::map<std::string, std::vector<resonator::ResonatorRecord>> groups;
    for (const auto &r : records) {
        groups[r.facing].push_back(r);
    }
    return groups;
}

inline resonator::CopyTable copy_table(const std::vector<resonator::ResonatorRecord> &records)
{
    resonator::CopyTable copies;
    for (const auto &r : records) {
        if (r.measured_f_ghz && !r.copy_id.empty()) {
            copies[r.copy_id].emplace_back(r.index, *r.measured_f_ghz);
        }
    }
    return copies;
}

struct CornerAnalysis
{
    json modules = json::array();
    double mean_separation_um = 0.0;
    double mean_worst_case_urad = 0.0;
};

inline CornerAnalysis analyse_corners(const std::vector<io::CornerModule> &modules)
{
    CornerAnalysis out;
    for (const auto &m : modules) {
        const auto tilt = heightmap::corner_tilt_worst_case(m.corners);
        out.modules.push_back({{"module", m.module},
                               {"mean_separation_um", io::number(tilt.mean_separation_um)},
                               {"worst_case_tilt_urad", io::number(tilt.worst_case_urad)},
                               {"worst_pair", {tilt.pair_first, tilt.pair_second}}});
        out.mean_separation_um += tilt.mean_separation_um;
        out.mean_worst_case_urad += tilt.worst_case_urad;
    }
    out.mean_separation_um /= static_cast<double>(modules.size());
    out.mean_worst_case_urad /= static_cast<double>(modules.size());
    return out;
}

inline json notch_json(const vnafit::NotchFit &fit, const std::optional<double> &power_dbm, double attenuation_db)
{
    json out = io::to_json(fit);
    if (power_dbm) {
        const auto band = vnafit::photon_band(fit, *power_dbm, attenuation_db);
        out["p_app_w"] = io::number(vnafit::applied_power(*power_dbm, attenuation_db));
        out["n_int"] = io::number(band.nominal);
        out["n_int_band"] = {io::number(band.low), io::number(band.high)};
    }
    return out;
}

// --- report ----------------------------------------------------------------

struct ReportResult
{
    int exit_code = 0;
    fs::path report_path;
    std::vector<std::string> artifacts; // relative to the output directory
    std::string error;
};

inline std::vector<fs::path> collect_inputs(const std::vector<fs::path> &dataset)
{
    std::vector<fs::path> files;
    for (const auto &entry : dataset) {
        if (fs::is_directory(entry)) {
            for (const auto &f : fs::recursive_directory_iterator(entry)) {
                if (f.is_regular_file() && f.path().extension() == ".csv") {
                    files.push_back(f.path());
                }
            }
        }
        else if (fs::is_regular_file(entry)) {
            files.push_back(entry);
        }
        else {
            throw Error(ErrorKind::io, "input does not exist: " + entry.string());
        }
    }
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    return files;
}

// Display name of an input: relative to the dataset entry that contained it.
inline std::string display_name(const fs::path &file, const std::vector<fs::path> &dataset)
{
    for (const auto &entry : dataset) {
        if (fs::is_directory(entry)) {
            const auto rel = fs::relative(file, entry);
            if (!rel.empty() && rel.native().rfind("..", 0) != 0) {
                return rel.generic_string();
            }
        }
    }
    return file.filename().generic_string();
}

inline std::string artifact_stem(const std::string &name)
{
    std::string stem = fs::path(name).replace_extension().generic_string();
    std::replace(stem.begin(), stem.end(), '/', '_');
    return stem;
}

// Runs every applicable stage over the dataset and writes report.json plus
// per-stage CSV artifacts into config.output_dir. On failure the artifacts
// already written are kept and error_manifest.json describes the failure.
inline ReportResult run_report(const PipelineConfig &config, const std::vector<fs::path> &dataset)
{
    ReportResult result;
    const fs::path out_dir = config.output_dir;
    std::string stage = "setup";
    std::string current;

    auto write_artifact = [&](const std::string &name, const std::string &text) {
        io::write_text(out_dir / name, text);
        result.artifacts.push_back(name);
    };

    try {
        validate(config);
        fs::create_directories(out_dir);
        fs::remove(out_dir / "error_manifest.json");
        fs::remove(out_dir / "report.json");

        stage = "collect";
        const auto files = collect_inputs(dataset);
        if (files.empty()) {
            throw Error(ErrorKind::no_inputs, "no input files found");
        }

        json report;
        report["tool"] = "flipchip";
        report["report_version"] = report_version;
        report["config"] = to_json(config);
        json inputs = json::array();
        json chips = json::array();
        json fits = json::array();
        json deviations = json::array();
        json corners = json::array();
        json notches = json::array();
        json relq = json::array();
        json skipped = json::array();

        for (const auto &file : files) {
            current = display_name(file, dataset);
            stage = "classify";
            const auto kind = io::classify_file(file);
            inputs.push_back({{"file", current}, {"kind", io::to_string(kind)}, {"sha256", io::sha256_file(file)}});
            const std::string stem = artifact_stem(current);

            switch (kind) {
            case io::FileKind::height_map: {
                stage = "heightmap";
                const auto a = analyse_chip(io::read_scans(file), config);
                json entry{{"file", current}};
                entry.update(chip_json(a));
                chips.push_back(std::move(entry));
                write_artifact(stem + "_top.csv", io::height_map_csv(a.top));
                break;
            }
            case io::FileKind::resonators: {
                stage = "fit_vph";
                const auto records = io::read_resonators(file);
                std::string table = "facing,index,length_um,mean_f_ghz,residual_mhz\n";
                for (const auto &[facing, group] : group_by_facing(records)) {
                    const auto fit = resonator::fit_vph(group);
                    json entry{{"file", current}, {"facing", facing}};
                    entry.update(io::to_json(fit));
                    fits.push_back(std::move(entry));
                    for (std::size_t i = 0; i < fit.indices.size(); ++i) {
                        table += facing + ',' + std::to_string(fit.indices[i]) + ',' +
                                 io::format_number(fit.lengths_um[i]) + ',' + io::format_number(fit.mean_f_ghz[i]) +
                                 ',' + io::format_number(fit.residuals_mhz[i]) + '\n';
                    }
                }
                write_artifact(stem + "_fit_vph.csv", table);
                stage = "deviation_stats";
                if (const auto copies = copy_table(records); copies.size() >= 2) {
                    json entry{{"file", current}};
                    entry.update(io::to_json(resonator::deviation_stats(copies)));
                    deviations.push_back(std::move(entry));
                }
                break;
            }
            case io::FileKind::corners: {
                stage = "corner_tilt";
                const auto c = analyse_corners(io::read_corners(file));
                corners.push_back({{"file", current},
                                   {"mean_separation_um", io::number(c.mean_separation_um)},
                                   {"mean_worst_case_tilt_urad", io::number(c.mean_worst_case_urad)},
                                   {"modules", c.modules}});
                break;
            }
            case io::FileKind::trace: {
                stage = "fit_notch";
                const auto fit = vnafit::fit_notch(io::read_trace(file), config.fit);
                json entry{{"file", current}};
                entry.update(notch_json(fit, config.power_dbm, config.attenuation_db));
                notches.push_back(std::move(entry));
                break;
            }
            case io::FileKind::participation: {
                stage = "relq";
                const auto records = io::read_participation(file);
                if (!config.relq_anchor_w_um) {
                    skipped.push_back({{"file", current}, {"reason", "no relq anchor configured"}});
                    break;
                }
                std::vector<std::string> facings;
                for (const auto &r : records) {
                    if (std::find(facings.begin(), facings.end(), r.facing) == facings.end()) {
                        facings.push_back(r.facing);
                    }
                }
                std::sort(facings.begin(), facings.end());
                for (const auto &facing : facings) {
                    const auto curve =
                        losses::relative_q(records, *config.relq_anchor_w_um, *config.relq_anchor_q, facing);
                    json entry{{"file", current}};
                    entry.update(io::to_json(curve));
                    relq.push_back(std::move(entry));
                    write_artifact(stem + "_relq_" + (facing.empty() ? "all" : facing) + ".csv",
                                   io::relative_q_csv(curve));
                }
                break;
            }
            case io::FileKind::unknown:
                skipped.push_back({{"file", current}, {"reason", "unrecognised header"}});
                break;
            }
        }

        report["inputs"] = std::move(inputs);
        report["height_maps"] = std::move(chips);
        report["phase_velocity_fits"] = std::move(fits);
        report["copy_deviations"] = std::move(deviations);
        report["corner_tilts"] = std::move(corners);
        report["notch_fits"] = std::move(notches);
        report["relative_q"] = std::move(relq);
        report["skipped"] = std::move(skipped);
        report["artifacts"] = result.artifacts;
        report["status"] = "ok";

        stage = "write";
        current.clear();
        result.report_path = out_dir / "report.json";
        io::write_text(result.report_path, io::dump(report));
        return result;
    }
    catch (const std::exception &e) {
        const auto *err = dynamic_cast<const Error *>(&e);
        json manifest;
        manifest["status"] = "error";
        manifest["stage"] = stage;
        manifest["file"] = current.empty() ? json(nullptr) : json(current);
        manifest["kind"] = err ? std::string(to_string(err->kind())) : std::string("internal");
        manifest["message"] = e.what();
        manifest["artifacts"] = result.artifacts;
        result.exit_code = err && err->kind() == ErrorKind::no_inputs ? 3 : 2;
        result.error = e.what();
        try {
            io::write_text(out_dir / "error_manifest.json", io::dump(manifest));
        }
        catch (const std::exception &) {
            // The manifest is best effort; the exit code still reports failure.
        }
        return result;
    }
}

} // namespace flipchip::pipeline

#endif
