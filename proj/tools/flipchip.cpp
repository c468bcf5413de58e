// flipchip: command-line front end for the flip-chip analysis library.
//
// Results go to stdout unless --out names a directory, in which case they are
// written there as <command>.json or <command>.csv. Library errors are printed
// to stderr as a JSON object and give exit code 2.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flipchip/cpw.hpp"
#include "flipchip/heightmap.hpp"
#include "flipchip/io.hpp"
#include "flipchip/losses.hpp"
#include "flipchip/pipeline.hpp"
#include "flipchip/resonator.hpp"
#include "flipchip/vnafit.hpp"

namespace
{
namespace fs = std::filesystem;
using namespace flipchip;
using io::json;
using io::number;

struct Globals
{
    std::optional<std::string> config_path;
    std::optional<std::string> out_dir;
    std::string format = "json";
};

pipeline::PipelineConfig load(const Globals &g)
{
    return pipeline::resolve_config(g.config_path ? std::optional<fs::path>(*g.config_path) : std::nullopt);
}

void emit(const Globals &g, const std::string &command, const json &document, const std::string &csv)
{
    const bool as_csv = g.format == "csv" && !csv.empty();
    const std::string text = as_csv ? csv : io::dump(document);
    if (g.out_dir) {
        const fs::path path = fs::path(*g.out_dir) / (command + (as_csv ? ".csv" : ".json"));
        io::write_text(path, text);
        std::cout << path.string() << "\n";
    }
    else {
        std::cout << text;
    }
}

heightmap::Rect parse_rect(const std::string &text)
{
    std::vector<double> v;
    std::stringstream in(text);
    std::string field;
    while (std::getline(in, field, ',')) {
        v.push_back(io::parse_finite(io::trim(field), "--bottom"));
    }
    detail::require(v.size() == 4 && v[0] < v[2] && v[1] < v[3], ErrorKind::validation,
                    "--bottom expects x_min,y_min,x_max,y_max");
    return {v[0], v[1], v[2], v[3]};
}

std::string summary_csv(const heightmap::ChipSummary &s)
{
    return "mean_separation_um,tilt_urad,bow_um,n_masked_scans,plane_a,plane_b,plane_c\n" +
           io::format_number(s.mean_separation_um) + ',' + io::format_number(s.tilt_urad) + ',' +
           io::format_number(s.bow_um) + ',' + std::to_string(s.n_masked_scans) + ',' +
           io::format_number(s.plane.a) + ',' + io::format_number(s.plane.b) + ',' + io::format_number(s.plane.c) +
           '\n';
}

struct CpwArgs
{
    double w = 10.0;
    double s = 5.5;
    std::optional<double> d;
    std::string facing = "planar";
    std::optional<double> eps;
    std::optional<double> eps_top;
    std::optional<double> h;
    std::optional<double> h_top;
    std::optional<double> solve_z0;
};

cpw::CpwGeometry geometry(const CpwArgs &a, const pipeline::PipelineConfig &c)
{
    cpw::CpwGeometry g;
    g.w_um = a.w;
    g.s_um = a.s;
    g.facing = cpw::parse_facing(a.facing);
    g.eps_substrate = a.eps.value_or(c.cpw_eps);
    g.h_substrate_um = a.h.value_or(c.cpw_h_substrate_um);
    if (g.facing != cpw::Facing::planar) {
        g.d_um = a.d.value_or(c.cpw_d_um);
    }
    if (g.facing == cpw::Facing::dielectric) {
        g.eps_superstrate = a.eps_top.value_or(g.eps_substrate);
        g.h_superstrate_um = a.h_top.value_or(g.h_substrate_um);
    }
    return g;
}

void add_cpw_options(CLI::App *cmd, CpwArgs &a)
{
    // "--h" is the substrate thickness here, so help is only reachable as --help.
    cmd->set_help_flag("--help", "print this help message and exit");
    cmd->add_option("--w", a.w, "centre conductor width [um]")->capture_default_str();
    cmd->add_option("--s", a.s, "gap width [um]")->capture_default_str();
    cmd->add_option("--d", a.d, "chip separation [um] (config default 10)");
    cmd->add_option("--facing", a.facing, "planar | metal | dielectric")
        ->check(CLI::IsMember({"planar", "metal", "dielectric"}))
        ->capture_default_str();
    cmd->add_option("--eps", a.eps, "substrate permittivity (config default 11.45)");
    cmd->add_option("--eps-top", a.eps_top, "opposite-chip permittivity (defaults to --eps)");
    cmd->add_option("--h", a.h, "substrate thickness [um]");
    cmd->add_option("--h-top", a.h_top, "opposite-chip thickness [um]");
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"flipchip: flip-chip profilometry, CPW and resonator analysis"};
    app.require_subcommand(1);
    // Inherited by the subcommands: global flags may follow the command name.
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON config file (falls back to $FLIPCHIP_CONFIG)");
    app.add_option("--out", g.out_dir, "write results into this directory");
    app.add_option("--format", g.format, "json | csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();

    // level
    std::string level_input;
    std::vector<std::string> bottom_rects;
    std::optional<double> step;
    auto *level = app.add_subcommand("level", "level a height map to the bottom-chip plane");
    level->add_option("input", level_input, "height map CSV (x_um,y_um,z_um)")->required()->check(CLI::ExistingFile);
    level->add_option("--bottom", bottom_rects, "bottom-chip rectangle x_min,y_min,x_max,y_max (repeatable)");
    level->add_option("--step", step, "step threshold [um]");

    // tilt
    std::string tilt_input;
    std::optional<double> substrate;
    std::optional<double> mask;
    std::vector<std::string> tilt_bottom;
    auto *tilt = app.add_subcommand("tilt", "separation, tilt and bow of a bonded module");
    tilt->add_option("input", tilt_input, "height map CSV")->required()->check(CLI::ExistingFile);
    tilt->add_option("--substrate", substrate, "top-chip substrate thickness [um]");
    tilt->add_option("--step", step, "step threshold [um]");
    tilt->add_option("--mask", mask, "artifact-scan median jump threshold [um]");
    tilt->add_option("--bottom", tilt_bottom, "bottom-chip rectangle (repeatable)");

    // corner-tilt
    std::optional<std::string> corner_input;
    std::vector<std::string> corner_values;
    auto *corner = app.add_subcommand("corner-tilt", "worst-case tilt from four corner separations");
    corner->add_option("input", corner_input, "corner CSV (module,corner,x_um,y_um,sep_um)")
        ->check(CLI::ExistingFile);
    corner->add_option("--corner", corner_values, "label,x_um,y_um,sep_um (give four)");

    // cpw, cpw shift-curve, shift-curve
    CpwArgs cpw_args;
    auto *cpw_cmd = app.add_subcommand("cpw", "CPW line parameters by conformal mapping");
    cpw_cmd->fallthrough();
    add_cpw_options(cpw_cmd, cpw_args);
    cpw_cmd->add_option("--solve-z0", cpw_args.solve_z0, "solve the gap s for this impedance [Ohm]");

    double d_min = 5.0;
    double d_max = 15.0;
    double d_step = 0.5;
    double d_ref = 10.0;
    auto add_curve_options = [&](CLI::App *cmd) {
        cmd->add_option("--d-min", d_min)->capture_default_str();
        cmd->add_option("--d-max", d_max)->capture_default_str();
        cmd->add_option("--d-step", d_step)->capture_default_str();
        cmd->add_option("--d-ref", d_ref)->capture_default_str();
    };
    auto *nested_curve = cpw_cmd->add_subcommand("shift-curve", "v_ph(d) / v_ph(d_ref) over a separation grid");
    nested_curve->set_help_flag("--help", "print this help message and exit");
    add_curve_options(nested_curve);
    CpwArgs curve_args;
    curve_args.facing = "metal";
    auto *curve = app.add_subcommand("shift-curve", "v_ph(d) / v_ph(d_ref) over a separation grid");
    add_cpw_options(curve, curve_args);
    add_curve_options(curve);

    // fit-vph
    std::string vph_input;
    std::optional<std::string> vph_facing;
    auto *vph = app.add_subcommand("fit-vph", "fit phase velocity and loading time to resonator frequencies");
    vph->add_option("input", vph_input, "CSV index,length_um,f_ghz,copy_id[,facing]")
        ->required()
        ->check(CLI::ExistingFile);
    vph->add_option("--facing", vph_facing, "fit only rows with this facing");

    // design-length
    double target_f = 5.0;
    double v_ph = 1.2e8;
    double b_s = 0.0;
    auto *design = app.add_subcommand("design-length", "resonator length for a target loaded frequency");
    design->add_option("--f-ghz", target_f)->required();
    design->add_option("--v-ph", v_ph, "phase velocity [m/s]")->required();
    design->add_option("--b", b_s, "loading time [s]")->capture_default_str();

    // fit-notch
    std::string notch_input;
    std::optional<double> power_dbm;
    std::optional<double> attenuation_db;
    auto *notch = app.add_subcommand("fit-notch", "fit a notch-type S21 resonance");
    notch->add_option("input", notch_input, "CSV f_hz,re_s21,im_s21")->required()->check(CLI::ExistingFile);
    notch->add_option("--power-dbm", power_dbm, "VNA output power [dBm]");
    notch->add_option("--attenuation-db", attenuation_db, "input line attenuation [dB]");

    // photons
    double ph_f0 = 5e9;
    double ph_qc = 2e6;
    double ph_qi = 5e5;
    std::optional<double> ph_p;
    auto *photons = app.add_subcommand("photons", "mean intra-resonator photon number");
    photons->add_option("--f0-hz", ph_f0)->required();
    photons->add_option("--qc", ph_qc, "|Q_c|")->required();
    photons->add_option("--qi", ph_qi, "Q_i")->required();
    photons->add_option("--p-app-w", ph_p, "power at the sample [W]");
    photons->add_option("--power-dbm", power_dbm, "VNA output power [dBm]");
    photons->add_option("--attenuation-db", attenuation_db, "input line attenuation [dB]");

    // relq
    std::string relq_input;
    std::optional<double> anchor_w;
    std::optional<double> anchor_q;
    std::string relq_facing;
    std::vector<double> relq_queries;
    auto *relq = app.add_subcommand("relq", "relative Q from interface participation ratios");
    relq->add_option("input", relq_input, "CSV w_um,facing,p_ms,p_mv,p_sv")->required()->check(CLI::ExistingFile);
    relq->add_option("--anchor-w", anchor_w, "anchor width [um]");
    relq->add_option("--anchor-q", anchor_q, "measured Q_i at the anchor width");
    relq->add_option("--facing", relq_facing, "facing to evaluate (default: all rows)");
    relq->add_option("--query", relq_queries, "also interpolate Q_pr at these widths [um]");

    // report
    std::vector<std::string> dataset;
    auto *report = app.add_subcommand("report", "run every stage over a dataset and write a report");
    report->add_option("dataset", dataset, "directories or CSV files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = load(g);

        if (level->parsed()) {
            std::vector<heightmap::Rect> region;
            for (const auto &r : bottom_rects) {
                region.push_back(parse_rect(r));
            }
            const auto result = heightmap::level_to_bottom_plane(io::read_scans(level_input), region,
                                                                 step.value_or(config.step_threshold_um));
            json out;
            out["bottom_plane"] = io::to_json(result.bottom_plane);
            out["bottom_cells"] = result.bottom_cells;
            out["valid_cells"] = result.map.count_valid();
            emit(g, "level", out, io::height_map_csv(result.map));
        }
        else if (tilt->parsed()) {
            auto c = config;
            c.substrate_thickness_um = substrate.value_or(c.substrate_thickness_um);
            c.step_threshold_um = step.value_or(c.step_threshold_um);
            c.mask_threshold_um = mask.value_or(c.mask_threshold_um);
            std::vector<heightmap::Rect> region;
            for (const auto &r : tilt_bottom) {
                region.push_back(parse_rect(r));
            }
            const auto a = pipeline::analyse_chip(io::read_scans(tilt_input), c, region);
            emit(g, "tilt", pipeline::chip_json(a), summary_csv(a.summary));
        }
        else if (corner->parsed()) {
            std::vector<io::CornerModule> modules;
            if (corner_input) {
                modules = io::read_corners(*corner_input);
            }
            else {
                std::string table = "module,corner,x_um,y_um,sep_um\n";
                for (const auto &v : corner_values) {
                    table += "cli," + v + "\n";
                }
                modules = io::corners_from_table(io::parse_csv(table, "--corner"), "--corner");
            }
            const auto c = pipeline::analyse_corners(modules);
            json out;
            out["mean_separation_um"] = number(c.mean_separation_um);
            out["mean_worst_case_tilt_urad"] = number(c.mean_worst_case_urad);
            out["modules"] = c.modules;
            std::string csv = "module,mean_separation_um,worst_case_tilt_urad\n";
            for (const auto &m : c.modules) {
                csv += m["module"].get<std::string>() + ',' +
                       io::format_number(m["mean_separation_um"].get<double>()) + ',' +
                       io::format_number(m["worst_case_tilt_urad"].get<double>()) + '\n';
            }
            emit(g, "corner-tilt", out, csv);
        }
        else if (cpw_cmd->parsed() || curve->parsed()) {
            const bool as_curve = curve->parsed() || nested_curve->parsed();
            auto geom = geometry(curve->parsed() ? curve_args : cpw_args, config);
            if (as_curve) {
                const auto points = cpw::shift_curve(geom, cpw::separation_grid(d_min, d_max, d_step), d_ref);
                json rows = json::array();
                std::string csv = "d_um,ratio\n";
                for (const auto &p : points) {
                    rows.push_back({{"d_um", number(p.d_um)}, {"ratio", number(p.ratio)}});
                    csv += io::format_number(p.d_um) + ',' + io::format_number(p.ratio) + '\n';
                }
                json out;
                out["facing"] = std::string(cpw::to_string(geom.facing));
                out["d_ref_um"] = number(d_ref);
                out["points"] = std::move(rows);
                // The curve is tabular by nature: CSV unless JSON is asked for explicitly.
                Globals local = g;
                if (app.get_option("--format")->count() == 0) {
                    local.format = "csv";
                }
                emit(local, "shift-curve", out, csv);
            }
            else {
                json out;
                if (cpw_args.solve_z0) {
                    const auto gap = cpw::solve_gap_for_impedance(geom.w_um, *cpw_args.solve_z0, geom);
                    geom.s_um = gap.s_um;
                    out["s_um"] = number(gap.s_um);
                }
                const auto p = cpw::line_params(geom);
                out["eps_eff"] = number(p.eps_eff);
                out["z0_ohm"] = number(p.z0);
                out["v_ph_m_per_s"] = number(p.v_ph);
                out["c_per_m"] = number(p.c_per_len);
                out["l_per_m"] = number(p.l_per_len);
                const std::string csv = "eps_eff,z0_ohm,v_ph_m_per_s,c_per_m,l_per_m\n" +
                                        io::format_number(p.eps_eff) + ',' + io::format_number(p.z0) + ',' +
                                        io::format_number(p.v_ph) + ',' + io::format_number(p.c_per_len) + ',' +
                                        io::format_number(p.l_per_len) + '\n';
                emit(g, "cpw", out, csv);
            }
        }
        else if (vph->parsed()) {
            auto records = io::read_resonators(vph_input);
            if (vph_facing) {
                std::erase_if(records, [&](const auto &r) { return r.facing != *vph_facing; });
                detail::require(!records.empty(), ErrorKind::validation, "no rows with facing " + *vph_facing);
            }
            const auto groups = pipeline::group_by_facing(records);
            json out;
            std::string csv = "facing,index,length_um,mean_f_ghz,residual_mhz\n";
            for (const auto &[facing, rows] : groups) {
                const auto fit = resonator::fit_vph(rows);
                if (groups.size() == 1) {
                    out = io::to_json(fit);
                }
                else {
                    out[facing] = io::to_json(fit);
                }
                for (std::size_t i = 0; i < fit.indices.size(); ++i) {
                    csv += facing + ',' + std::to_string(fit.indices[i]) + ',' + io::format_number(fit.lengths_um[i]) +
                           ',' + io::format_number(fit.mean_f_ghz[i]) + ',' + io::format_number(fit.residuals_mhz[i]) +
                           '\n';
                }
            }
            emit(g, "fit-vph", out, csv);
        }
        else if (design->parsed()) {
            const double length = resonator::design_length(target_f, v_ph, b_s);
            emit(g, "design-length", json{{"length_um", number(length)}},
                 "length_um\n" + io::format_number(length) + '\n');
        }
        else if (notch->parsed()) {
            auto trace = io::read_trace(notch_input);
            const auto fit = vnafit::fit_notch(trace, config.fit);
            const auto power = power_dbm ? power_dbm : config.power_dbm;
            const json out = pipeline::notch_json(fit, power, attenuation_db.value_or(config.attenuation_db));
            std::string header;
            std::string values;
            for (const auto &[key, value] : out.items()) {
                if (value.is_number()) {
                    header += (header.empty() ? "" : ",") + key;
                    values += (values.empty() ? "" : ",") + io::format_number(value.get<double>());
                }
            }
            emit(g, "fit-notch", out, header + '\n' + values + '\n');
        }
        else if (photons->parsed()) {
            double p_app = 0.0;
            if (ph_p) {
                p_app = *ph_p;
            }
            else {
                detail::require(power_dbm.has_value() || config.power_dbm.has_value(), ErrorKind::validation,
                                "give --p-app-w or --power-dbm");
                p_app = vnafit::applied_power(power_dbm.value_or(config.power_dbm.value_or(0.0)),
                                              attenuation_db.value_or(config.attenuation_db));
            }
            const auto calc = vnafit::photon_number(ph_f0, ph_qc, ph_qi, p_app);
            emit(g, "photons", io::to_json(calc),
                 "kappa_rad_per_s,gamma_rad_per_s,p_app_w,n_int\n" + io::format_number(calc.kappa) + ',' +
                     io::format_number(calc.gamma) + ',' + io::format_number(calc.p_app) + ',' +
                     io::format_number(calc.n_int) + '\n');
        }
        else if (relq->parsed()) {
            const auto records = io::read_participation(relq_input);
            const auto w = anchor_w ? anchor_w : config.relq_anchor_w_um;
            const auto q = anchor_q ? anchor_q : config.relq_anchor_q;
            detail::require(w && q, ErrorKind::validation, "relq needs --anchor-w and --anchor-q");
            const auto curve = losses::relative_q(records, *w, *q, relq_facing);
            json out = io::to_json(curve);
            if (!relq_queries.empty()) {
                const double p_anchor = losses::interpolate_p_sigma(records, *w, relq_facing);
                json queries = json::array();
                for (double wq : relq_queries) {
                    const double p = losses::interpolate_p_sigma(records, wq, relq_facing);
                    queries.push_back(
                        {{"w_um", number(wq)}, {"p_sigma", number(p)}, {"q_pr", number(*q * p_anchor / p)}});
                }
                out["queries"] = std::move(queries);
            }
            emit(g, "relq", out, io::relative_q_csv(curve));
        }
        else if (report->parsed()) {
            auto c = config;
            if (g.out_dir) {
                c.output_dir = *g.out_dir;
            }
            std::vector<fs::path> paths(dataset.begin(), dataset.end());
            const auto result = pipeline::run_report(c, paths);
            if (result.exit_code != 0) {
                std::cerr << json{{"error", result.error}, {"manifest", (c.output_dir / "error_manifest.json").string()}}
                                 .dump()
                          << "\n";
                return result.exit_code;
            }
            std::cout << result.report_path.string() << "\n";
        }
    }
    catch (const Error &e) {
        std::cerr << json{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }
    catch (const std::exception &e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }
    return 0;
}
