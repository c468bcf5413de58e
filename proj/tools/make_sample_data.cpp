// Writes the synthetic sample dataset shipped in data/. Every file is derived
// from fixed parameters and seeds, so rerunning the tool reproduces them byte
// for byte on the same platform.
//
// usage: make_sample_data [output_dir]   (default: data)

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "flipchip/io.hpp"
#include "flipchip/synthetic.hpp"

namespace
{
namespace fs = std::filesystem;
using namespace flipchip;

struct Module
{
    double separation_um;
    double delta_um; // corner-pair height difference along the tilted edge
    bool along_x;
};

// Tilted modules on a 12 mm corner square. The two readings per corner
// straddle the designed value by +-0.01 um.
std::string corner_table()
{
    const std::vector<Module> modules = {
        {10.8, 0.36, true}, {11.3, 1.14, false}, {11.1, 0.58, true},  {10.7, 0.86, false}, {11.2, 0.48, true},
        {11.0, 1.06, false}, {10.9, 0.66, true}, {11.3, 0.32, false}, {10.7, 1.24, true},
    };
    const double side = 12000.0;
    const char *labels[] = {"LL", "LR", "UL", "UR"};
    const double xs[] = {0.0, side, 0.0, side};
    const double ys[] = {0.0, 0.0, side, side};
    std::string out = "module,corner,x_um,y_um,sep_um,sep2_um\n";
    for (std::size_t m = 0; m < modules.size(); ++m) {
        const auto &mod = modules[m];
        for (int c = 0; c < 4; ++c) {
            const double coordinate = mod.along_x ? xs[c] : ys[c];
            const double z = mod.separation_um + (coordinate > 0.0 ? 0.5 : -0.5) * mod.delta_um;
            char line[128];
            std::snprintf(line, sizeof line, "S%zu,%s,%.0f,%.0f,%.2f,%.2f\n", m + 1, labels[c], xs[c], ys[c],
                          z + 0.01, z - 0.01);
            out += line;
        }
    }
    return out;
}

std::string participation_table()
{
    // p_sigma = p0 (w / 5 um)^-0.774, a factor of 5 between w = 2.5 and 20 um;
    // split 45 / 10 / 45 % over MS / MV / SV.
    const double widths[] = {2.5, 5.0, 7.5, 10.0, 15.0, 20.0};
    struct Facing
    {
        const char *name;
        double p0;
    };
    const Facing facings[] = {{"metal", 0.0124}, {"dielectric", 0.0101}};
    std::string out = "w_um,facing,p_ms,p_mv,p_sv\n";
    for (const auto &f : facings) {
        for (double w : widths) {
            const double p = f.p0 * std::pow(w / 5.0, -0.774);
            char line[128];
            std::snprintf(line, sizeof line, "%.1f,%s,%.6e,%.6e,%.6e\n", w, f.name, 0.45 * p, 0.10 * p, 0.45 * p);
            out += line;
        }
    }
    return out;
}

synthetic::DeviceSpec device(double separation, double tilt_urad, double direction, double bow, std::uint64_t seed)
{
    synthetic::DeviceSpec spec;
    spec.pitch_um = 100.0;
    spec.stage = {2.0e-4, -1.0e-4, 3.0};
    spec.separation_um = separation;
    spec.tilt_urad = tilt_urad;
    spec.tilt_direction_rad = direction;
    spec.bow_um = bow;
    spec.noise_um = 0.05;
    spec.seed = seed;
    return spec;
}

} // namespace

int main(int argc, char **argv)
{
    const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("data");
    try {
        auto spacer_1 = device(9.4, 70.0, 0.6, 1.0, 11);
        spacer_1.artifact_scans = {{40, 6.0}};
        auto spacer_2 = device(10.1, 95.0, 2.3, 1.2, 12);
        spacer_2.artifact_scans = {{70, -4.5}, {71, -4.5}};
        auto spacerless = device(5.8, 450.0, 1.3, 0.3, 13);
        spacerless.artifact_scans = {{20, 8.0}};

        io::write_text(root / "profilometry" / "spacer_1.csv", io::scans_csv(synthetic::make_device_scans(spacer_1)));
        io::write_text(root / "profilometry" / "spacer_2.csv", io::scans_csv(synthetic::make_device_scans(spacer_2)));
        io::write_text(root / "profilometry" / "spacerless_1.csv",
                       io::scans_csv(synthetic::make_device_scans(spacerless)));

        synthetic::TraceSpec trace;
        trace.params = {5.0e9, vnafit::loaded_q(5e5, 2e6, 0.3), 2e6, 0.3, {0.03, 1.1, 42e-9}};
        trace.snr_db = 40.0;
        trace.seed = 7;
        io::write_text(root / "traces" / "synthetic_notch.csv", io::trace_csv(synthetic::make_notch_trace(trace)));

        io::write_text(root / "sem_corners_spacer.csv", corner_table());
        io::write_text(root / "participation_synthetic.csv", participation_table());
    }
    catch (const std::exception &e) {
        std::cerr << "make_sample_data: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
