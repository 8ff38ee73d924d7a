// Copyright 2026 The qdspin Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// qdspin command line: simulate, analyze, scan.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "qdspin/analysis.hpp"
#include "qdspin/io.hpp"
#include "qdspin/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace qdspin;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    int threads = 1;
    bool force = false;
};

std::string unraveling_name(Unraveling u) { return u == Unraveling::Erased ? "erased" : "frequency"; }

std::string num(double x) { return format_number(x); }

RunConfig load_config(const std::string& path, const Globals& g) {
    RunConfig cfg = load_run_config(path);
    if (g.seed) cfg.seed = g.seed;
    if (!cfg.seed) throw ConfigError("MissingKey", "seed is required: set [run] seed or pass --seed");
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    return cfg;
}

fs::path prepare_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("WriteFailed", "cannot create output directory '" + dir + "'");
    return fs::path(dir);
}

Metadata common_metadata(const RunConfig& cfg) {
    const auto& p = cfg.params;
    return {
        {"format", "qdspin-1"},
        {"config_hash", cfg.config_hash},
        {"sequence_hash", cfg.sequence_hash},
        {"seed", std::to_string(*cfg.seed)},
        {"period_ns", num(cfg.sequence.period)},
        {"trajectories", std::to_string(cfg.trajectories)},
        {"cycles_per_trajectory", std::to_string(cfg.trajectory.cycles)},
        {"cycles", std::to_string(cfg.cycles())},
        {"unraveling", unraveling_name(cfg.trajectory.unraveling)},
        {"electron_splitting_rad_per_ns", num(p.electron_splitting)},
        {"hole_splitting_rad_per_ns", num(p.hole_splitting)},
        {"decay_rate_per_ns", num(p.decay_rate)},
        {"t2star_ns", num(p.dephasing_T2star)},
        {"efficiency", num(cfg.detector.efficiency)},
        {"jitter_fwhm_ps", num(cfg.detector.jitter_fwhm)},
        {"dark_rate_per_ns", num(cfg.detector.dark_rate)},
        {"laser_leakage", num(cfg.detector.laser_leakage)},
        {"detectors", std::to_string(cfg.detector.detectors)},
        {"rotation_tilt_rad", num(cfg.imperfections.rotation_tilt)},
    };
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const std::string& config_path, const Globals& g) {
    const RunConfig cfg = load_config(config_path, g);
    const fs::path out = prepare_out_dir(cfg.out_dir);
    const auto points = scan_points(cfg.sequence, *cfg.seed);
    json manifest;
    manifest["config_hash"] = cfg.config_hash;
    manifest["seed"] = *cfg.seed;
    manifest["cycles_per_point"] = cfg.cycles();
    manifest["points"] = json::array();
    int files = 0;
    for (const auto& pt : points) {
        const BatchResult batch = simulate_point(cfg, pt, g.threads);
        json jp;
        jp["index"] = pt.index;
        jp["values"] = json::object();
        for (const auto& [k, v] : pt.values) jp["values"][k] = v;
        jp["emission_events"] = batch.events.size();
        jp["files"] = json::array();
        for (std::size_t fi = 0; fi < cfg.filters.size(); ++fi) {
            const auto tags = detect_point(cfg, pt, batch, fi);
            const auto& nf = cfg.filters[fi];
            for (int d = 0; d < cfg.detector.detectors; ++d) {
                const std::string name = "tags_p" + std::to_string(pt.index) + "_" + nf.name + "_d" + std::to_string(d) + ".csv";
                std::ostringstream os;
                write_tags(os, select_channel(tags, d));
                write_file(out / name, os.str());
                Metadata m = common_metadata(cfg);
                m.push_back({"scan_point", std::to_string(pt.index)});
                for (const auto& [k, v] : pt.values) m.push_back({"scan." + k, num(v)});
                m.push_back({"detection_seed", std::to_string(detection_seed(pt, fi))});
                m.push_back({"filter", nf.name});
                m.push_back({"filter_center_rad_per_ns", num(nf.filter.center_offset)});
                m.push_back({"filter_fwhm_rad_per_ns", num(nf.filter.bandwidth_fwhm)});
                m.push_back({"filter_shape", nf.filter.shape == FilterShape::Gaussian ? "gaussian" : "lorentzian"});
                m.push_back({"detector_channel", std::to_string(d)});
                write_file(sidecar_path(out / name), format_metadata(m));
                jp["files"].push_back(name);
                ++files;
            }
        }
        manifest["points"].push_back(jp);
    }
    write_file(out / "simulate.json", manifest.dump(2) + "\n");
    std::cout << "simulate: " << points.size() << " point(s), " << cfg.cycles() << " cycles each, " << files
              << " tag file(s) in " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// scan

int cmd_scan(const std::string& config_path, const Globals& g) {
    const RunConfig cfg = load_config(config_path, g);
    if (cfg.sequence.scans.empty()) throw ConfigError("NoScan", "sequence defines no scan line");
    const fs::path out = prepare_out_dir(cfg.out_dir);
    const auto points = scan_points(cfg.sequence, *cfg.seed);
    std::size_t fi = 0;
    while (cfg.filters[fi].name != cfg.scan.filter) ++fi;
    std::vector<double> stat, err;
    for (const auto& pt : points) {
        const BatchResult batch = simulate_point(cfg, pt, g.threads);
        const double n = static_cast<double>(batch.cycles);
        if (cfg.scan.statistic == "spin_up") {
            double up = 0.0, total = 0.0;
            for (const auto& r : batch.spin_record) {
                if (r.t != pt.sequence.period) continue;
                total += 1.0;
                if (r.level == 1) up += 1.0;
            }
            const double p = total > 0.0 ? up / total : 0.0;
            stat.push_back(p);
            err.push_back(total > 0.0 ? std::sqrt(p * (1.0 - p) / total) : 0.0);
        } else {
            const auto tags = channel_subset(detect_point(cfg, pt, batch, fi), cfg.scan.channel);
            double c = 0.0;
            for (const auto& t : tags)
                if (detail::in_window(t, cfg.scan.window.first, cfg.scan.window.second)) c += 1.0;
            stat.push_back(c / n);
            err.push_back(std::sqrt(c) / n);
        }
    }
    const double ref = cfg.scan.normalize_first ? stat.front() : 1.0;
    std::ostringstream os;
    for (const auto& [k, v] : points.front().values) os << k << ',';
    os << cfg.scan.statistic << ",error,normalized\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (const auto& [k, v] : points[i].values) os << num(v) << ',';
        os << num(stat[i]) << ',' << num(err[i]) << ',' << num(ref > 0.0 ? stat[i] / ref : 0.0) << '\n';
    }
    write_file(out / "scan.csv", os.str());
    Metadata m = common_metadata(cfg);
    m.push_back({"statistic", cfg.scan.statistic});
    m.push_back({"filter", cfg.scan.filter});
    write_file(sidecar_path(out / "scan.csv"), format_metadata(m));

    std::string summary = "scan: " + std::to_string(points.size()) + " point(s) written to " + (out / "scan.csv").string();
    if (cfg.scan.fit != "none") {
        if (cfg.sequence.scans.size() != 1) throw ConfigError("InvalidValue", "scan fits need a 1-D scan");
        std::vector<double> x, y;
        for (std::size_t i = 0; i < points.size(); ++i) {
            x.push_back(points[i].values.front().second - cfg.scan.tau_origin);
            y.push_back(ref > 0.0 ? stat[i] / ref : stat[i]);
        }
        json rep;
        rep["config_hash"] = cfg.config_hash;
        rep["fit"] = cfg.scan.fit;
        if (cfg.scan.fit == "initialization") {
            const auto f = fit_initialization(x, y, cfg.params);
            rep["pump_rate_per_ns"] = f.pump_rate;
            rep["pump_rate_error_per_ns"] = f.pump_rate_error;
            rep["scale"] = f.scale;
            rep["jacobian_check_relative"] = f.jacobian_check;
            rep["t_ns"] = f.t;
            rep["f_init"] = f.f_init;
            summary += "; W = " + num(f.pump_rate) + " 1/ns";
        } else {
            const auto f = fit_ramsey(x, y, cfg.params.dephasing_shape, cfg.params.electron_splitting);
            rep["t2star_ns"] = f.T2star;
            rep["t2star_error_ns"] = f.T2star_error;
            rep["omega_rad_per_ns"] = f.omega;
            rep["omega_error_rad_per_ns"] = f.omega_error;
            rep["visibility"] = f.visibility;
            rep["f_pi_half"] = f.f_pi2;
            rep["jacobian_check_relative"] = f.jacobian_check;
            summary += "; T2* = " + num(f.T2star) + " ns, omega = " + num(f.omega) + " rad/ns";
        }
        write_file(out / "scan_fit.json", rep.dump(2) + "\n");
    }
    std::cout << summary << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct TagInput {
    std::string role;
    fs::path path;
    std::vector<TimeTag> tags;
    std::map<std::string, std::string> meta;
};

struct Role {
    std::vector<TimeTag> tags;
    std::int64_t cycles = 0;
};

std::int64_t meta_int(const std::map<std::string, std::string>& m, const std::string& k, std::int64_t def) {
    auto it = m.find(k);
    if (it == m.end()) return def;
    try {
        return std::stoll(it->second);
    } catch (...) {
        throw ConfigError("MalformedMetadata", "metadata key '" + k + "' is not an integer");
    }
}

std::optional<double> meta_num(const std::map<std::string, std::string>& m, const std::string& k) {
    auto it = m.find(k);
    if (it == m.end()) return std::nullopt;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw ConfigError("MalformedMetadata", "metadata key '" + k + "' is not a number");
    }
}

json fringe_json(const FringeFit& f) {
    return {{"visibility_raw", f.visibility_raw},
            {"visibility_raw_error", f.visibility_error},
            {"visibility_deconvolved", f.visibility_deconvolved},
            {"visibility_deconvolved_error", f.deconvolved_error},
            {"deconvolution_warning", f.deconvolution_warning},
            {"phase_rad", f.phase},
            {"phase_error_rad", f.phase_error},
            {"frequency_rad_per_ns", f.frequency},
            {"frequency_error_rad_per_ns", f.frequency_error},
            {"residual_rms_relative", f.residual_rms},
            {"offset", f.offset},
            {"jacobian_check_relative", f.jacobian_check}};
}

int cmd_analyze(const std::string& spec_path, const std::vector<std::string>& tag_paths, std::optional<double> f1,
                std::optional<double> f2, double f1_err, double f2_err, const Globals& g) {
    const std::string out_dir = g.out_dir.empty() ? "out" : g.out_dir;
    if (f1 || f2) {
        if (!f1 || !f2) throw ConfigError("MissingKey", "bypass mode needs both --f1 and --f2");
        const auto b = entanglement_bound(*f1, *f2, f1_err, f2_err);
        const fs::path out = prepare_out_dir(out_dir);
        json rep = {{"kind", "bound"}, {"F1", *f1}, {"F1_error", f1_err}, {"F2", *f2}, {"F2_error", f2_err},
                    {"F_bound", b.value}, {"F_bound_error", b.error}};
        write_file(out / "bound_report.json", rep.dump(2) + "\n");
        std::ostringstream s;
        s.setf(std::ios::fixed);
        s.precision(4);
        s << "F1 = " << *f1 << ", F2 = " << *f2 << ", F >= " << b.value;
        std::cout << s.str() << "\n";
        return 0;
    }
    if (spec_path.empty()) throw ConfigError("MissingKey", "analyze needs an analysis spec file");
    const std::string spec_text = read_file(spec_path);
    KvFile f = KvFile::parse(spec_text, fs::path(spec_path).filename().string());
    f.known = {"", "analysis"};
    KvReader r(f, f.section("analysis"));
    const std::string kind = r.required("kind");
    const auto roles = r.words("inputs");
    if (roles.size() != tag_paths.size())
        throw r.bad("inputs", "lists " + std::to_string(roles.size()) + " role(s) but " + std::to_string(tag_paths.size()) +
                                  " tag file(s) were given");

    std::vector<TagInput> inputs;
    std::set<std::string> hashes;
    for (std::size_t i = 0; i < tag_paths.size(); ++i) {
        TagInput in;
        in.role = roles[i];
        in.path = tag_paths[i];
        in.tags = read_tag_file(in.path);
        if (fs::exists(sidecar_path(in.path))) in.meta = read_metadata(sidecar_path(in.path));
        if (auto it = in.meta.find("config_hash"); it != in.meta.end()) hashes.insert(it->second);
        inputs.push_back(std::move(in));
    }
    if (hashes.size() > 1 && !g.force)
        throw ConfigError("MixedInputs", "tag files carry different config hashes; pass --force to combine them");

    const auto spec_cycles = r.integer("cycles");
    std::map<std::string, Role> by_role;
    for (const auto& in : inputs) {
        auto& role = by_role[in.role];
        role.tags = merge_tags(std::move(role.tags), in.tags);
        std::int64_t c = meta_int(in.meta, "cycles", spec_cycles.value_or(0));
        if (c == 0 && !in.tags.empty()) c = in.tags.back().cycle + 1;
        role.cycles = std::max(role.cycles, c);
    }
    auto role = [&](const std::string& name) -> const Role& {
        auto it = by_role.find(name);
        if (it == by_role.end()) throw r.bad("inputs", "missing role '" + name + "'");
        return it->second;
    };
    auto first_meta = [&](const std::string& k) -> std::optional<double> {
        for (const auto& in : inputs)
            if (auto v = meta_num(in.meta, k)) return v;
        return std::nullopt;
    };
    const std::uint64_t seed = g.seed.value_or(0);
    const int resamples = static_cast<int>(r.integer("bootstrap").value_or(200));
    if (resamples < 0) throw r.bad("bootstrap", "must be >= 0");

    const fs::path out = prepare_out_dir(out_dir);
    const std::string stem = fs::path(spec_path).stem().string();
    json rep;
    rep["kind"] = kind;
    rep["config_hash"] = hashes.empty() ? "" : *hashes.begin();
    rep["analysis_spec_hash"] = git_blob_hash(spec_text);
    rep["inputs"] = json::array();
    for (const auto& in : inputs) rep["inputs"].push_back({{"role", in.role}, {"file", in.path.filename().string()}, {"tags", in.tags.size()}});
    std::string summary;
    auto write_hist = [&](const std::string& name, const Histogram& h) {
        const auto p = out / (stem + "_" + name + ".csv");
        write_file(p, format_histogram_csv(h));
        write_file(sidecar_path(p), format_metadata({{"config_hash", rep["config_hash"].get<std::string>()},
                                                     {"analysis_spec_hash", rep["analysis_spec_hash"].get<std::string>()},
                                                     {"normalization", h.normalization == Normalization::Raw ? "raw"
                                                                       : h.normalization == Normalization::PerTrigger ? "per_trigger"
                                                                                                                      : "poisson_level"}}));
        rep["histograms"].push_back(p.filename().string());
    };
    auto window = [&](const std::string& key, Window def) {
        if (!r.has(key)) return def;
        const auto w = r.window(key);
        return Window{w.first, w.second};
    };
    auto fringe_settings = [&]() {
        FringeSettings s;
        s.ent = window("ent_window_ns", s.ent);
        if (!r.has("readout_window_ns")) throw r.bad("readout_window_ns", "required for this analysis");
        s.readout = window("readout_window_ns", {});
        s.bin_ps = r.num("bin_ps", 10.0);
        if (r.has("fringe_period_ps") && r.has("omega_ghz")) throw r.bad("omega_ghz", "give either fringe_period_ps or omega_ghz");
        if (auto p = r.num("fringe_period_ps")) s.omega = units::two_pi / (*p * 1e-3);
        else if (auto w = r.num("omega_ghz")) s.omega = units::ghz_to_rad_per_ns(*w);
        else if (auto m = first_meta("electron_splitting_rad_per_ns")) s.omega = *m;
        else throw r.bad("fringe_period_ps", "fringe frequency unknown: set fringe_period_ps or omega_ghz");
        if (!(s.omega > 0.0)) throw r.bad("fringe_period_ps", "fringe frequency must be > 0");
        if (auto j = r.num("jitter_fwhm_ps")) s.jitter_fwhm = *j;
        else s.jitter_fwhm = first_meta("jitter_fwhm_ps").value_or(0.0);
        s.options.free_frequency = r.str("free_frequency", "false") == "true";
        return s;
    };
    const int ent_channel = static_cast<int>(r.integer("ent_channel").value_or(kind == "superposition" || kind == "entanglement" ? 0 : -1));
    const int readout_channel = static_cast<int>(r.integer("readout_channel").value_or(-1));
    auto fringe_dataset = [&](const std::string& ent, const std::string& ro) {
        return FringeDataset{channel_subset(role(ent).tags, ent_channel), channel_subset(role(ro).tags, readout_channel),
                             std::max(role(ent).cycles, role(ro).cycles)};
    };
    auto computational = [&]() {
        ComputationalInputs ci;
        const char* names[4] = {"red_down", "blue_down", "blue_up", "red_up"};
        for (int i = 0; i < 4; ++i) {
            ci.tags[i] = role(names[i]).tags;
            ci.cycles[i] = role(names[i]).cycles;
        }
        const Window ent = window("ent_window_ns", {1.15, 1.7});
        if (!r.has("readout_window_ns")) throw r.bad("readout_window_ns", "required for this analysis");
        const Window ro = window("readout_window_ns", {});
        const auto c = computational_analysis(ci, ent, ro, resamples, seed);
        rep["counts"] = {{"N_red_down", c.counts[0]}, {"N_blue_down", c.counts[1]}, {"N_blue_up", c.counts[2]}, {"N_red_up", c.counts[3]}};
        rep["ratio_red_blue_down"] = c.ratio_down;
        rep["ratio_blue_red_up"] = c.ratio_up;
        rep["F1"] = c.f1.value;
        rep["F1_error_binomial"] = c.f1.error;
        rep["F1_error_bootstrap"] = c.bootstrap.stddev;
        return c;
    };
    auto superposition = [&]() {
        const FringeSettings s = fringe_settings();
        const auto sr = superposition_analysis(fringe_dataset("plus_ent", "plus_readout"),
                                               fringe_dataset("minus_ent", "minus_readout"), s, resamples, seed);
        write_hist("plus", sr.plus_hist);
        write_hist("minus", sr.minus_hist);
        rep["omega_rad_per_ns"] = s.omega;
        rep["jitter_fwhm_ps"] = s.jitter_fwhm;
        rep["fringe_plus"] = fringe_json(sr.plus);
        rep["fringe_minus"] = fringe_json(sr.minus);
        rep["phase_difference_rad"] = sr.f2.phase_difference;
        rep["F2"] = sr.f2.F2;
        rep["F2_error_propagated"] = sr.f2.error;
        rep["F2_error_bootstrap"] = sr.bootstrap.stddev;
        rep["F2_clamped"] = sr.f2.clamped;
        return sr;
    };

    if (kind == "histogram" || kind == "lifetime") {
        const Role& in = role("tags");
        const auto w = window("window_ns", {0.0, first_meta("period_ns").value_or(25.0)});
        const int ch = static_cast<int>(r.integer("channel").value_or(-1));
        const double bin = r.num("bin_ps", kind == "lifetime" ? 50.0 : 10.0);
        const auto h = unconditional_histogram(channel_subset(in.tags, ch), w.a, w.b, bin, in.cycles);
        write_hist("histogram", h);
        rep["cycles"] = in.cycles;
        rep["total_counts"] = h.total();
        summary = "histogram: " + std::to_string(h.total()) + " counts in " + std::to_string(h.bins()) + " bins";
        if (kind == "lifetime") {
            const auto fw = window("fit_window_ns", w);
            const auto e = fit_exponential(h, fw.a, fw.b);
            rep["tau_ns"] = e.tau;
            rep["tau_error_ns"] = e.tau_error;
            rep["jacobian_check_relative"] = e.jacobian_check;
            summary = "lifetime: tau = " + num(e.tau) + " ns (+- " + num(e.tau_error) + ")";
        }
    } else if (kind == "g2") {
        const Role& in = role("tags");
        const auto w = window("window_ns", {1.15, 1.7});
        const auto g2 = g2_zero(in.tags, w.a, w.b, in.cycles, static_cast<int>(r.integer("max_lag").value_or(10)));
        rep["window_ns"] = {w.a, w.b};
        rep["g2_zero"] = g2.value;
        rep["g2_zero_error"] = g2.error;
        rep["zero_lag_coincidences"] = g2.zero_lag;
        rep["side_lag_mean_coincidences"] = g2.side_mean;
        summary = "g2(0) = " + num(g2.value) + " +- " + num(g2.error);
    } else if (kind == "conditional") {
        const Role& ent = role("ent");
        const Role& ro = role("readout");
        if (!r.has("readout_window_ns")) throw r.bad("readout_window_ns", "required for this analysis");
        const auto rw = window("readout_window_ns", {});
        const auto ew = window("ent_window_ns", {1.15, 1.7});
        const auto h = conditional_histogram(channel_subset(ent.tags, ent_channel), channel_subset(ro.tags, readout_channel),
                                             rw.a, rw.b, r.num("bin_ps", 10.0), ew.a, ew.b);
        write_hist("conditional", h);
        rep["conditioning_cycles"] = h.triggers;
        rep["total_counts"] = h.total();
        summary = "conditional: " + std::to_string(h.total()) + " counts over " + std::to_string(h.triggers) + " conditioning cycles";
    } else if (kind == "computational") {
        const auto c = computational();
        summary = "F1 = " + num(c.f1.value) + " +- " + num(c.bootstrap.stddev);
    } else if (kind == "superposition") {
        const auto s = superposition();
        summary = "F2 = " + num(s.f2.F2) + " +- " + num(s.bootstrap.stddev);
    } else if (kind == "entanglement") {
        const auto c = computational();
        const auto s = superposition();
        const auto b = entanglement_bound(c.f1.value, s.f2.F2, c.bootstrap.stddev, s.bootstrap.stddev);
        rep["F_bound"] = b.value;
        rep["F_bound_error"] = b.error;
        summary = "F1 = " + num(c.f1.value) + ", F2 = " + num(s.f2.F2) + ", F >= " + num(b.value) + " +- " + num(b.error);
    } else {
        throw r.bad("kind", "unknown analysis kind '" + kind + "'");
    }
    f.check_unused();
    write_file(out / (stem + "_report.json"), rep.dump(2) + "\n");
    std::cout << summary << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qdspin: quantum-dot spin-photon entanglement simulator"};
    app.fallthrough();
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--out-dir", g.out_dir, "output directory (overrides the config)");
    app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--force", g.force, "combine tag files with different config hashes");

    std::string sim_config, scan_config, spec;
    std::vector<std::string> tags;
    double f1 = 0.0, f2 = 0.0, f1_err = 0.0, f2_err = 0.0;
    auto* simulate = app.add_subcommand("simulate", "simulate a preset and write time-tag files");
    simulate->add_option("config", sim_config, "run configuration")->required();
    auto* scan = app.add_subcommand("scan", "simulate every scan point and write an aggregated curve");
    scan->add_option("config", scan_config, "run configuration")->required();
    auto* analyze = app.add_subcommand("analyze", "analyze time-tag files");
    analyze->add_option("spec", spec, "analysis spec file");
    analyze->add_option("tags", tags, "time-tag CSV files, in the order of the analysis file's inputs");
    auto* f1_opt = analyze->add_option("--f1", f1, "computational-basis fidelity (bypass mode)");
    auto* f2_opt = analyze->add_option("--f2", f2, "superposition-basis fidelity (bypass mode)");
    analyze->add_option("--f1-error", f1_err, "error of --f1");
    analyze->add_option("--f2-error", f2_err, "error of --f2");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*simulate) return cmd_simulate(sim_config, g);
        if (*scan) return cmd_scan(scan_config, g);
        std::optional<double> of1, of2;
        if (*f1_opt) of1 = f1;
        if (*f2_opt) of2 = f2;
        return cmd_analyze(spec, tags, of1, of2, f1_err, f2_err, g);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const SimulationError& e) {
        std::cerr << "simulation error: " << e.what() << "\n";
        return 3;
    } catch (const AnalysisError& e) {
        std::cerr << "analysis error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
