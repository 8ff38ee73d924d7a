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

// Acceptance run: one PASS/FAIL line per criterion. Optional arguments select criteria by number.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "qdspin/analysis.hpp"
#include "qdspin/io.hpp"
#include "qdspin/pipeline.hpp"

using namespace qdspin;

namespace {

const std::string preset_dir = QDSPIN_PRESET_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

RunConfig preset(const std::string& name) { return load_run_config(preset_dir + "/" + name); }

// Every fit optimum reached during the run, checked by criterion 10.
std::vector<std::pair<std::string, double>> jacobian_checks;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// ---------------------------------------------------------------------------

Outcome rabi_period() {
    const RunConfig cfg = preset("fig2_rabi.cfg");
    const auto tr = evolve_master(QuantumState::basis(Level::SpinDown), cfg.sequence, cfg.params, 0.0);
    const auto& pulse = *cfg.sequence.find("rabi");
    std::vector<double> t, y;
    for (std::size_t i = 0; i < tr.t.size(); i += 10) {
        if (tr.t[i] < pulse.t0 || tr.t[i] > pulse.t0 + pulse.duration) continue;
        t.push_back(tr.t[i]);
        y.push_back(tr.intensity(0, i) + tr.intensity(1, i));
    }
    const double expected = 0.864;
    const auto fit = fit_damped_cosine(t, y, units::two_pi * pulse.rabi_ghz);
    jacobian_checks.push_back({"rabi damped cosine", fit.jacobian_check});
    const double maxima = period_from_maxima(t, y);
    const bool ok = rel(fit.period, expected) <= 0.01;
    return {ok, fmt("period %.4f ns (maxima %.4f ns), target 0.864 ns +- 1%%", fit.period, maxima)};
}

Outcome lifetime() {
    RunConfig cfg = preset("fig2_init.cfg");
    cfg.trajectories = 100000;
    const auto pt = scan_points(cfg.sequence, *cfg.seed).front();  // zero pump duration: reset photons only
    const auto b = simulate_point(cfg, pt, threads());
    const auto tags = detect_point(cfg, pt, b, 0);
    const auto h = unconditional_histogram(tags, 0.0, 20.0, 50.0, b.cycles);
    const auto fit = fit_exponential(h, 0.3, 20.0);
    jacobian_checks.push_back({"lifetime exponential", fit.jacobian_check});
    const bool ok = rel(fit.tau, 1.32) <= 0.02;
    return {ok, fmt("tau %.4f +- %.4f ns over %lld tags, target 1.32 ns +- 2%%", fit.tau, fit.tau_error,
                    static_cast<long long>(h.total()))};
}

Outcome initialization_law() {
    SystemParams p;
    p.electron_splitting = units::ghz_to_rad_per_ns(16.0);
    p.hole_splitting = units::ghz_to_rad_per_ns(28.26);
    const auto seq = parse_sequence(
        "period 50\n"
        "pulse reset kind=reset t0=0\n"
        "pulse pump kind=drive t0=1 shape=square dur=45 target=T1 rabi_ghz=2.0\n");
    const int n_traj = 20000;
    const TrajectorySimulator sim(seq, p);
    const auto b = run_batch(sim, 31, n_traj, threads());
    const auto ch = build_channels(p);
    // ground level after each emission, per cycle
    std::vector<std::vector<int>> landed(n_traj);
    for (const auto& e : b.events) landed[e.cycle].push_back(idx(ch[e.channel].to));
    // the first photon of every cycle is the reset decay
    const bool all_reset = std::none_of(landed.begin(), landed.end(), [](const auto& v) { return v.empty(); });
    bool ok = all_reset;
    std::ostringstream os;
    for (int n = 0; n <= 4; ++n) {
        int up = 0;
        for (const auto& v : landed)
            if (!v.empty() && v[std::min<std::size_t>(n, v.size() - 1)] == idx(Level::SpinUp)) ++up;
        const double f = static_cast<double>(up) / n_traj;
        const double expect = 1.0 - std::pow(0.5, n + 1);
        const double sigma = std::sqrt(expect * (1.0 - expect) / n_traj);
        const double z = (f - expect) / sigma;
        ok = ok && std::abs(z) <= 3.0;
        os << fmt("n=%d %.4f/%.4f (%+.1f sigma) ", n, f, expect, z);
    }
    if (!all_reset) os << "cycle without a reset photon";
    return {ok, os.str()};
}

Outcome ramsey_recovery() {
    RunConfig cfg = preset("fig3_ramsey.cfg");
    cfg.trajectories = 4000;
    const auto pts = scan_points(cfg.sequence, *cfg.seed);
    std::vector<double> tau, y, s;
    for (const auto& pt : pts) {
        const auto b = simulate_point(cfg, pt, threads());
        const auto tags = detect_point(cfg, pt, b, 0);
        double c = 0.0;
        for (const auto& t : tags)
            if (detail::in_window(t, 23.1, 25.0)) c += 1.0;
        tau.push_back(pt.values.front().second - cfg.scan.tau_origin);
        y.push_back(c / b.cycles);
        s.push_back(std::sqrt(std::max(c, 1.0)) / b.cycles);
    }
    const auto fit = fit_ramsey(tau, y, DephasingShape::Gaussian, 0.0, s);
    jacobian_checks.push_back({"ramsey", fit.jacobian_check});
    const double w = units::two_pi * 16.0;
    const bool ok = rel(fit.T2star, 0.83) <= 0.05 && rel(fit.omega, w) <= 0.01;
    return {ok, fmt("T2* %.4f +- %.4f ns (target 0.83 +- 5%%), omega %.3f rad/ns (target %.3f +- 1%%)", fit.T2star,
                    fit.T2star_error, fit.omega, w)};
}

Outcome g2_windows() {
    RunConfig cfg = preset("fig4_computational_9t.cfg");
    cfg.trajectories = 2000;
    const auto pt = scan_points(cfg.sequence, *cfg.seed).front();
    const auto b = simulate_point(cfg, pt, threads());
    DetectorConfig clean = cfg.detector;
    clean.laser_leakage = 0.0;
    const auto& red = cfg.filters.front().filter;
    const auto single = detect(b.events, red, clean, detection_seed(pt, 0), pt.sequence, cfg.params, b.cycles);
    const auto leaky = detect(b.events, red, cfg.detector, detection_seed(pt, 0), pt.sequence, cfg.params, b.cycles);
    const auto g_single = g2_zero(single, 1.15, 1.7, b.cycles);
    const auto g_leaky = g2_zero(leaky, 0.1, 4.0, b.cycles);
    const bool ok = b.cycles >= 100000 && g_single.value < 0.05 && g_leaky.value >= 0.1 && g_leaky.value <= 0.3;
    return {ok, fmt("%lld cycles; g2(0) [1.15,1.7] ns = %.4f +- %.4f (< 0.05); with leakage %.3f, [0.1,4] ns = %.4f +- %.4f "
                    "(in [0.1,0.3])",
                    static_cast<long long>(b.cycles), g_single.value, g_single.error, cfg.detector.laser_leakage,
                    g_leaky.value, g_leaky.error)};
}

double red_blue_ratio(const std::string& name, double* red_count, double* blue_count) {
    const RunConfig cfg = preset(name);
    const auto pt = scan_points(cfg.sequence, *cfg.seed).front();  // no spin flip
    const auto b = simulate_point(cfg, pt, threads());
    const Window ent{1.15, 1.7}, ro{9.1, 14.0};
    *red_count = conditioned_count(detect_point(cfg, pt, b, 0), ent, ro);
    *blue_count = conditioned_count(detect_point(cfg, pt, b, 1), ent, ro);
    return *red_count / *blue_count;
}

Outcome contrast_ordering() {
    double r9n, b9n, r5n, b5n;
    const double r9 = red_blue_ratio("fig4_computational_9t.cfg", &r9n, &b9n);
    const double r5 = red_blue_ratio("fig4_computational_5t.cfg", &r5n, &b5n);
    const bool ok = r9 >= 10.0 && r9 > r5;
    return {ok, fmt("Red:Blue 9 T %.2f (%.0f/%.0f), 5 T %.2f (%.0f/%.0f); need 9 T >= 10 and 9 T > 5 T", r9, r9n, b9n,
                    r5, r5n, b5n)};
}

// Superposition-basis simulations shared by criteria 7 and 8.
struct FringeRun {
    RunConfig cfg;
    std::vector<ScanPoint> pts;
    std::vector<BatchResult> batches;
};

std::map<std::string, FringeRun> fringe_cache;

const FringeRun& fringe_run(const std::string& name) {
    auto it = fringe_cache.find(name);
    if (it != fringe_cache.end()) return it->second;
    FringeRun r;
    r.cfg = preset(name);
    r.pts = scan_points(r.cfg.sequence, *r.cfg.seed);
    for (const auto& pt : r.pts) r.batches.push_back(simulate_point(r.cfg, pt, threads()));
    return fringe_cache.emplace(name, std::move(r)).first->second;
}

FringeDataset fringe_dataset(const FringeRun& r, std::size_t i, double jitter_fwhm) {
    DetectorConfig det = r.cfg.detector;
    det.jitter_fwhm = jitter_fwhm;
    const auto tags = detect(r.batches[i].events, r.cfg.filters.front().filter, det, detection_seed(r.pts[i], 0),
                             r.pts[i].sequence, r.cfg.params, r.batches[i].cycles);
    return {select_channel(tags, 0), tags, r.batches[i].cycles};
}

FringeSettings fringe_settings(const FringeRun& r, double jitter_fwhm, bool free_frequency) {
    FringeSettings s;
    s.ent = {1.15, 1.7};
    s.readout = {4.1, 8.0};
    s.bin_ps = 10.0;
    s.omega = r.cfg.params.electron_splitting;
    s.jitter_fwhm = jitter_fwhm;
    s.options.free_frequency = free_frequency;
    return s;
}

FringeFit fit_dataset(const FringeDataset& d, const FringeSettings& s, const std::string& label) {
    const auto fit = fit_fringes(fringe_histogram(d, s), s.omega, s.jitter_fwhm, s.options);
    jacobian_checks.push_back({label, fit.jacobian_check});
    return fit;
}

Outcome superposition_fringes() {
    bool ok = true;
    std::ostringstream os;
    for (const auto& [name, period_ps] : {std::pair{"fig5_superposition_9t.cfg", 66.0}, {"fig5_superposition_5t.cfg", 110.0}}) {
        const auto& r = fringe_run(name);
        const double jitter = r.cfg.detector.jitter_fwhm;
        const auto plus = fringe_dataset(r, 0, jitter), minus = fringe_dataset(r, 1, jitter);
        const auto fixed = fringe_settings(r, jitter, false), free = fringe_settings(r, jitter, true);
        const auto fp = fit_dataset(plus, fixed, "fringe plus"), fm = fit_dataset(minus, fixed, "fringe minus");
        const auto gp = fit_dataset(plus, free, "fringe plus free"), gm = fit_dataset(minus, free, "fringe minus free");
        const double tp = units::two_pi / gp.frequency * 1000.0, tm = units::two_pi / gm.frequency * 1000.0;
        const double dphi = std::abs(wrap_2pi(fp.phase - fm.phase) - units::pi);
        const bool good = rel(tp, period_ps) <= 0.02 && rel(tm, period_ps) <= 0.02 && dphi <= 0.15;
        ok = ok && good;
        os << fmt("%.0f ps: fitted periods %.2f/%.2f ps (+-2%%), |dphi - pi| = %.3f rad (<= 0.15); ", period_ps, tp, tm,
                  dphi);
    }
    return {ok, os.str()};
}

Outcome jitter_deconvolution() {
    bool ok = true;
    std::ostringstream os;
    for (const auto* name : {"fig5_superposition_9t.cfg", "fig5_superposition_5t.cfg"}) {
        const auto& r = fringe_run(name);
        const double jitter = 40.0;
        double v_true = 0.0, v_raw = 0.0, v_dec = 0.0;
        for (std::size_t i = 0; i < 2; ++i) {
            const auto f0 = fit_dataset(fringe_dataset(r, i, 0.0), fringe_settings(r, 0.0, false), "fringe no jitter");
            const auto f1 = fit_dataset(fringe_dataset(r, i, jitter), fringe_settings(r, jitter, false), "fringe jitter");
            v_true += 0.5 * f0.visibility_raw;
            v_raw += 0.5 * f1.visibility_raw;
            v_dec += 0.5 * f1.visibility_deconvolved;
        }
        const double att = jitter_attenuation(r.cfg.params.electron_splitting, jitter);
        const double measured = v_raw / v_true;
        const bool good = rel(measured, att) <= 0.10 && rel(v_dec, v_true) <= 0.08;
        ok = ok && good;
        os << fmt("period %.0f ps: V_raw/V_true %.3f vs exp(-w^2 s^2/2) %.3f (+-10%%), deconvolved %.3f vs true %.3f "
                  "(+-8%%); ",
                  units::two_pi / r.cfg.params.electron_splitting * 1000.0, measured, att, v_dec, v_true);
    }
    return {ok, os.str()};
}

Outcome fidelity_arithmetic() {
    const auto a = entanglement_bound(0.9287, 0.5885);
    const auto b = entanglement_bound(0.8413, 0.7601);
    const bool ok = std::abs(a.value - 0.7586) < 1e-12 && std::abs(b.value - 0.8007) < 1e-12;
    return {ok, fmt("F = %.6f (0.7586), F = %.6f (0.8007)", a.value, b.value)};
}

// ---------------------------------------------------------------------------
// property suites

QuantumState initial_state(InitialSpin s) {
    if (s == InitialSpin::Down) return QuantumState::basis(Level::SpinDown);
    if (s == InitialSpin::Up) return QuantumState::basis(Level::SpinUp);
    Mat4 r = Mat4::Zero();
    r(0, 0) = r(1, 1) = 0.5;
    return QuantumState::density(r);
}

// Cumulative emission of all channels at time t (linear interpolation).
double cumulative(const MasterTrace& tr, double t) {
    auto total = [&](std::size_t i) { return tr.emitted[0][i] + tr.emitted[1][i] + tr.emitted[2][i] + tr.emitted[3][i]; };
    const auto it = std::upper_bound(tr.t.begin(), tr.t.end(), t);
    if (it == tr.t.begin()) return total(0);
    if (it == tr.t.end()) return total(tr.t.size() - 1);
    const std::size_t j = it - tr.t.begin(), i = j - 1;
    const double f = tr.t[j] > tr.t[i] ? (t - tr.t[i]) / (tr.t[j] - tr.t[i]) : 1.0;
    return total(i) + f * (total(j) - total(i));
}

struct PresetCheck {
    bool ok = true;
    std::string detail;
};

PresetCheck master_vs_trajectory(const std::string& name) {
    const RunConfig cfg = preset(name);
    const auto pt = scan_points(cfg.sequence, *cfg.seed).front();
    const int cycles = cfg.trajectory.cycles > 1 ? 2 : 1;
    MasterOptions mo;
    mo.cycles = cycles;
    mo.imperfections = cfg.imperfections;
    mo.calibration = cfg.trajectory.calibration;
    const auto tr = evolve_master_ensemble(initial_state(cfg.trajectory.initial), pt.sequence, cfg.params, 0.0, mo);
    PresetCheck out;
    const double drift = tr.max_trace_drift / cycles;
    if (drift > 1e-9 || tr.min_eigenvalue < -1e-9) out.ok = false;

    TrajectoryOptions to = cfg.trajectory;
    to.cycles = cycles;
    const std::int64_t n_traj = 20000 / cycles;
    const TrajectorySimulator sim(pt.sequence, cfg.params, cfg.imperfections, to);
    const auto b = run_batch(sim, derive_key(pt.seed, {0xacc}), n_traj, threads());

    // bins: the drive-set segments of one cycle
    const Timeline tl(pt.sequence, cfg.params);
    std::vector<std::pair<double, double>> bins;
    for (const auto& it : tl.items())
        if (it.instant < 0 && it.b > it.a) bins.push_back({it.a, it.b});
    const double period = pt.sequence.period;
    double worst = 0.0;
    int used = 0;
    for (const auto& [a, bb] : bins) {
        double expect = 0.0;
        for (int c = 0; c < cycles; ++c) expect += cumulative(tr, c * period + bb) - cumulative(tr, c * period + a);
        expect *= static_cast<double>(n_traj);
        // per-cycle counts give the sampling variance (several photons per cycle are possible)
        std::vector<double> per(static_cast<std::size_t>(b.cycles), 0.0);
        for (const auto& e : b.events)
            if (e.t_phot >= a && e.t_phot < bb) per[e.cycle] += 1.0;
        double sum = 0.0, sq = 0.0;
        for (double x : per) {
            sum += x;
            sq += x * x;
        }
        const double n = static_cast<double>(per.size());
        const double var = sq - sum * sum / n;
        if (expect < 20.0 && sum < 20.0) continue;
        const double z = (sum - expect) / std::sqrt(std::max(var, 1.0));
        worst = std::max(worst, std::abs(z));
        ++used;
        if (std::abs(z) > 3.0) out.ok = false;
    }
    out.detail = fmt("%s drift %.1e min eig %.1e, %d bins max |z| %.2f", name.c_str(), drift, tr.min_eigenvalue, used,
                     worst);
    return out;
}

std::string tag_text(const RunConfig& cfg, const ScanPoint& pt, int n_threads) {
    const auto b = simulate_point(cfg, pt, n_threads);
    std::ostringstream os;
    for (std::size_t fi = 0; fi < cfg.filters.size(); ++fi) write_tags(os, detect_point(cfg, pt, b, fi));
    return os.str();
}

Outcome property_suites() {
    bool ok = true;
    std::ostringstream os;

    // trace, positivity and trajectory agreement on every preset
    bool agree = true;
    for (const auto* name : {"fig2_rabi.cfg", "fig2_init.cfg", "fig3_rabi.cfg", "fig3_ramsey.cfg", "fig3_grid.cfg",
                             "fig4_computational_9t.cfg", "fig4_computational_5t.cfg", "fig5_superposition_9t.cfg",
                             "fig5_superposition_5t.cfg"}) {
        const auto c = master_vs_trajectory(name);
        agree = agree && c.ok;
        std::printf("    %s%s\n", c.detail.c_str(), c.ok ? "" : "  <-- out of tolerance");
    }
    ok = ok && agree;
    os << (agree ? "trace/positivity and trajectory agreement ok; " : "trace/positivity or trajectory agreement failed; ");

    // an initialization fit so the check covers every fit family
    {
        RunConfig cfg = preset("fig2_init.cfg");
        std::vector<double> x, y;
        for (const auto& pt : scan_points(cfg.sequence, *cfg.seed)) {
            const auto b = simulate_point(cfg, pt, threads());
            double c = 0.0;
            for (const auto& t : detect_point(cfg, pt, b, 0))
                if (detail::in_window(t, 23.1, 25.0)) c += 1.0;
            x.push_back(pt.values.front().second);
            y.push_back(c / b.cycles);
        }
        for (auto& v : y) v /= x.empty() ? 1.0 : y.front();
        jacobian_checks.push_back({"initialization", fit_initialization(x, y, cfg.params).jacobian_check});
    }
    double worst = 0.0;
    std::string worst_name;
    for (const auto& [n, v] : jacobian_checks)
        if (!(v <= worst)) {
            worst = v;
            worst_name = n;
        }
    const bool jac = worst < 1e-4;
    ok = ok && jac;
    os << fmt("%zu fit optima, worst Jacobian disagreement %.2e (%s, < 1e-4); ", jacobian_checks.size(), worst,
              worst_name.c_str());

    // byte-identical reruns, independent of thread count
    bool same = true;
    for (const auto* name : {"fig2_init.cfg", "fig5_superposition_9t.cfg"}) {
        RunConfig cfg = preset(name);
        cfg.trajectories = 50;
        const auto pt = scan_points(cfg.sequence, *cfg.seed).back();
        const auto a = tag_text(cfg, pt, 1), b = tag_text(cfg, pt, 1), c = tag_text(cfg, pt, 3);
        same = same && !a.empty() && a == b && a == c;
    }
    ok = ok && same;
    os << (same ? "reruns byte-identical" : "reruns differ");
    return {ok, os.str()};
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;  // runtime bound, 0 = none
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "Rabi period", 10.0, rabi_period},
        {2, "lifetime decay", 10.0, lifetime},
        {3, "initialization limit law", 120.0, initialization_law},
        {4, "Ramsey recovery", 120.0, ramsey_recovery},
        {5, "g2 windows", 180.0, g2_windows},
        {6, "computational-basis contrast ordering", 300.0, contrast_ordering},
        {7, "superposition fringes", 300.0, superposition_fringes},
        {8, "jitter attenuation and deconvolution", 0.0, jitter_deconvolution},
        {9, "fidelity arithmetic", 0.0, fidelity_arithmetic},
        {10, "property suites", 0.0, property_suites},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = c.limit_s <= 0.0 || s < c.limit_s;
        const bool pass = o.pass && in_time;
        if (!pass) ++failed;
        std::printf("criterion %2d %s: %s  %s [%.1f s%s]\n", c.id, c.name, pass ? "PASS" : "FAIL", o.detail.c_str(), s,
                    c.limit_s > 0.0 ? fmt(", limit %.0f s", c.limit_s).c_str() : "");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
