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

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "detection.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "rng.hpp"
#include "units.hpp"

namespace qdspin {

enum class Normalization { Raw, PerTrigger, PoissonLevel };

struct Histogram {
    std::vector<double> bin_edges;   // ps
    std::vector<std::int64_t> counts;
    std::vector<double> values;      // counts after normalization
    std::vector<double> exposure;    // expected counts per unit of value, so counts ~ values x exposure
    Normalization normalization = Normalization::Raw;
    std::int64_t triggers = 0;       // conditioning cycles (PerTrigger) or cycles

    std::size_t bins() const { return counts.size(); }
    double width_ps(std::size_t i) const { return bin_edges[i + 1] - bin_edges[i]; }
    double center_ns(std::size_t i) const { return 0.5e-3 * (bin_edges[i] + bin_edges[i + 1]); }
    std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }
};

// Per-cycle multiplicities for bootstrap resampling; empty = all ones.
using CycleWeights = std::vector<std::uint32_t>;

namespace detail {

inline std::uint32_t weight_of(const CycleWeights* w, std::int64_t cycle) {
    if (!w || w->empty()) return 1;
    return (cycle >= 0 && cycle < static_cast<std::int64_t>(w->size())) ? (*w)[cycle] : 0;
}

inline std::int64_t ns_to_ps(double t) { return static_cast<std::int64_t>(std::llround(t * 1000.0)); }

inline Histogram empty_histogram(double a_ns, double b_ns, double bin_ps) {
    if (!(bin_ps > 0.0) || !(b_ns > a_ns)) throw AnalysisError("InvalidHistogram", "histogram range or bin width invalid");
    Histogram h;
    const double a = a_ns * 1000.0, b = b_ns * 1000.0;
    const auto n = static_cast<std::size_t>(std::floor((b - a) / bin_ps + 1e-9));
    if (n == 0) throw AnalysisError("InvalidHistogram", "histogram range shorter than one bin");
    for (std::size_t i = 0; i <= n; ++i) h.bin_edges.push_back(a + bin_ps * static_cast<double>(i));
    h.counts.assign(n, 0);
    return h;
}

inline std::optional<std::size_t> bin_of(const Histogram& h, std::int64_t t_ps) {
    const double t = static_cast<double>(t_ps);
    if (t < h.bin_edges.front() || t >= h.bin_edges.back()) return std::nullopt;
    const double w = h.bin_edges[1] - h.bin_edges[0];
    auto i = static_cast<std::size_t>((t - h.bin_edges.front()) / w);
    return std::min(i, h.counts.size() - 1);
}

inline bool in_window(const TimeTag& t, double a_ns, double b_ns) {
    return t.t_ps >= ns_to_ps(a_ns) && t.t_ps < ns_to_ps(b_ns);
}

}  // namespace detail

// Sorted unique cycles containing at least one tag inside [a, b) ns.
inline std::vector<std::int64_t> cycles_with_tag(const std::vector<TimeTag>& tags, double a_ns, double b_ns) {
    std::vector<std::int64_t> out;
    for (const auto& t : tags)
        if (detail::in_window(t, a_ns, b_ns) && (out.empty() || out.back() != t.cycle)) out.push_back(t.cycle);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline Histogram unconditional_histogram(const std::vector<TimeTag>& tags, double a_ns, double b_ns, double bin_ps,
                                         std::int64_t n_cycles, const CycleWeights* w = nullptr) {
    Histogram h = detail::empty_histogram(a_ns, b_ns, bin_ps);
    for (const auto& t : tags)
        if (auto i = detail::bin_of(h, t.t_ps)) h.counts[*i] += detail::weight_of(w, t.cycle);
    std::int64_t trig = n_cycles;
    if (w && !w->empty()) trig = std::accumulate(w->begin(), w->end(), std::int64_t{0});
    h.triggers = trig;
    h.normalization = Normalization::PerTrigger;
    for (auto c : h.counts) h.values.push_back(trig > 0 ? static_cast<double>(c) / trig : 0.0);
    h.exposure.assign(h.bins(), static_cast<double>(trig));
    return h;
}

// Histogram of entanglement-window tag times in cycles with a readout-window tag.
inline Histogram conditional_histogram(const std::vector<TimeTag>& ent_tags, const std::vector<TimeTag>& readout_tags,
                                       double readout_a_ns, double readout_b_ns, double bin_ps, double a_ns,
                                       double b_ns, const CycleWeights* w = nullptr) {
    const auto cond = cycles_with_tag(readout_tags, readout_a_ns, readout_b_ns);
    std::int64_t trig = 0;
    for (auto c : cond) trig += detail::weight_of(w, c);
    if (cond.empty() || trig == 0) throw AnalysisError("NoConditioningEvents", "no conditioning events");
    Histogram h = detail::empty_histogram(a_ns, b_ns, bin_ps);
    for (const auto& t : ent_tags) {
        auto i = detail::bin_of(h, t.t_ps);
        if (!i) continue;
        if (std::binary_search(cond.begin(), cond.end(), t.cycle)) h.counts[*i] += detail::weight_of(w, t.cycle);
    }
    h.triggers = trig;
    h.normalization = Normalization::PerTrigger;
    for (auto c : h.counts) h.values.push_back(static_cast<double>(c) / trig);
    h.exposure.assign(h.bins(), static_cast<double>(trig));
    return h;
}

// Conditional over unconditional rate per bin (1 = uncorrelated level).
inline Histogram relative_histogram(const Histogram& cond, const Histogram& uncond) {
    if (cond.bin_edges != uncond.bin_edges) throw AnalysisError("InvalidHistogram", "histogram binning differs");
    Histogram h = cond;
    h.normalization = Normalization::PoissonLevel;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        h.values[i] = uncond.values[i] > 0.0 ? cond.values[i] / uncond.values[i] : 0.0;
        h.exposure[i] = uncond.values[i] * static_cast<double>(cond.triggers);
    }
    return h;
}

// ---------------------------------------------------------------------------
// g2

struct G2Result {
    double value = 0.0;
    double error = 0.0;
    double zero_lag = 0.0;
    double side_mean = 0.0;
    int lags = 0;
};

// Cycle-lag coincidences between detectors 0 and 1 inside the window.
inline G2Result g2_zero(const std::vector<TimeTag>& tags, double window_a_ns, double window_b_ns,
                        std::int64_t n_cycles, int max_lag = 10) {
    if (max_lag < 10) throw AnalysisError("InvalidWindow", "g2 needs at least 10 side lags");
    if (n_cycles <= 2 * max_lag) throw AnalysisError("InsufficientCounts", "too few cycles for g2");
    std::vector<std::uint32_t> n0(n_cycles, 0), n1(n_cycles, 0);
    for (const auto& t : tags) {
        if (t.cycle < 0 || t.cycle >= n_cycles || !detail::in_window(t, window_a_ns, window_b_ns)) continue;
        if (t.channel == 0) ++n0[t.cycle];
        else if (t.channel == 1) ++n1[t.cycle];
    }
    auto coinc = [&](std::int64_t lag) {
        double s = 0.0;
        for (std::int64_t c = std::max<std::int64_t>(0, -lag); c < n_cycles && c + lag < n_cycles; ++c)
            s += static_cast<double>(n0[c]) * n1[c + lag];
        return s;
    };
    G2Result r;
    r.zero_lag = coinc(0);
    double side = 0.0;
    int nl = 0;
    for (int l = 1; l <= max_lag; ++l) {
        // scale for the slightly shorter overlap at lag l
        const double f = static_cast<double>(n_cycles) / (n_cycles - l);
        side += f * (coinc(l) + coinc(-l));
        nl += 2;
    }
    r.lags = nl;
    r.side_mean = side / nl;
    if (r.side_mean < 100.0) throw AnalysisError("InsufficientCounts", "normalization peaks average fewer than 100 coincidences");
    r.value = r.zero_lag / r.side_mean;
    r.error = std::sqrt(std::max(r.zero_lag, 1.0)) / r.side_mean;
    return r;
}

// ---------------------------------------------------------------------------
// fidelities

struct Estimate {
    double value = 0.0;
    double error = 0.0;
};

inline Estimate computational_fidelity(double n_red_down, double n_blue_down, double n_blue_up, double n_red_up) {
    const double d1 = n_red_down + n_blue_down, d2 = n_blue_up + n_red_up;
    if (!(d1 > 0.0) || !(d2 > 0.0)) throw AnalysisError("ZeroDenominator", "computational fidelity needs counts in both bases");
    const double p1 = n_red_down / d1, p2 = n_blue_up / d2;
    const double v1 = p1 * (1.0 - p1) / d1, v2 = p2 * (1.0 - p2) / d2;
    return {0.5 * p1 + 0.5 * p2, 0.5 * std::sqrt(v1 + v2)};
}

inline Estimate entanglement_bound(double f1, double f2, double e1 = 0.0, double e2 = 0.0) {
    if (f1 < 0.0 || f1 > 1.0 || f2 < 0.0 || f2 > 1.0) throw AnalysisError("InvalidFidelity", "fidelities must lie in [0, 1]");
    return {(f1 + f2) / 2.0, 0.5 * std::sqrt(e1 * e1 + e2 * e2)};
}

inline double wrap_2pi(double x) {
    x = std::fmod(x, units::two_pi);
    return x < 0.0 ? x + units::two_pi : x;
}

struct FringeFit {
    double visibility_raw = 0.0;
    double visibility_deconvolved = 0.0;
    bool deconvolution_warning = false;  // deconvolved visibility > 1
    double phase = 0.0;                  // rad, mod 2pi, model O [1 + V cos(w t + phase)] with t in ns
    double frequency = 0.0;              // rad/ns
    double decay_time = std::numeric_limits<double>::infinity();  // not fitted by this model
    double residual_rms = 0.0;           // relative to the offset
    double offset = 0.0;
    double visibility_error = 0.0;
    double deconvolved_error = 0.0;
    double phase_error = 0.0;
    double frequency_error = 0.0;
    double jacobian_check = 0.0;
};

struct FringeOptions {
    bool free_frequency = false;
};

inline double jitter_attenuation(double omega, double jitter_fwhm_ps) {
    const double s = jitter_fwhm_ps * 1e-3 / units::fwhm_per_sigma;
    return std::exp(-0.5 * omega * omega * s * s);
}

inline FringeFit fit_fringes(const Histogram& h, double omega_z, double jitter_fwhm_ps, FringeOptions opt = {}) {
    if (h.bins() < 3) throw AnalysisError("FitDiverged", "too few bins for a fringe fit");
    const double period_ps = units::two_pi / omega_z * 1000.0;
    if (h.width_ps(0) > period_ps / 4.0) throw AnalysisError("PeriodUnderResolved", "bin width exceeds a quarter fringe period");
    // Weights follow the exposure only, never the fringe itself: the estimate
    // stays linear in the histogram, so jitter scales it by exactly the
    // attenuation factor even when the visibility varies across the window.
    std::vector<double> expo(h.bins(), 1.0);
    if (!h.values.empty()) {
        for (std::size_t i = 0; i < h.bins(); ++i) {
            if (!h.exposure.empty()) expo[i] = h.exposure[i];
            else expo[i] = h.values[i] > 0.0 ? static_cast<double>(h.counts[i]) / h.values[i] : 0.0;
        }
    }
    double sum_c = 0.0, sum_e = 0.0;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        if (!(expo[i] > 0.0)) continue;
        sum_c += static_cast<double>(h.counts[i]);
        sum_e += expo[i];
    }
    const double level = sum_e > 0.0 ? std::max(sum_c, 1.0) / sum_e : 1.0;
    std::vector<double> x, y, s;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        if (!(expo[i] > 0.0)) continue;
        y.push_back(h.values.empty() ? static_cast<double>(h.counts[i]) : h.values[i]);
        s.push_back(std::sqrt(level / expo[i]));
        x.push_back(h.center_ns(i));
    }
    const int n = static_cast<int>(x.size());
    if (n < 4) throw AnalysisError("FitDiverged", "too few populated bins for a fringe fit");
    // linear start: O + a cos + b sin
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
        a(i, 0) = 1.0 / s[i];
        a(i, 1) = std::cos(omega_z * x[i]) / s[i];
        a(i, 2) = std::sin(omega_z * x[i]) / s[i];
        b(i) = y[i] / s[i];
    }
    const Eigen::VectorXd lin = a.colPivHouseholderQr().solve(b);
    const double o0 = lin(0);
    if (!(std::abs(o0) > 0.0)) throw AnalysisError("FitDiverged", "fringe offset is zero");
    Eigen::VectorXd p(opt.free_frequency ? 4 : 3);
    p.head<3>() << o0, std::hypot(lin(1), lin(2)) / o0, std::atan2(-lin(2), lin(1));
    if (opt.free_frequency) p(3) = omega_z;
    ResidualFn f = [&](const Eigen::VectorXd& q) {
        const double w = opt.free_frequency ? q(3) : omega_z;
        Eigen::VectorXd r(n);
        for (int i = 0; i < n; ++i) r(i) = (y[i] - q(0) * (1.0 + q(1) * std::cos(w * x[i] + q(2)))) / s[i];
        return r;
    };
    const LmResult lm = levenberg_marquardt(f, p);
    Eigen::VectorXd q = lm.params;
    FringeFit out;
    out.offset = q(0);
    double v = q(1), phi = q(2);
    if (v < 0.0) {
        v = -v;
        phi += units::pi;
    }
    out.visibility_raw = v;
    out.phase = wrap_2pi(phi);
    out.frequency = opt.free_frequency ? q(3) : omega_z;
    out.visibility_error = lm.errors(1);
    out.phase_error = lm.errors(2);
    out.frequency_error = opt.free_frequency ? lm.errors(3) : 0.0;
    const double att = jitter_attenuation(out.frequency, jitter_fwhm_ps);
    out.visibility_deconvolved = v / att;
    out.deconvolved_error = out.visibility_error / att;
    out.deconvolution_warning = out.visibility_deconvolved > 1.0;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double m = q(0) * (1.0 + q(1) * std::cos(out.frequency * x[i] + q(2)));
        ss += (y[i] - m) * (y[i] - m);
    }
    out.residual_rms = std::sqrt(ss / n) / std::abs(q(0));
    out.jacobian_check = lm.jacobian_check;
    return out;
}

struct SuperpositionFidelity {
    double F2 = 0.0;
    double error = 0.0;
    double phase_difference = 0.0;
    bool clamped = false;
};

inline SuperpositionFidelity superposition_fidelity(const FringeFit& plus, const FringeFit& minus) {
    SuperpositionFidelity r;
    r.phase_difference = wrap_2pi(plus.phase - minus.phase);
    if (std::abs(r.phase_difference - units::pi) > 0.5)
        throw AnalysisError("PhaseInconsistent", "fringe phases are not pi-opposed");
    const double vbar = 0.5 * (plus.visibility_deconvolved + minus.visibility_deconvolved);
    r.F2 = 0.5 * (1.0 + vbar);
    r.error = 0.25 * std::sqrt(plus.deconvolved_error * plus.deconvolved_error +
                               minus.deconvolved_error * minus.deconvolved_error);
    if (r.F2 > 1.0 || r.F2 < 0.0) {
        r.F2 = std::clamp(r.F2, 0.0, 1.0);
        r.clamped = true;
    }
    return r;
}

// ---------------------------------------------------------------------------
// calibration fits

struct InitializationFit {
    double pump_rate = 0.0;
    double pump_rate_error = 0.0;
    double scale = 1.0;
    std::vector<double> t;       // ns
    std::vector<double> f_init;  // P(up) from the rate model
    double jacobian_check = 0.0;
};

// Readout intensity after a pump of length t, normalized to no pumping:
// trion population left at the end of the pump relaxes half into |down>.
inline double pumping_readout_model(double t, double w, const SystemParams& p) {
    const auto pop = spin_pumping_populations(t, w, p);
    return 2.0 * (pop[0] + 0.5 * pop[1]);
}

inline InitializationFit fit_initialization(const std::vector<double>& t_pump, const std::vector<double>& intensity,
                                            const SystemParams& p, double w_guess = 1.0) {
    if (t_pump.size() != intensity.size() || t_pump.size() < 3)
        throw AnalysisError("FitDiverged", "initialization fit needs at least 3 points");
    const int n = static_cast<int>(t_pump.size());
    ResidualFn f = [&](const Eigen::VectorXd& q) {
        Eigen::VectorXd r(n);
        const double w = std::abs(q(0));
        for (int i = 0; i < n; ++i) r(i) = intensity[i] - q(1) * pumping_readout_model(t_pump[i], w, p);
        return r;
    };
    Eigen::VectorXd q0(2);
    q0 << w_guess, intensity.front() > 0.0 ? intensity.front() : 1.0;
    const LmResult lm = levenberg_marquardt(f, q0);
    InitializationFit out;
    out.pump_rate = std::abs(lm.params(0));
    out.pump_rate_error = lm.errors(0);
    out.scale = lm.params(1);
    out.jacobian_check = lm.jacobian_check;
    const double tmax = *std::max_element(t_pump.begin(), t_pump.end());
    for (int i = 0; i <= 100; ++i) {
        const double t = tmax * i / 100.0;
        out.t.push_back(t);
        out.f_init.push_back(spin_pumping_oracle(t, out.pump_rate, p));
    }
    return out;
}

struct PowerLawFit {
    double exponent = 0.0;
    double log_prefactor = 0.0;
    double r_squared = 0.0;
    double residual_rms = 0.0;
    bool large_residual = false;
};

// Log-log linear regression of theta against power.
inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& pts) {
    if (pts.size() < 4) throw AnalysisError("InsufficientPoints", "power-law fit needs at least 4 points");
    std::vector<double> lx, ly;
    for (const auto& [pw, th] : pts) {
        if (!(pw > 0.0) || !(th > 0.0)) throw AnalysisError("InsufficientPoints", "power-law fit needs positive data");
        lx.push_back(std::log(pw));
        ly.push_back(std::log(th));
    }
    const double n = static_cast<double>(lx.size());
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n, my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (!(sxx > 0.0)) throw AnalysisError("InsufficientPoints", "power-law fit needs distinct powers");
    PowerLawFit r;
    r.exponent = sxy / sxx;
    r.log_prefactor = my - r.exponent * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double e = ly[i] - (r.log_prefactor + r.exponent * lx[i]);
        ss += e * e;
    }
    r.residual_rms = std::sqrt(ss / n);
    r.r_squared = syy > 0.0 ? 1.0 - ss / syy : 0.0;
    r.large_residual = r.r_squared < 0.9;
    return r;
}

struct RamseyFit {
    double T2star = 0.0, T2star_error = 0.0;
    double omega = 0.0, omega_error = 0.0;
    double visibility = 0.0;
    double phase = 0.0;
    double offset = 0.0, amplitude = 0.0;
    double f_pi2 = 0.0;  // (1 + sqrt(V)) / 2
    double jacobian_check = 0.0;
};

inline double pi_half_fidelity(double visibility) { return 0.5 * (1.0 + std::sqrt(std::clamp(visibility, 0.0, 1.0))); }

// Dominant angular frequency of mean-subtracted samples (coarse DFT scan).
inline double dominant_frequency(const std::vector<double>& x, const std::vector<double>& y) {
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < x.size(); ++i) dmin = std::min(dmin, std::abs(x[i] - x[i - 1]));
    const double span = x.back() - x.front();
    const double wmax = units::pi / dmin, dw = units::pi / (4.0 * span);
    double best = 0.0, bw = dw;
    for (double w = dw; w <= wmax; w += dw) {
        double c = 0.0, s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            c += (y[i] - mean) * std::cos(w * x[i]);
            s += (y[i] - mean) * std::sin(w * x[i]);
        }
        if (c * c + s * s > best) {
            best = c * c + s * s;
            bw = w;
        }
    }
    return bw;
}

inline RamseyFit fit_ramsey(const std::vector<double>& tau, const std::vector<double>& y,
                            DephasingShape shape = DephasingShape::Gaussian, double omega_guess = 0.0,
                            const std::vector<double>& sigma = {}) {
    if (tau.size() != y.size() || tau.size() < 6) throw AnalysisError("FitDiverged", "Ramsey fit needs at least 6 points");
    const int n = static_cast<int>(tau.size());
    const double w0 = omega_guess > 0.0 ? omega_guess : dominant_frequency(tau, y);
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    const double span = tau.back() - tau.front();
    double amp0 = 0.0;
    for (double v : y) amp0 = std::max(amp0, std::abs(v - mean));
    auto env = [shape](double t, double t2) {
        const double u = std::abs(t) / std::abs(t2);
        return shape == DephasingShape::Gaussian ? std::exp(-u * u) : std::exp(-u);
    };
    ResidualFn f = [&](const Eigen::VectorXd& q) {
        Eigen::VectorXd r(n);
        for (int i = 0; i < n; ++i) {
            const double m = q(0) + q(1) * env(tau[i], q(2)) * std::cos(q(3) * tau[i] + q(4));
            r(i) = (y[i] - m) / (sigma.empty() ? 1.0 : sigma[i]);
        }
        return r;
    };
    // phase start from a linear fit at w0
    Eigen::MatrixXd a(n, 3);
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i) {
        const double e = env(tau[i], span / 2.0);
        a(i, 0) = 1.0;
        a(i, 1) = e * std::cos(w0 * tau[i]);
        a(i, 2) = e * std::sin(w0 * tau[i]);
        b(i) = y[i];
    }
    const Eigen::VectorXd lin = a.colPivHouseholderQr().solve(b);
    Eigen::VectorXd q0(5);
    q0 << lin(0), std::max(std::hypot(lin(1), lin(2)), 0.5 * amp0), span / 2.0, w0, std::atan2(-lin(2), lin(1));
    const LmResult lm = levenberg_marquardt(f, q0);
    RamseyFit r;
    r.offset = lm.params(0);
    r.amplitude = lm.params(1);
    r.T2star = std::abs(lm.params(2));
    r.T2star_error = lm.errors(2);
    r.omega = std::abs(lm.params(3));
    r.omega_error = lm.errors(3);
    double ph = lm.params(4);
    if (r.amplitude < 0.0) {
        r.amplitude = -r.amplitude;
        ph += units::pi;
    }
    if (lm.params(3) < 0.0) ph = -ph;
    r.phase = wrap_2pi(ph);
    r.visibility = r.offset != 0.0 ? r.amplitude / r.offset : 0.0;
    r.f_pi2 = pi_half_fidelity(r.visibility);
    r.jacobian_check = lm.jacobian_check;
    return r;
}

struct ExponentialFit {
    double tau = 0.0, tau_error = 0.0;
    double amplitude = 0.0, background = 0.0;
    double jacobian_check = 0.0;
};

// A exp(-(t - t0)/tau) + B on histogram bins with t >= t_start, Poisson weights.
inline ExponentialFit fit_exponential(const Histogram& h, double t_start_ns, double t_stop_ns) {
    std::vector<double> x, y, s;
    for (std::size_t i = 0; i < h.bins(); ++i) {
        const double t = h.center_ns(i);
        if (t < t_start_ns || t > t_stop_ns) continue;
        x.push_back(t - t_start_ns);
        y.push_back(static_cast<double>(h.counts[i]));
        s.push_back(std::sqrt(std::max<double>(h.counts[i], 1.0)));
    }
    const int n = static_cast<int>(x.size());
    if (n < 4) throw AnalysisError("FitDiverged", "too few bins for an exponential fit");
    ResidualFn f = [&](const Eigen::VectorXd& q) {
        Eigen::VectorXd r(n);
        for (int i = 0; i < n; ++i) r(i) = (y[i] - q(0) * std::exp(-x[i] / q(1)) - q(2)) / s[i];
        return r;
    };
    Eigen::VectorXd q0(3);
    q0 << std::max(y.front(), 1.0), std::max(0.25 * (x.back() - x.front()), 1e-3), 0.0;
    const LmResult lm = levenberg_marquardt(f, q0);
    return {lm.params(1), lm.errors(1), lm.params(0), lm.params(2), lm.jacobian_check};
}

struct DampedCosineFit {
    double omega = 0.0, omega_error = 0.0;
    double period = 0.0;
    double jacobian_check = 0.0;
};

// c0 + c1 e^{-t/t1} + A e^{-t/t2} cos(w t + phi) on a sampled trace.
inline DampedCosineFit fit_damped_cosine(const std::vector<double>& t, const std::vector<double>& y, double omega_guess) {
    const int n = static_cast<int>(t.size());
    if (n < 8) throw AnalysisError("FitDiverged", "too few samples for an oscillation fit");
    const double span = t.back() - t.front();
    double ymax = *std::max_element(y.begin(), y.end());
    ResidualFn f = [&](const Eigen::VectorXd& q) {
        Eigen::VectorXd r(n);
        for (int i = 0; i < n; ++i) {
            const double u = t[i] - t.front();
            r(i) = y[i] - (q(0) + q(1) * std::exp(-u / q(2)) + q(3) * std::exp(-u / q(4)) * std::cos(q(5) * u + q(6)));
        }
        return r;
    };
    Eigen::VectorXd q0(7);
    q0 << 0.25 * ymax, 0.25 * ymax, span, -0.5 * ymax, span, omega_guess, 0.0;
    const LmResult lm = levenberg_marquardt(f, q0);
    DampedCosineFit r;
    r.omega = std::abs(lm.params(5));
    r.omega_error = lm.errors(5);
    r.period = units::two_pi / r.omega;
    r.jacobian_check = lm.jacobian_check;
    return r;
}

// Mean spacing of successive local maxima (parabolic refinement).
inline double period_from_maxima(const std::vector<double>& t, const std::vector<double>& y, int max_peaks = 4) {
    std::vector<double> peaks;
    for (std::size_t i = 1; i + 1 < y.size() && static_cast<int>(peaks.size()) < max_peaks; ++i) {
        if (y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            const double d = y[i - 1] - 2.0 * y[i] + y[i + 1];
            const double off = d != 0.0 ? 0.5 * (y[i - 1] - y[i + 1]) / d : 0.0;
            peaks.push_back(t[i] + off * (t[i + 1] - t[i]));
        }
    }
    if (peaks.size() < 2) throw AnalysisError("FitDiverged", "fewer than two maxima");
    return (peaks.back() - peaks.front()) / (peaks.size() - 1);
}

// ---------------------------------------------------------------------------
// bootstrap

struct BootstrapSummary {
    double mean = 0.0;
    double stddev = 0.0;
    int valid = 0;
};

// Multiplicities of one with-replacement resample of n cycles.
inline CycleWeights resample_cycles(std::int64_t n_cycles, std::uint64_t seed, std::uint64_t resample,
                                    std::uint64_t dataset = 0) {
    CycleWeights w(static_cast<std::size_t>(n_cycles), 0u);
    Stream rng(seed, {0xb007ULL, resample, dataset});
    for (std::int64_t i = 0; i < n_cycles; ++i) ++w[rng.below(static_cast<std::uint64_t>(n_cycles))];
    return w;
}

inline BootstrapSummary summarize(const std::vector<double>& vals) {
    BootstrapSummary s;
    s.valid = static_cast<int>(vals.size());
    if (vals.empty()) return s;
    s.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    double v = 0.0;
    for (double x : vals) v += (x - s.mean) * (x - s.mean);
    s.stddev = vals.size() > 1 ? std::sqrt(v / (vals.size() - 1)) : 0.0;
    return s;
}

// Resamples cycles with replacement; `stat` gets per-cycle multiplicities and
// may throw AnalysisError for degenerate resamples, which are skipped.
template <class Stat>
BootstrapSummary bootstrap_cycles(std::int64_t n_cycles, int resamples, std::uint64_t seed, Stat&& stat) {
    std::vector<double> vals;
    for (int b = 0; b < resamples; ++b) {
        try {
            vals.push_back(stat(resample_cycles(n_cycles, seed, static_cast<std::uint64_t>(b))));
        } catch (const AnalysisError&) {
        }
    }
    return summarize(vals);
}

}  // namespace qdspin
