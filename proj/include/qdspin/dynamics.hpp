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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "pulse.hpp"
#include "quantum_core.hpp"
#include "rng.hpp"

namespace qdspin {

enum class Origin { ResetPulse, Pump, Entanglement, Readout, Rotation };
enum class Unraveling { Frequency, Erased };
enum class InitialSpin { Random, Down, Up };

inline const char* origin_name(Origin o) {
    switch (o) {
        case Origin::ResetPulse: return "reset";
        case Origin::Pump: return "pump";
        case Origin::Entanglement: return "entanglement";
        case Origin::Readout: return "readout";
        case Origin::Rotation: return "rotation";
    }
    return "?";
}

struct ImperfectionConfig {
    double laser_leakage = 0.0;  // mean spurious laser tags per drive pulse
    double rotation_tilt = 0.0;  // rad, polar tilt of the rotation axis
};

struct EmissionEvent {
    double t_phot = 0.0;  // ns within cycle
    std::int64_t cycle = 0;
    int channel = 0;      // emitting channel; red channel of the parent for erased jumps
    int outcome = 0;      // +-1 for erased jumps, 0 otherwise
    Origin origin = Origin::ResetPulse;
};

struct SpinRecord {
    std::int64_t cycle = 0;
    double t = 0.0;
    int level = -1;  // ground level after a jump or end-of-cycle projection; -1 = superposition
};

struct TrajectoryResult {
    std::vector<EmissionEvent> events;
    std::vector<SpinRecord> spin_record;
    std::uint64_t seed = 0;
};

struct TrajectoryOptions {
    Unraveling unraveling = Unraveling::Frequency;
    double dt = 0.0;  // 0 selects 0.02 x min(1/Gamma, 2pi/Omega_max)
    int cycles = 1;
    InitialSpin initial = InitialSpin::Random;
    RotationCalibration calibration;
};

// Ordered instants and constant-drive-set intervals of one cycle.
class Timeline {
public:
    struct Coupling {
        int pulse;       // index into pulses
        int trion, ground;
        double rabi;     // peak, rad/ns
        double w;        // laser frequency minus frame
    };
    struct Item {
        double a = 0.0, b = 0.0;
        int instant = -1;  // pulse index for Reset/Rotate instants
        std::vector<Coupling> couplings;
    };

    Timeline(const Sequence& seq, const SystemParams& p) : period_(seq.period), pulses_(seq.pulses) {
        const auto ch = build_channels(p);
        for (const auto& q : pulses_) {
            if (q.kind == PulseKind::Drive) {
                frame_ = ch[q.target].frequency_offset + q.detuning();
                break;
            }
        }
        for (const auto& q : pulses_)
            if (q.kind == PulseKind::Drive) omega_max_ = std::max(omega_max_, std::abs(q.rabi()));
        std::vector<double> bp{0.0, period_};
        for (const auto& q : pulses_) {
            if (q.kind == PulseKind::Drive) {
                bp.push_back(q.support_start());
                bp.push_back(q.support_end());
            } else {
                bp.push_back(q.t0);
            }
        }
        std::sort(bp.begin(), bp.end());
        bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
        for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
            const double a = bp[i], b = bp[i + 1];
            for (std::size_t k = 0; k < pulses_.size(); ++k) {
                const auto& q = pulses_[k];
                if (q.kind != PulseKind::Drive && q.t0 == a) {
                    Item it;
                    it.a = it.b = a;
                    it.instant = static_cast<int>(k);
                    items_.push_back(it);
                }
            }
            Item seg;
            seg.a = a;
            seg.b = b;
            for (std::size_t k = 0; k < pulses_.size(); ++k) {
                const auto& q = pulses_[k];
                if (q.kind == PulseKind::Drive && q.support_start() <= a && q.support_end() >= b) {
                    const auto& c = ch[q.target];
                    seg.couplings.push_back({static_cast<int>(k), idx(c.from), idx(c.to), q.rabi(),
                                             c.frequency_offset + q.detuning() - frame_});
                }
            }
            check_couplings(seg.couplings);
            items_.push_back(std::move(seg));
        }
        for (std::size_t k = 0; k < pulses_.size(); ++k) {
            const auto& q = pulses_[k];
            if (q.kind == PulseKind::Rotate || (q.kind == PulseKind::Drive && !(q.support_end() > q.support_start()))) continue;
            Origin o = Origin::ResetPulse;
            if (q.kind == PulseKind::Drive) {
                if (q.name.find("read") != std::string::npos) o = Origin::Readout;
                else if (q.name.find("pump") != std::string::npos) o = Origin::Pump;
                else o = Origin::Entanglement;
            }
            sources_.push_back({q.support_start(), o});
        }
        std::sort(sources_.begin(), sources_.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    }

    double period() const { return period_; }
    double frame() const { return frame_; }
    double omega_max() const { return omega_max_; }
    const std::vector<Item>& items() const { return items_; }
    const std::vector<Pulse>& pulses() const { return pulses_; }

    // Coupling matrix element <trion|V|ground> at time t.
    cplx coupling_value(const Coupling& c, double t) const {
        const double env = envelope(pulses_[c.pulse], t);
        return 0.5 * c.rabi * env * std::exp(cplx(0.0, -c.w * t));
    }

    // Latest excitation source (drive or reset) starting at or before t; wraps to the previous cycle.
    Origin origin_at(double t) const {
        if (sources_.empty()) return Origin::ResetPulse;
        Origin o = sources_.back().second;
        for (const auto& s : sources_)
            if (s.first <= t) o = s.second;
        return o;
    }

private:
    static void check_couplings(const std::vector<Coupling>& cs) {
        for (std::size_t i = 0; i < cs.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (cs[i].trion == cs[j].trion && cs[i].ground == cs[j].ground && cs[i].w != cs[j].w)
                    throw SimulationError("ConflictingDrives",
                                          "two simultaneous drives on one transition with different detunings");
    }

    double period_;
    std::vector<Pulse> pulses_;
    double frame_ = 0.0;
    double omega_max_ = 0.0;
    std::vector<Item> items_;
    std::vector<std::pair<double, Origin>> sources_;
};

// Step bound used by the master equation.
inline double max_master_step(const SystemParams& p, double omega_max) {
    double s = 1.0 / p.decay_rate;
    if (omega_max > 0.0) s = std::min(s, units::two_pi / omega_max);
    return 1e-3 * s;
}

// ---------------------------------------------------------------------------
// quasi-static dephasing

struct QuadratureNode {
    double shift;   // rad/ns added to the electron splitting
    double weight;
};

// Gauss-Hermite nodes (Gaussian shape) or equal-weight Cauchy quantile
// midpoints (Exponential shape) for the quasi-static offset distribution.
inline std::vector<QuadratureNode> quasi_static_nodes(const SystemParams& p, int n) {
    if (!std::isfinite(p.dephasing_T2star) || n <= 1) return {{0.0, 1.0}};
    std::vector<QuadratureNode> out;
    if (p.dephasing_shape == DephasingShape::Exponential) {
        const double g = 1.0 / p.dephasing_T2star;
        for (int i = 0; i < n; ++i) {
            const double u = (i + 0.5) / n;
            out.push_back({g * std::tan(units::pi * (u - 0.5)), 1.0 / n});
        }
        return out;
    }
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    const double sigma = p.dephasing_sigma();
    for (int i = 0; i < n; ++i) {
        const double v0 = es.eigenvectors()(0, i);
        out.push_back({std::sqrt(2.0) * sigma * es.eigenvalues()(i), v0 * v0});
    }
    return out;
}

inline double sample_quasi_static(const SystemParams& p, Stream& rng) {
    if (!std::isfinite(p.dephasing_T2star)) return 0.0;
    if (p.dephasing_shape == DephasingShape::Exponential) return rng.cauchy(1.0 / p.dephasing_T2star);
    return rng.normal(0.0, p.dephasing_sigma());
}

// ---------------------------------------------------------------------------
// master equation

struct MasterOptions {
    int cycles = 1;
    double ground_shift = 0.0;
    int state_stride = 0;  // store rho every n steps; 0 picks ~5 ps spacing
    ImperfectionConfig imperfections;
    RotationCalibration calibration;
};

struct MasterTrace {
    std::vector<double> t;                          // ns from start of the first cycle
    std::array<std::vector<double>, 4> population;  // per level, every step
    std::array<std::vector<double>, 4> emitted;     // cumulative emission probability per channel
    std::vector<double> state_t;
    std::vector<Mat4> states;
    Mat4 final_state = Mat4::Zero();
    double max_trace_drift = 0.0;
    double min_eigenvalue = 0.0;
    ChannelTable channels{};

    // Emission intensity (1/ns) of channel c at step i.
    double intensity(int c, std::size_t i) const {
        return channels[c].rate * population[idx(channels[c].from)][i];
    }
};

namespace detail {

inline void lindblad_dissipator(const Mat4& r, const ChannelTable& ch, Mat4& out) {
    for (const auto& c : ch) {
        if (c.rate == 0.0) continue;
        const int t = idx(c.from), g = idx(c.to);
        out(g, g) += c.rate * r(t, t);
        for (int k = 0; k < 4; ++k) {
            out(t, k) -= 0.5 * c.rate * r(t, k);
            out(k, t) -= 0.5 * c.rate * r(k, t);
        }
    }
}

inline Mat4 reset_state() {
    Mat4 r = Mat4::Zero();
    r(2, 2) = 0.5;
    r(3, 3) = 0.5;
    return r;
}

}  // namespace detail

inline MasterTrace evolve_master(const QuantumState& initial, const Sequence& seq, const SystemParams& p, double dt,
                                 const MasterOptions& opt = {}) {
    p.validate();
    initial.validate();
    const Timeline tl(seq, p);
    const double bound = max_master_step(p, tl.omega_max());
    if (dt <= 0.0) dt = bound;
    if (dt > bound * (1.0 + 1e-12))
        throw SimulationError("StepTooLarge", "dt exceeds 0.001 x min(1/Gamma, 2pi/Omega_max)");
    MasterTrace tr;
    tr.channels = build_channels(p);
    const auto& ch = tr.channels;
    const auto e = level_energies(p, opt.ground_shift);
    std::array<double, 4> h0{e[0], e[1], e[2] - tl.frame(), e[3] - tl.frame()};
    const int stride = opt.state_stride > 0 ? opt.state_stride : std::max(1, static_cast<int>(std::lround(0.005 / dt)));

    Mat4 rho = initial.density_matrix();
    std::array<double, 4> cum{0, 0, 0, 0};
    double min_eig = QuantumState::min_eigenvalue(rho);
    long step_count = 0;

    auto record = [&](double t, bool force_state) {
        tr.t.push_back(t);
        for (int l = 0; l < 4; ++l) tr.population[l].push_back(rho(l, l).real());
        for (int c = 0; c < 4; ++c) tr.emitted[c].push_back(cum[c]);
        if (force_state || step_count % stride == 0) {
            tr.state_t.push_back(t);
            tr.states.push_back(rho);
        }
        tr.max_trace_drift = std::max(tr.max_trace_drift, std::abs(rho.trace().real() - 1.0));
    };
    auto check_positive = [&](double t) {
        const double m = QuantumState::min_eigenvalue(rho);
        min_eig = std::min(min_eig, m);
        if (m < -1e-6)
            throw SimulationError("StepTooLarge", "density matrix lost positivity at t = " + std::to_string(t) + " ns");
    };

    record(0.0, true);
    for (int cyc = 0; cyc < opt.cycles; ++cyc) {
        const double base = cyc * tl.period();
        for (const auto& it : tl.items()) {
            if (it.instant >= 0) {
                const auto& q = tl.pulses()[it.instant];
                if (q.kind == PulseKind::Reset) {
                    rho = detail::reset_state();
                } else {
                    const Mat4 u = rotation_matrix(rotation_angle(q, opt.calibration), opt.imperfections.rotation_tilt);
                    rho = u * rho * u.adjoint();
                }
                record(base + it.a, true);
                continue;
            }
            const double len = it.b - it.a;
            if (len <= 0.0) continue;
            const long n = std::max(1L, static_cast<long>(std::ceil(len / dt - 1e-9)));
            const double h = len / n;
            // interaction-picture phases over a full and half step
            Mat4 ph_h, ph_half;
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) {
                    ph_h(i, j) = std::exp(cplx(0.0, (h0[i] - h0[j]) * h));
                    ph_half(i, j) = std::exp(cplx(0.0, (h0[i] - h0[j]) * 0.5 * h));
                }
            const Mat4 ph_back = ph_h.conjugate();
            auto vt = [&](double t, const Mat4* ph) {
                Mat4 v = Mat4::Zero();
                for (const auto& c : it.couplings) {
                    const cplx x = tl.coupling_value(c, t);
                    v(c.trion, c.ground) += x;
                    v(c.ground, c.trion) += std::conj(x);
                }
                if (ph) v = v.cwiseProduct(*ph);
                return v;
            };
            auto deriv = [&](const Mat4& r, const Mat4& v) {
                Mat4 d = cplx(0.0, -1.0) * (v * r - r * v);
                detail::lindblad_dissipator(r, ch, d);
                return d;
            };
            for (long s = 0; s < n; ++s) {
                const double t = it.a + s * h;
                const Mat4 v0 = vt(t, nullptr), v1 = vt(t + 0.5 * h, &ph_half), v2 = vt(t + h, &ph_h);
                const std::array<double, 4> rate0{
                    ch[0].rate * rho(2, 2).real(), ch[1].rate * rho(2, 2).real(),
                    ch[2].rate * rho(3, 3).real(), ch[3].rate * rho(3, 3).real()};
                const Mat4 k1 = deriv(rho, v0);
                const Mat4 k2 = deriv(rho + 0.5 * h * k1, v1);
                const Mat4 k3 = deriv(rho + 0.5 * h * k2, v1);
                const Mat4 k4 = deriv(rho + h * k3, v2);
                rho = (rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).cwiseProduct(ph_back);
                rho = 0.5 * (rho + rho.adjoint()).eval();
                ++step_count;
                const std::array<double, 4> rate1{
                    ch[0].rate * rho(2, 2).real(), ch[1].rate * rho(2, 2).real(),
                    ch[2].rate * rho(3, 3).real(), ch[3].rate * rho(3, 3).real()};
                for (int c = 0; c < 4; ++c) cum[c] += 0.5 * h * (rate0[c] + rate1[c]);
                for (int l = 0; l < 4; ++l)
                    if (rho(l, l).real() < -1e-6)
                        throw SimulationError("StepTooLarge", "negative population at t = " + std::to_string(base + t) + " ns");
                record(base + t + h, false);
                if (step_count % 64 == 0) check_positive(base + t + h);
            }
        }
    }
    check_positive(opt.cycles * tl.period());
    tr.final_state = rho;
    tr.min_eigenvalue = min_eig;
    return tr;
}

// Average of evolve_master over the quasi-static offset distribution.
inline MasterTrace evolve_master_ensemble(const QuantumState& initial, const Sequence& seq, const SystemParams& p,
                                          double dt, MasterOptions opt = {}, int nodes = 16) {
    MasterTrace acc;
    bool first = true;
    for (const auto& node : quasi_static_nodes(p, nodes)) {
        opt.ground_shift = node.shift;
        MasterTrace tr = evolve_master(initial, seq, p, dt, opt);
        if (first) {
            acc = tr;
            for (int l = 0; l < 4; ++l)
                for (auto& x : acc.population[l]) x *= node.weight;
            for (int c = 0; c < 4; ++c)
                for (auto& x : acc.emitted[c]) x *= node.weight;
            for (auto& s : acc.states) s *= node.weight;
            acc.final_state *= node.weight;
            first = false;
            continue;
        }
        for (int l = 0; l < 4; ++l)
            for (std::size_t i = 0; i < tr.t.size(); ++i) acc.population[l][i] += node.weight * tr.population[l][i];
        for (int c = 0; c < 4; ++c)
            for (std::size_t i = 0; i < tr.t.size(); ++i) acc.emitted[c][i] += node.weight * tr.emitted[c][i];
        for (std::size_t i = 0; i < tr.states.size(); ++i) acc.states[i] += node.weight * tr.states[i];
        acc.final_state += node.weight * tr.final_state;
        acc.max_trace_drift = std::max(acc.max_trace_drift, tr.max_trace_drift);
        acc.min_eigenvalue = std::min(acc.min_eigenvalue, tr.min_eigenvalue);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// quantum-jump trajectories

class TrajectorySimulator {
public:
    TrajectorySimulator(const Sequence& seq, const SystemParams& p, ImperfectionConfig imp = {},
                        TrajectoryOptions opt = {})
        : params_(p), imp_(imp), opt_(opt), tl_(seq, p), ch_(build_channels(p)) {
        p.validate();
        opt_.calibration.validate();
        if (opt_.cycles < 1) throw ConfigError("InvalidRun", "cycles per trajectory must be >= 1");
        dt_ = opt_.dt > 0.0 ? opt_.dt : 20.0 * max_master_step(p, tl_.omega_max());
        for (const auto& it : tl_.items()) {
            Grid g;
            if (it.instant < 0 && !it.couplings.empty() && it.b > it.a) {
                g.n = std::max(1L, static_cast<long>(std::ceil((it.b - it.a) / dt_ - 1e-9)));
                g.h = (it.b - it.a) / g.n;
                for (long node = 0; node <= 2 * g.n; ++node)
                    for (const auto& c : it.couplings) g.values.push_back(tl_.coupling_value(c, it.a + 0.5 * g.h * node));
            }
            grids_.push_back(std::move(g));
        }
        for (std::size_t k = 0; k < tl_.pulses().size(); ++k) {
            const auto& q = tl_.pulses()[k];
            rot_.push_back(q.kind == PulseKind::Rotate
                               ? rotation_matrix(rotation_angle(q, opt_.calibration), imp_.rotation_tilt)
                               : Mat4::Identity());
        }
    }

    const Timeline& timeline() const { return tl_; }
    const ChannelTable& channels() const { return ch_; }
    double step() const { return dt_; }
    int cycles() const { return opt_.cycles; }

    // Trajectory `index` covers global cycles [index * cycles, (index + 1) * cycles).
    TrajectoryResult run(std::uint64_t seed, std::uint64_t index) const {
        Run r(*this, seed, index);
        r.go();
        return std::move(r.result);
    }

private:
    struct Run {
        const TrajectorySimulator& s;
        Stream rng;
        std::uint64_t seed;
        TrajectoryResult result;
        Vec4 psi = Vec4::Zero();
        double r = 1.0;
        std::int64_t cycle = 0;
        std::array<cplx, 4> k{};  // diagonal of the effective Hamiltonian
        double gamma;

        Run(const TrajectorySimulator& sim, std::uint64_t sd, std::uint64_t index)
            : s(sim), rng(sd, {index}), seed(sd), gamma(sim.params_.decay_rate) {
            result.seed = rng.key();
            cycle = static_cast<std::int64_t>(index) * s.opt_.cycles;
        }

        void new_threshold() { r = rng.uniform_pos(); }

        void go() {
            int start = 0;
            switch (s.opt_.initial) {
                case InitialSpin::Random: start = rng.bernoulli(0.5) ? 1 : 0; break;
                case InitialSpin::Down: start = 0; break;
                case InitialSpin::Up: start = 1; break;
            }
            psi(start) = 1.0;
            new_threshold();
            for (int c = 0; c < s.opt_.cycles; ++c, ++cycle) {
                const double shift = sample_quasi_static(s.params_, rng);
                const auto e = level_energies(s.params_, shift);
                k = {cplx(e[0], 0.0), cplx(e[1], 0.0), cplx(e[2] - s.tl_.frame(), -0.5 * gamma),
                     cplx(e[3] - s.tl_.frame(), -0.5 * gamma)};
                for (const auto& it : s.tl_.items()) {
                    if (it.instant >= 0) instant(it);
                    else evolve(it);
                }
                end_of_cycle();
            }
        }

        void instant(const Timeline::Item& it) {
            const auto& q = s.tl_.pulses()[it.instant];
            if (q.kind == PulseKind::Reset) {
                psi.setZero();
                psi(rng.bernoulli(0.5) ? 3 : 2) = 1.0;
                new_threshold();
            } else {
                psi = s.rot_[it.instant] * psi;
            }
        }

        void end_of_cycle() {
            Stream diag(seed, {0xd1a9ULL, static_cast<std::uint64_t>(cycle)});
            const double n = psi.squaredNorm();
            const double pd = std::norm(psi(0)) / n, pu = std::norm(psi(1)) / n;
            int lvl;
            if (pd + pu < 1e-12) lvl = -1;
            else lvl = diag.uniform() * (pd + pu) < pd ? 0 : 1;
            result.spin_record.push_back({cycle, s.tl_.period(), lvl});
        }

        bool coupled_populated(const Timeline::Item& it) const {
            for (const auto& c : it.couplings)
                if (std::norm(psi(c.trion)) + std::norm(psi(c.ground)) > 0.0) return true;
            return false;
        }

        void evolve(const Timeline::Item& it) {
            double t = it.a;
            while (t < it.b) {
                if (it.couplings.empty() || !coupled_populated(it)) t = free_evolve(t, it.b);
                else t = driven_evolve(it, t);
            }
        }

        // Exact propagation without drives; returns the time reached.
        double free_evolve(double t, double b) {
            const double g = std::norm(psi(0)) + std::norm(psi(1));
            const double tr = std::norm(psi(2)) + std::norm(psi(3));
            double tend = b;
            bool jump = false;
            if (tr > 0.0 && r > g) {
                const double tj = t + std::log(tr / (r - g)) / gamma;
                if (tj < b) {
                    tend = std::max(tj, t);
                    jump = true;
                }
            }
            const double d = tend - t;
            for (int i = 0; i < 4; ++i) psi(i) *= std::exp(cplx(0.0, -1.0) * k[i] * d);
            if (jump) do_jump(tend);
            return tend;
        }

        // Coupling values (one per coupling of the item) at absolute time t.
        using CVals = std::array<cplx, 4>;
        CVals values_at(const Timeline::Item& it, double t) const {
            CVals v{};
            for (std::size_t c = 0; c < it.couplings.size(); ++c) v[c] = s.tl_.coupling_value(it.couplings[c], t);
            return v;
        }

        // Interaction-picture phase factors at s = h/2 and s = h: per coupling
        // e^{i (k_T - k_g) s} and per level e^{-i k s}.
        struct Phases {
            CVals half{}, full{}, half_inv{}, full_inv{};
            std::array<cplx, 4> undo{};
        };
        Phases phases(const Timeline::Item& it, double h) const {
            std::array<cplx, 4> fh, ff;
            Phases ph;
            for (int i = 0; i < 4; ++i) {
                fh[i] = std::exp(cplx(0.0, 1.0) * k[i] * (0.5 * h));
                ff[i] = fh[i] * fh[i];
                ph.undo[i] = std::exp(cplx(0.0, -1.0) * k[i] * h);
            }
            for (std::size_t c = 0; c < it.couplings.size(); ++c) {
                const auto& cp = it.couplings[c];
                ph.half[c] = fh[cp.trion] * std::exp(cplx(0.0, -1.0) * k[cp.ground] * (0.5 * h));
                ph.full[c] = ff[cp.trion] * std::exp(cplx(0.0, -1.0) * k[cp.ground] * h);
                ph.half_inv[c] = 1.0 / ph.half[c];
                ph.full_inv[c] = 1.0 / ph.full[c];
            }
            return ph;
        }

        // One interaction-picture RK4 step given couplings at s = 0, h/2, h.
        // Only coupled components move; the rest just pick up their phase.
        static Vec4 rk4(const Timeline::Item& it, const Vec4& y, double h, const CVals& v0, const CVals& vh,
                        const CVals& v1, const Phases& ph) {
            const std::size_t nc = it.couplings.size();
            const cplx mi(0.0, -1.0);
            if (nc == 1) {
                const int tr = it.couplings[0].trion, gr = it.couplings[0].ground;
                const cplx a0 = mi * v0[0], b0 = mi * std::conj(v0[0]);
                const cplx ah = mi * vh[0] * ph.half[0], bh = mi * std::conj(vh[0]) * ph.half_inv[0];
                const cplx a1 = mi * v1[0] * ph.full[0], b1 = mi * std::conj(v1[0]) * ph.full_inv[0];
                const cplx xt = y(tr), xg = y(gr);
                const cplx k1t = a0 * xg, k1g = b0 * xt;
                const cplx k2t = ah * (xg + 0.5 * h * k1g), k2g = bh * (xt + 0.5 * h * k1t);
                const cplx k3t = ah * (xg + 0.5 * h * k2g), k3g = bh * (xt + 0.5 * h * k2t);
                const cplx k4t = a1 * (xg + h * k3g), k4g = b1 * (xt + h * k3t);
                Vec4 out;
                for (int i = 0; i < 4; ++i) out(i) = y(i) * ph.undo[i];
                out(tr) = (xt + (h / 6.0) * (k1t + 2.0 * (k2t + k3t) + k4t)) * ph.undo[tr];
                out(gr) = (xg + (h / 6.0) * (k1g + 2.0 * (k2g + k3g) + k4g)) * ph.undo[gr];
                return out;
            }
            CVals a0, b0, ah, bh, a1, b1;  // -i v f and -i conj(v) / f at the three nodes
            for (std::size_t c = 0; c < nc; ++c) {
                a0[c] = mi * v0[c];
                b0[c] = mi * std::conj(v0[c]);
                ah[c] = mi * vh[c] * ph.half[c];
                bh[c] = mi * std::conj(vh[c]) * ph.half_inv[c];
                a1[c] = mi * v1[c] * ph.full[c];
                b1[c] = mi * std::conj(v1[c]) * ph.full_inv[c];
            }
            auto deriv = [&](const std::array<cplx, 4>& x, const CVals& av, const CVals& bv, std::array<cplx, 4>& out) {
                out = {};
                for (std::size_t c = 0; c < nc; ++c) {
                    const auto& cp = it.couplings[c];
                    out[cp.trion] += av[c] * x[cp.ground];
                    out[cp.ground] += bv[c] * x[cp.trion];
                }
            };
            std::array<cplx, 4> x{y(0), y(1), y(2), y(3)}, k1, k2, k3, k4, tmp;
            deriv(x, a0, b0, k1);
            for (int i = 0; i < 4; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
            deriv(tmp, ah, bh, k2);
            for (int i = 0; i < 4; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
            deriv(tmp, ah, bh, k3);
            for (int i = 0; i < 4; ++i) tmp[i] = x[i] + h * k3[i];
            deriv(tmp, a1, b1, k4);
            Vec4 out;
            for (int i = 0; i < 4; ++i)
                out(i) = (x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])) * ph.undo[i];
            return out;
        }

        Vec4 rk4_direct(const Timeline::Item& it, const Vec4& y, double t, double h) const {
            return rk4(it, y, h, values_at(it, t), values_at(it, t + 0.5 * h), values_at(it, t + h), phases(it, h));
        }

        // Advances psi from t0 by h; on a jump inside the step, bisects the
        // jump time, applies it and returns true with t0 updated.
        bool step_or_jump(const Timeline::Item& it, double& t0, double h, const Vec4& next) {
            if (next.squaredNorm() >= r) {
                psi = next;
                t0 += h;
                return false;
            }
            // Illinois regula falsi on |psi(s)|^2 - r, falling back to bisection.
            double lo = 0.0, hi = h, flo = psi.squaredNorm() - r, fhi = next.squaredNorm() - r;
            Vec4 at_hi = next;
            int side = 0;
            for (int b = 0; b < 60 && hi - lo > 1e-9; ++b) {
                double mid = (b % 4 == 3) ? 0.5 * (lo + hi) : (lo * fhi - hi * flo) / (fhi - flo);
                if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
                const Vec4 y = rk4_direct(it, psi, t0, mid);
                const double fm = y.squaredNorm() - r;
                if (fm < 0.0) {
                    hi = mid, fhi = fm, at_hi = y;
                    if (side == -1) flo *= 0.5;
                    side = -1;
                } else {
                    lo = mid, flo = fm;
                    if (side == 1) fhi *= 0.5;
                    side = 1;
                }
                if (std::abs(fm) < 1e-13) break;
            }
            psi = at_hi;
            t0 += hi;
            do_jump(t0);
            return true;
        }

        double driven_evolve(const Timeline::Item& it, double t) {
            const auto& grid = s.grids_[&it - s.tl_.items().data()];
            const double h = grid.h;
            // step index of the first grid node at or after t
            long j = static_cast<long>(std::ceil((t - it.a) / h - 1e-9));
            const double tj = it.a + j * h;
            if (tj - t > 1e-12 * h) {
                const double hp = std::min(tj, it.b) - t;
                double tt = t;
                if (step_or_jump(it, tt, hp, rk4_direct(it, psi, t, hp))) return tt;
                t = tt;
            }
            const Phases ph = phases(it, h);
            const std::size_t nc = it.couplings.size();
            auto cached = [&](long node) {
                CVals v{};
                for (std::size_t c = 0; c < nc; ++c) v[c] = grid.values[node * nc + c];
                return v;
            };
            for (; j < grid.n; ++j) {
                double t0 = it.a + j * h;
                const Vec4 next = rk4(it, psi, h, cached(2 * j), cached(2 * j + 1), cached(2 * j + 2), ph);
                if (step_or_jump(it, t0, h, next)) return t0;
            }
            return it.b;
        }

        void do_jump(double t) {
            const auto& ch = s.ch_;
            std::array<double, 4> w{};
            double total = 0.0;
            const bool erased = s.opt_.unraveling == Unraveling::Erased;
            for (int c = 0; c < 4; ++c) {
                w[c] = ch[c].rate * std::norm(psi(idx(ch[c].from)));
                total += w[c];
            }
            if (!(total > 0.0)) {
                new_threshold();
                return;
            }
            double u = rng.uniform() * total;
            int pick = 3;
            for (int c = 0; c < 4; ++c) {
                if (u < w[c]) {
                    pick = c;
                    break;
                }
                u -= w[c];
            }
            EmissionEvent ev;
            ev.t_phot = t;
            ev.cycle = cycle;
            ev.origin = s.tl_.origin_at(t);
            int landed;
            if (!erased) {
                ev.channel = pick;
                landed = idx(ch[pick].to);
                psi.setZero();
                psi(landed) = 1.0;
            } else {
                // parent trion from the pick; L+- = (L_red +- i L_blue)/sqrt2
                const Level parent = ch[pick].from;
                const int red = channel_index(parent, Level::SpinDown), blue = channel_index(parent, Level::SpinUp);
                const int sign = rng.bernoulli(0.5) ? 1 : -1;
                ev.channel = red;
                ev.outcome = sign;
                Vec4 v = Vec4::Zero();
                v(0) = std::sqrt(ch[red].rate);
                v(1) = cplx(0.0, sign) * std::sqrt(ch[blue].rate);
                psi = v / v.norm();
                landed = (ch[blue].rate == 0.0) ? 0 : (ch[red].rate == 0.0 ? 1 : -1);
            }
            result.events.push_back(ev);
            result.spin_record.push_back({cycle, t, landed});
            new_threshold();
        }
    };

    // Coupling values on the half-step grid of each driven interval.
    struct Grid {
        long n = 0;
        double h = 0.0;
        std::vector<cplx> values;
    };

    SystemParams params_;
    ImperfectionConfig imp_;
    TrajectoryOptions opt_;
    Timeline tl_;
    ChannelTable ch_;
    double dt_ = 0.0;
    std::vector<Mat4> rot_;
    std::vector<Grid> grids_;
};

inline TrajectoryResult run_trajectory(std::uint64_t seed, const Sequence& seq, const SystemParams& p,
                                       const ImperfectionConfig& imp, const TrajectoryOptions& opt = {}) {
    return TrajectorySimulator(seq, p, imp, opt).run(seed, 0);
}

struct BatchResult {
    std::vector<EmissionEvent> events;  // sorted by (cycle, t_phot)
    std::vector<SpinRecord> spin_record;
    std::int64_t cycles = 0;
};

// Runs trajectories [0, n); identical output for any thread count.
inline BatchResult run_batch(const TrajectorySimulator& sim, std::uint64_t seed, std::int64_t n, int threads = 1) {
    std::vector<TrajectoryResult> out(static_cast<std::size_t>(n));
    threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::int64_t>(1, n))));
    auto work = [&](int w) {
        for (std::int64_t i = w; i < n; i += threads) out[i] = sim.run(seed, static_cast<std::uint64_t>(i));
    };
    if (threads == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
        for (auto& th : pool) th.join();
    }
    BatchResult b;
    b.cycles = n * sim.cycles();
    for (auto& r : out) {
        b.events.insert(b.events.end(), r.events.begin(), r.events.end());
        b.spin_record.insert(b.spin_record.end(), r.spin_record.begin(), r.spin_record.end());
    }
    return b;
}

// ---------------------------------------------------------------------------
// closed-form oracles

// Rate-equation optical pumping from (P_down, P_T, P_up) = (1/2, 0, 1/2):
// P_down' = -W P_down + (G/2) P_T, P_T' = W P_down - G P_T, P_up' = (G/2) P_T.
inline std::array<double, 3> spin_pumping_populations(double t_pump, double w, const SystemParams& p) {
    if (w < 0.0) throw ConfigError("InvalidRate", "pump rate must be >= 0");
    if (t_pump <= 0.0 || w == 0.0) return {0.5, 0.0, 0.5};
    const double g = p.decay_rate;
    // exp(At) = e^{mt} [cosh(qt) I + sinh(qt)/q (A - m I)] for A = [[-W, G/2], [W, -G]]
    const double m = -0.5 * (w + g);
    const double q = 0.5 * std::sqrt(w * w + g * g);
    const double ep = std::exp((m + q) * t_pump), en = std::exp((m - q) * t_pump);
    const double ch = 0.5 * (ep + en), sh = 0.5 * (ep - en) / q;  // e^{mt} cosh, e^{mt} sinh / q
    const double pd = 0.5 * (ch + sh * (-w - m));
    const double pt = 0.5 * sh * w;
    return {pd, pt, 1.0 - pd - pt};
}

inline double spin_pumping_oracle(double t_pump, double w, const SystemParams& p) {
    return spin_pumping_populations(t_pump, w, p)[2];
}

// Dephasing envelope of a Ramsey fringe at delay tau.
inline double ramsey_envelope(double tau, const SystemParams& p) {
    if (!std::isfinite(p.dephasing_T2star)) return 1.0;
    const double x = std::abs(tau) / p.dephasing_T2star;
    return p.dephasing_shape == DephasingShape::Gaussian ? std::exp(-x * x) : std::exp(-x);
}

// Two R_x(theta) pulses on |up> separated by free precession; returns P(down).
inline double ramsey_oracle(double delta_tau, double theta, const SystemParams& p) {
    const double s = std::sin(theta);
    return 0.5 * s * s * (1.0 + ramsey_envelope(delta_tau, p) * std::cos(p.electron_splitting * delta_tau));
}

}  // namespace qdspin
