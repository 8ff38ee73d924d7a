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
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "units.hpp"

namespace qdspin {

enum class PulseKind { Reset, Drive, Rotate };
enum class PulseShape { Square, Gaussian };

// Gaussian drive pulses are cut at +-3 FWHM around the peak.
inline constexpr double gaussian_support_fwhm = 3.0;

struct Pulse {
    std::string name;
    PulseKind kind = PulseKind::Drive;
    double t0 = 0.0;  // ns; start (square/reset) or peak (Gaussian); instant (rotate)
    PulseShape shape = PulseShape::Square;
    double duration = 0.0;  // ns, square and reset
    double fwhm = 0.0;      // ns, Gaussian
    int target = -1;        // channel 0..3, drive only
    double rabi_ghz = 0.0;  // peak Rabi frequency / 2pi
    double detuning_ghz = 0.0;  // drive detuning / 2pi
    std::optional<double> theta_pi;  // rotation angle in units of pi
    std::optional<double> power_mw;
    std::optional<double> detuning_nm;  // rotation laser detuning

    double rabi() const { return units::ghz_to_rad_per_ns(rabi_ghz); }
    double detuning() const { return units::ghz_to_rad_per_ns(detuning_ghz); }

    double support_start() const {
        if (kind == PulseKind::Drive && shape == PulseShape::Gaussian) return t0 - gaussian_support_fwhm * fwhm;
        return t0;
    }
    double support_end() const {
        if (kind == PulseKind::Rotate) return t0;
        if (kind == PulseKind::Drive && shape == PulseShape::Gaussian) return t0 + gaussian_support_fwhm * fwhm;
        return t0 + duration;
    }

    bool operator==(const Pulse&) const = default;
};

// Square: 1 on [t0, t0 + dur). Gaussian: peak-normalized, zero outside support.
inline double envelope(const Pulse& p, double t) {
    if (p.kind == PulseKind::Rotate) return 0.0;
    if (p.kind == PulseKind::Reset || p.shape == PulseShape::Square) return (t >= p.t0 && t < p.t0 + p.duration) ? 1.0 : 0.0;
    if (t < p.support_start() || t > p.support_end()) return 0.0;
    const double x = (t - p.t0) / p.fwhm;
    return std::exp(-4.0 * std::log(2.0) * x * x);
}

struct RotationCalibration {
    double coefficient = units::pi;   // rad / mW^alpha at the reference detuning
    double exponent = 0.77;
    double reference_detuning = 0.6;  // nm

    void validate() const {
        if (!(coefficient > 0.0)) throw ConfigError("InvalidCalibration", "calibration coefficient must be > 0");
        if (!(exponent > 0.0 && exponent <= 1.0)) throw ConfigError("InvalidCalibration", "calibration exponent must be in (0, 1]");
        if (!(reference_detuning > 0.0)) throw ConfigError("NonPositiveDetuning", "reference detuning must be > 0");
    }
};

inline double rotation_angle_from_power(double power_mw, const RotationCalibration& cal, double detuning_nm) {
    if (!(detuning_nm > 0.0)) throw ConfigError("NonPositiveDetuning", "rotation detuning must be > 0");
    if (power_mw < 0.0) throw ConfigError("NegativePower", "rotation power must be >= 0");
    return cal.coefficient * (cal.reference_detuning / detuning_nm) * std::pow(power_mw, cal.exponent);
}

// Rotation angle of a Rotate pulse, in radians.
inline double rotation_angle(const Pulse& p, const RotationCalibration& cal) {
    if (p.theta_pi) return *p.theta_pi * units::pi;
    return rotation_angle_from_power(p.power_mw.value_or(0.0), cal, p.detuning_nm.value_or(cal.reference_detuning));
}

struct ScanSpec {
    std::string pulse;
    std::string field;
    double from = 0.0;
    double to = 0.0;
    int steps = 1;

    double value(int i) const { return steps <= 1 ? from : from + (to - from) * i / (steps - 1); }
    std::vector<double> values() const {
        std::vector<double> v;
        for (int i = 0; i < steps; ++i) v.push_back(value(i));
        return v;
    }
    bool operator==(const ScanSpec&) const = default;
};

inline std::string format_number(double x) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

inline const char* target_name(int t) {
    static const char* names[] = {"T1", "T2", "T3", "T4"};
    return (t >= 0 && t < 4) ? names[t] : "?";
}

class Sequence {
public:
    double period = 25.0;
    std::vector<Pulse> pulses;
    std::vector<ScanSpec> scans;  // at most two (1-D or 2-D grid)

    bool operator==(const Sequence&) const = default;

    const Pulse* find(std::string_view name) const {
        for (const auto& p : pulses)
            if (p.name == name) return &p;
        return nullptr;
    }
    Pulse* find(std::string_view name) {
        for (auto& p : pulses)
            if (p.name == name) return &p;
        return nullptr;
    }

    // Sorts pulses and checks structural invariants.
    void validate() {
        if (!(period > 0.0)) throw SequenceError("SyntaxError", "period must be > 0");
        std::stable_sort(pulses.begin(), pulses.end(), [](const Pulse& a, const Pulse& b) { return a.t0 < b.t0; });
        for (const auto& p : pulses) {
            if (p.kind == PulseKind::Drive) {
                if (p.target < 0 || p.target > 3) throw SequenceError("UnknownTarget", "pulse '" + p.name + "' has no valid target");
                if (p.shape == PulseShape::Square && !(p.duration >= 0.0))
                    throw SequenceError("SyntaxError", "pulse '" + p.name + "': square drive needs dur >= 0");
                if (p.shape == PulseShape::Gaussian && !(p.fwhm > 0.0))
                    throw SequenceError("SyntaxError", "pulse '" + p.name + "': gaussian drive needs fwhm > 0");
            }
            if (p.kind == PulseKind::Rotate && (p.theta_pi.has_value() == p.power_mw.has_value()))
                throw SequenceError("SyntaxError", "pulse '" + p.name + "': rotate needs exactly one of theta_pi, power_mw");
            const bool closed_end = p.kind == PulseKind::Drive && p.shape == PulseShape::Gaussian;
            bool outside = p.support_start() < 0.0;
            if (p.kind != PulseKind::Drive) outside = outside || p.t0 >= period;
            if (p.kind != PulseKind::Rotate) outside = outside || (closed_end ? p.support_end() >= period : p.support_end() > period);
            if (outside)
                throw SequenceError("OutOfCycle", "pulse '" + p.name + "' does not fit in the cycle");
        }
        for (std::size_t i = 0; i < pulses.size(); ++i) {
            const auto& a = pulses[i];
            if (a.kind == PulseKind::Rotate) continue;
            for (std::size_t j = i + 1; j < pulses.size(); ++j) {
                const auto& b = pulses[j];
                if (b.kind == PulseKind::Rotate) continue;
                if (a.support_start() < b.support_end() && b.support_start() < a.support_end())
                    throw SequenceError("OverlapError", "pulses '" + a.name + "' and '" + b.name + "' overlap");
            }
        }
        if (scans.size() > 2) throw SequenceError("SyntaxError", "at most two scan lines are supported");
        for (const auto& s : scans) {
            if (!find(s.pulse)) throw SequenceError("UnknownTarget", "scan references unknown pulse '" + s.pulse + "'");
        }
    }

    // Copy with one field overwritten (scan point), re-validated.
    Sequence with_value(const std::string& pulse, const std::string& field, double v) const {
        Sequence s = *this;
        Pulse* p = s.find(pulse);
        if (!p) throw SequenceError("UnknownTarget", "unknown pulse '" + pulse + "'");
        set_field(*p, field, v);
        s.scans.clear();
        s.validate();
        return s;
    }

    static void set_field(Pulse& p, const std::string& field, double v) {
        if (field == "t0") p.t0 = v;
        else if (field == "dur") p.duration = v;
        else if (field == "fwhm") p.fwhm = v;
        else if (field == "rabi_ghz") p.rabi_ghz = v;
        else if (field == "detuning_ghz") p.detuning_ghz = v;
        else if (field == "theta_pi") { p.theta_pi = v; p.power_mw.reset(); }
        else if (field == "power_mw") { p.power_mw = v; p.theta_pi.reset(); }
        else if (field == "detuning_nm") p.detuning_nm = v;
        else throw SequenceError("SyntaxError", "unknown pulse field '" + field + "'");
    }

    std::string serialize() const {
        std::ostringstream os;
        os << "period " << format_number(period) << "\n";
        for (const auto& p : pulses) {
            os << "pulse " << p.name << " kind=";
            switch (p.kind) {
                case PulseKind::Reset: os << "reset"; break;
                case PulseKind::Drive: os << "drive"; break;
                case PulseKind::Rotate: os << "rotate"; break;
            }
            os << " t0=" << format_number(p.t0);
            if (p.kind == PulseKind::Drive) {
                os << " shape=" << (p.shape == PulseShape::Square ? "square" : "gauss");
                if (p.shape == PulseShape::Square) os << " dur=" << format_number(p.duration);
                else os << " fwhm=" << format_number(p.fwhm);
                os << " target=" << target_name(p.target) << " rabi_ghz=" << format_number(p.rabi_ghz);
                if (p.detuning_ghz != 0.0) os << " detuning_ghz=" << format_number(p.detuning_ghz);
            } else if (p.kind == PulseKind::Reset) {
                if (p.duration != 0.0) os << " dur=" << format_number(p.duration);
            } else {
                if (p.theta_pi) os << " theta_pi=" << format_number(*p.theta_pi);
                if (p.power_mw) os << " power_mw=" << format_number(*p.power_mw);
            }
            if (p.detuning_nm) os << " detuning_nm=" << format_number(*p.detuning_nm);
            os << "\n";
        }
        for (const auto& s : scans)
            os << "scan " << s.pulse << "." << s.field << " from=" << format_number(s.from) << " to="
               << format_number(s.to) << " steps=" << s.steps << "\n";
        return os.str();
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline double parse_double(std::string_view v, int line, std::string_view key) {
    double x = 0.0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), x);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
        throw SequenceError("SyntaxError", "invalid number '" + std::string(v) + "' for " + std::string(key), line);
    return x;
}

inline int parse_target(std::string_view v, const std::string& pulse) {
    if (v == "T1") return 0;
    if (v == "T2") return 1;
    if (v == "T3") return 2;
    if (v == "T4") return 3;
    throw SequenceError("UnknownTarget", "pulse '" + pulse + "' targets unknown transition '" + std::string(v) + "'");
}

}  // namespace detail

inline Sequence parse_sequence(std::string_view text) {
    using namespace detail;
    Sequence seq;
    bool have_period = false;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
        line = trim(line);
        if (line.empty()) continue;
        auto tok = split_ws(line);
        if (tok[0] == "period") {
            if (tok.size() != 2) throw SequenceError("SyntaxError", "expected 'period <ns>'", line_no);
            if (have_period) throw SequenceError("SyntaxError", "period given twice", line_no);
            seq.period = parse_double(tok[1], line_no, "period");
            have_period = true;
        } else if (tok[0] == "pulse") {
            if (tok.size() < 3) throw SequenceError("SyntaxError", "expected 'pulse <name> key=value ...'", line_no);
            Pulse p;
            p.name = std::string(tok[1]);
            if (p.name.find('=') != std::string::npos || p.name.find('.') != std::string::npos)
                throw SequenceError("SyntaxError", "invalid pulse name '" + p.name + "'", line_no);
            if (seq.find(p.name)) throw SequenceError("SyntaxError", "duplicate pulse name '" + p.name + "'", line_no);
            bool have_kind = false, have_t0 = false, have_shape = false;
            std::map<std::string, std::string_view, std::less<>> kv;
            for (std::size_t i = 2; i < tok.size(); ++i) {
                auto eq = tok[i].find('=');
                if (eq == std::string_view::npos || eq == 0 || eq + 1 == tok[i].size())
                    throw SequenceError("SyntaxError", "expected key=value, got '" + std::string(tok[i]) + "'", line_no);
                auto [it, fresh] = kv.emplace(std::string(tok[i].substr(0, eq)), tok[i].substr(eq + 1));
                if (!fresh) throw SequenceError("SyntaxError", "duplicate key '" + it->first + "'", line_no);
            }
            for (const auto& [k, v] : kv) {
                if (k == "kind") {
                    if (v == "reset") p.kind = PulseKind::Reset;
                    else if (v == "drive") p.kind = PulseKind::Drive;
                    else if (v == "rotate") p.kind = PulseKind::Rotate;
                    else throw SequenceError("SyntaxError", "unknown kind '" + std::string(v) + "'", line_no);
                    have_kind = true;
                } else if (k == "shape") {
                    if (v == "square") p.shape = PulseShape::Square;
                    else if (v == "gauss") p.shape = PulseShape::Gaussian;
                    else throw SequenceError("SyntaxError", "unknown shape '" + std::string(v) + "'", line_no);
                    have_shape = true;
                } else if (k == "target") {
                    p.target = parse_target(v, p.name);
                } else if (k == "t0") {
                    p.t0 = parse_double(v, line_no, k);
                    have_t0 = true;
                } else if (k == "dur" || k == "fwhm" || k == "rabi_ghz" || k == "detuning_ghz" || k == "theta_pi" ||
                           k == "power_mw" || k == "detuning_nm") {
                    Sequence::set_field(p, k, parse_double(v, line_no, k));
                } else {
                    throw SequenceError("SyntaxError", "unknown key '" + k + "'", line_no);
                }
            }
            if (!have_kind) throw SequenceError("SyntaxError", "pulse '" + p.name + "' lacks kind=", line_no);
            if (!have_t0) throw SequenceError("SyntaxError", "pulse '" + p.name + "' lacks t0=", line_no);
            if (p.kind != PulseKind::Drive && (have_shape || kv.count("fwhm") || kv.count("target") || kv.count("rabi_ghz")))
                throw SequenceError("SyntaxError", "shape/fwhm/target/rabi_ghz apply to drive pulses only", line_no);
            if (p.kind != PulseKind::Rotate && (kv.count("theta_pi") || kv.count("power_mw")))
                throw SequenceError("SyntaxError", "theta_pi/power_mw apply to rotate pulses only", line_no);
            if (kv.count("theta_pi") && kv.count("power_mw"))
                throw SequenceError("SyntaxError", "give either theta_pi or power_mw", line_no);
            if (p.kind == PulseKind::Rotate && kv.count("dur"))
                throw SequenceError("SyntaxError", "rotate pulses are instantaneous", line_no);
            if (p.kind == PulseKind::Drive && p.shape == PulseShape::Gaussian && kv.count("dur"))
                throw SequenceError("SyntaxError", "gaussian drives take fwhm=, not dur=", line_no);
            if (p.kind == PulseKind::Drive && p.shape == PulseShape::Square && kv.count("fwhm"))
                throw SequenceError("SyntaxError", "square drives take dur=, not fwhm=", line_no);
            if (p.kind == PulseKind::Drive && p.shape == PulseShape::Square && !kv.count("dur"))
                throw SequenceError("SyntaxError", "square drives need dur=", line_no);
            if (p.kind == PulseKind::Drive && p.shape == PulseShape::Gaussian && !kv.count("fwhm"))
                throw SequenceError("SyntaxError", "gaussian drives need fwhm=", line_no);
            seq.pulses.push_back(std::move(p));
        } else if (tok[0] == "scan") {
            if (tok.size() != 5) throw SequenceError("SyntaxError", "expected 'scan <pulse>.<field> from= to= steps='", line_no);
            ScanSpec s;
            auto dot = tok[1].find('.');
            if (dot == std::string_view::npos) throw SequenceError("SyntaxError", "scan target must be <pulse>.<field>", line_no);
            s.pulse = std::string(tok[1].substr(0, dot));
            s.field = std::string(tok[1].substr(dot + 1));
            bool f = false, t = false, n = false;
            for (std::size_t i = 2; i < 5; ++i) {
                auto eq = tok[i].find('=');
                if (eq == std::string_view::npos) throw SequenceError("SyntaxError", "expected key=value in scan", line_no);
                auto k = tok[i].substr(0, eq), v = tok[i].substr(eq + 1);
                if (k == "from") { s.from = parse_double(v, line_no, k); f = true; }
                else if (k == "to") { s.to = parse_double(v, line_no, k); t = true; }
                else if (k == "steps") {
                    double d = parse_double(v, line_no, k);
                    if (d < 1 || d != std::floor(d)) throw SequenceError("SyntaxError", "steps must be a positive integer", line_no);
                    s.steps = static_cast<int>(d);
                    n = true;
                } else throw SequenceError("SyntaxError", "unknown scan key '" + std::string(k) + "'", line_no);
            }
            if (!(f && t && n)) throw SequenceError("SyntaxError", "scan needs from=, to= and steps=", line_no);
            Pulse probe;
            try {
                Sequence::set_field(probe, s.field, 0.0);
            } catch (const SequenceError&) {
                throw SequenceError("SyntaxError", "unknown scan field '" + s.field + "'", line_no);
            }
            seq.scans.push_back(std::move(s));
        } else {
            throw SequenceError("SyntaxError", "unknown directive '" + std::string(tok[0]) + "'", line_no);
        }
    }
    seq.validate();
    return seq;
}

}  // namespace qdspin
