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
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "pulse.hpp"
#include "quantum_core.hpp"
#include "rng.hpp"
#include "units.hpp"

namespace qdspin {

enum class FilterShape { Gaussian, Lorentzian };

struct FilterConfig {
    double center_offset = 0.0;   // rad/ns from line center
    double bandwidth_fwhm = 1e9;  // rad/ns
    FilterShape shape = FilterShape::Gaussian;

    void validate() const {
        if (!(bandwidth_fwhm > 0.0)) throw ConfigError("InvalidFilter", "filter bandwidth must be > 0");
    }

    // Effectively transparent filter.
    static FilterConfig open() { return {}; }

    static FilterConfig from_nm(double center_offset_nm, double fwhm_nm, double lambda0_nm,
                                FilterShape shape = FilterShape::Gaussian) {
        FilterConfig f;
        f.center_offset = units::wavelength_offset_to_angular_frequency(center_offset_nm, lambda0_nm);
        f.bandwidth_fwhm = units::wavelength_offset_to_angular_frequency(fwhm_nm, lambda0_nm);
        f.shape = shape;
        return f;
    }
};

struct DetectorConfig {
    double efficiency = 1.0;
    double jitter_fwhm = 40.0;  // ps
    double dark_rate = 0.0;     // counts/ns per detector
    double laser_leakage = 0.0; // mean spurious laser tags per drive pulse
    int detectors = 1;          // 2 = polarisation-erasing beam splitter with two outputs

    void validate() const {
        if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw ConfigError("InvalidDetector", "efficiency must be in [0, 1]");
        if (!(jitter_fwhm >= 0.0)) throw ConfigError("InvalidDetector", "jitter_fwhm must be >= 0");
        if (!(dark_rate >= 0.0)) throw ConfigError("InvalidDetector", "dark_rate must be >= 0");
        if (!(laser_leakage >= 0.0)) throw ConfigError("InvalidDetector", "laser_leakage must be >= 0");
        if (detectors < 1 || detectors > 2) throw ConfigError("InvalidDetector", "detectors must be 1 or 2");
    }

    double jitter_sigma_ps() const { return jitter_fwhm / units::fwhm_per_sigma; }
};

struct TimeTag {
    std::int64_t cycle = 0;
    int channel = 0;
    std::int64_t t_ps = 0;
    std::int64_t truth = -1;  // index of the source EmissionEvent, -1 for dark/leakage; not serialized

    bool operator==(const TimeTag& o) const { return cycle == o.cycle && channel == o.channel && t_ps == o.t_ps; }
};

inline void sort_tags(std::vector<TimeTag>& tags) {
    std::sort(tags.begin(), tags.end(), [](const TimeTag& a, const TimeTag& b) {
        if (a.cycle != b.cycle) return a.cycle < b.cycle;
        if (a.t_ps != b.t_ps) return a.t_ps < b.t_ps;
        return a.channel < b.channel;
    });
}

inline double filter_transmission(double offset, const FilterConfig& f) {
    const double x = (offset - f.center_offset) / f.bandwidth_fwhm;
    if (f.shape == FilterShape::Gaussian) return std::exp(-4.0 * std::log(2.0) * x * x);
    return 1.0 / (1.0 + 4.0 * x * x);
}

inline double wavelength_offset_to_angular_frequency(double dlambda, double lambda0) {
    if (!(lambda0 > 0.0)) throw ConfigError("InvalidWavelength", "lambda0 must be > 0");
    return units::wavelength_offset_to_angular_frequency(dlambda, lambda0);
}

// Transmission of an emission event; erased events average their two colours.
inline double event_transmission(const EmissionEvent& e, const ChannelTable& ch, const FilterConfig& f) {
    if (e.outcome == 0) return filter_transmission(ch[e.channel].frequency_offset, f);
    const Level parent = ch[e.channel].from;
    const int red = channel_index(parent, Level::SpinDown), blue = channel_index(parent, Level::SpinUp);
    return 0.5 * (filter_transmission(ch[red].frequency_offset, f) + filter_transmission(ch[blue].frequency_offset, f));
}

// Drive pulse intensity profile sampler for leakage tags.
inline double sample_pulse_time(const Pulse& p, Stream& rng) {
    if (p.shape == PulseShape::Square) return p.t0 + p.duration * rng.uniform();
    // envelope^2 is Gaussian with sigma = fwhm / (2 sqrt(2 ln 2)) / sqrt(2)
    const double sigma = p.fwhm / units::fwhm_per_sigma / std::sqrt(2.0);
    for (;;) {
        const double t = rng.normal(p.t0, sigma);
        if (t >= p.support_start() && t <= p.support_end()) return t;
    }
}

// Detector chain. Streams are keyed by (seed, cycle, event index within cycle),
// so thinning decisions do not depend on jitter or on batch partitioning.
inline std::vector<TimeTag> detect(const std::vector<EmissionEvent>& events, const FilterConfig& filter,
                                   const DetectorConfig& det, std::uint64_t seed, const Sequence& seq,
                                   const SystemParams& params, std::int64_t n_cycles) {
    filter.validate();
    det.validate();
    const auto ch = build_channels(params);
    const double sigma = det.jitter_sigma_ps();
    std::vector<TimeTag> tags;
    tags.reserve(events.size());
    auto to_ps = [](double t_ns) { return static_cast<std::int64_t>(std::llround(t_ns * 1000.0)); };
    std::int64_t last_cycle = -1, in_cycle = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.cycle != last_cycle) {
            last_cycle = e.cycle;
            in_cycle = 0;
        }
        Stream rng(seed, {static_cast<std::uint64_t>(e.cycle), static_cast<std::uint64_t>(in_cycle++), 1});
        const double p = det.efficiency * event_transmission(e, ch, filter);
        if (!(rng.uniform() < p)) continue;
        int channel = 0;
        if (det.detectors == 2) {
            const bool pick = rng.bernoulli(0.5);
            channel = e.outcome != 0 ? (e.outcome > 0 ? 0 : 1) : (pick ? 1 : 0);
        }
        const double jitter = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
        tags.push_back({e.cycle, channel, to_ps(e.t_phot + jitter * 1e-3), static_cast<std::int64_t>(i)});
    }
    std::vector<const Pulse*> drives;
    for (const auto& p : seq.pulses)
        if (p.kind == PulseKind::Drive) drives.push_back(&p);
    if (det.dark_rate > 0.0 || det.laser_leakage > 0.0) {
        for (std::int64_t c = 0; c < n_cycles; ++c) {
            Stream rng(seed, {static_cast<std::uint64_t>(c), 0xda7cULL});
            for (int d = 0; d < det.detectors; ++d) {
                const auto n = rng.poisson(det.dark_rate * seq.period);
                for (std::uint64_t k = 0; k < n; ++k) tags.push_back({c, d, to_ps(seq.period * rng.uniform()), -1});
            }
            if (det.laser_leakage <= 0.0) continue;
            for (const Pulse* p : drives) {
                const auto n = rng.poisson(det.laser_leakage);
                const double tr = filter_transmission(ch[p->target].frequency_offset + p->detuning(), filter);
                for (std::uint64_t k = 0; k < n; ++k) {
                    const double t = sample_pulse_time(*p, rng);
                    const bool pass = rng.uniform() < tr;
                    const int d = det.detectors == 2 ? static_cast<int>(rng.below(2)) : 0;
                    const double jitter = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
                    if (pass) tags.push_back({c, d, to_ps(t + jitter * 1e-3), -1});
                }
            }
        }
    }
    sort_tags(tags);
    return tags;
}

// Balanced beam splitter: each tag goes to detector 0 or 1 with probability 1/2.
inline std::vector<TimeTag> split_beamsplitter(std::vector<TimeTag> tags, std::uint64_t seed) {
    std::int64_t last = -1, k = 0;
    for (auto& t : tags) {
        if (t.cycle != last) {
            last = t.cycle;
            k = 0;
        }
        Stream rng(seed, {static_cast<std::uint64_t>(t.cycle), static_cast<std::uint64_t>(k++), 0xb5ULL});
        t.channel = rng.bernoulli(0.5) ? 1 : 0;
    }
    sort_tags(tags);
    return tags;
}

inline std::vector<TimeTag> select_channel(const std::vector<TimeTag>& tags, int channel) {
    std::vector<TimeTag> out;
    for (const auto& t : tags)
        if (t.channel == channel) out.push_back(t);
    return out;
}

// ---------------------------------------------------------------------------
// wire format

inline void write_tags(std::ostream& os, const std::vector<TimeTag>& tags) {
    os << "cycle,channel,t_ps\n";
    for (const auto& t : tags) os << t.cycle << ',' << t.channel << ',' << t.t_ps << '\n';
}

inline std::vector<TimeTag> read_tags(std::istream& is) {
    std::vector<TimeTag> tags;
    std::string line;
    int n = 0;
    auto bad = [&](const std::string& why) {
        return ConfigError("MalformedCsv", "tag file line " + std::to_string(n) + ": " + why);
    };
    if (!std::getline(is, line)) throw ConfigError("MalformedCsv", "tag file line 1: missing header");
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "cycle,channel,t_ps") throw bad("expected header 'cycle,channel,t_ps'");
    while (std::getline(is, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::int64_t v[3];
        std::size_t pos = 0;
        for (int k = 0; k < 3; ++k) {
            const auto end = k < 2 ? line.find(',', pos) : line.size();
            if (end == std::string::npos) throw bad("expected 3 fields");
            const std::string_view f(line.data() + pos, end - pos);
            auto r = std::from_chars(f.data(), f.data() + f.size(), v[k]);
            if (r.ec != std::errc() || r.ptr != f.data() + f.size()) throw bad("invalid integer '" + std::string(f) + "'");
            pos = end + 1;
        }
        if (v[1] < 0) throw bad("negative channel");
        TimeTag t{v[0], static_cast<int>(v[1]), v[2], -1};
        if (!tags.empty()) {
            const auto& p = tags.back();
            if (t.cycle < p.cycle || (t.cycle == p.cycle && t.t_ps < p.t_ps)) throw bad("rows not sorted by (cycle, t_ps)");
        }
        tags.push_back(t);
    }
    return tags;
}

}  // namespace qdspin
