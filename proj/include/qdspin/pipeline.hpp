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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "analysis.hpp"
#include "detection.hpp"
#include "dynamics.hpp"
#include "io.hpp"
#include "pulse.hpp"
#include "rng.hpp"

namespace qdspin {

// One point of a (possibly 2-D) scan grid.
struct ScanPoint {
    int index = 0;
    std::vector<std::pair<std::string, double>> values;  // "pulse.field" -> value
    Sequence sequence;
    std::uint64_t seed = 0;  // trajectory seed of this point
};

// Grid points in row-major order (first scan line outermost).
inline std::vector<ScanPoint> scan_points(const Sequence& seq, std::uint64_t seed) {
    std::vector<ScanPoint> out;
    Sequence base = seq;
    base.scans.clear();
    auto label = [](const ScanSpec& s) { return s.pulse + "." + s.field; };
    auto make = [&](std::vector<std::pair<std::string, double>> vals, Sequence s) {
        ScanPoint p;
        p.index = static_cast<int>(out.size());
        p.values = std::move(vals);
        p.sequence = std::move(s);
        p.seed = derive_key(seed, {0x5ca9ULL, static_cast<std::uint64_t>(p.index)});
        out.push_back(std::move(p));
    };
    if (seq.scans.empty()) {
        make({}, base);
    } else if (seq.scans.size() == 1) {
        const auto& a = seq.scans[0];
        for (double v : a.values()) make({{label(a), v}}, base.with_value(a.pulse, a.field, v));
    } else {
        const auto& a = seq.scans[0];
        const auto& b = seq.scans[1];
        for (double va : a.values())
            for (double vb : b.values())
                make({{label(a), va}, {label(b), vb}}, base.with_value(a.pulse, a.field, va).with_value(b.pulse, b.field, vb));
    }
    return out;
}

inline BatchResult simulate_point(const RunConfig& cfg, const ScanPoint& pt, int threads = 1) {
    TrajectorySimulator sim(pt.sequence, cfg.params, cfg.imperfections, cfg.trajectory);
    return run_batch(sim, pt.seed, cfg.trajectories, threads);
}

inline std::uint64_t detection_seed(const ScanPoint& pt, std::size_t filter_index) {
    return derive_key(pt.seed, {0xde7ULL, static_cast<std::uint64_t>(filter_index)});
}

inline std::vector<TimeTag> detect_point(const RunConfig& cfg, const ScanPoint& pt, const BatchResult& b,
                                         std::size_t filter_index) {
    return detect(b.events, cfg.filters.at(filter_index).filter, cfg.detector, detection_seed(pt, filter_index),
                  pt.sequence, cfg.params, b.cycles);
}

inline std::vector<TimeTag> merge_tags(std::vector<TimeTag> a, const std::vector<TimeTag>& b) {
    a.insert(a.end(), b.begin(), b.end());
    sort_tags(a);
    return a;
}

inline std::vector<TimeTag> channel_subset(const std::vector<TimeTag>& tags, int channel) {
    return channel < 0 ? tags : select_channel(tags, channel);
}

// ---------------------------------------------------------------------------
// computational basis

struct Window {
    double a = 0.0, b = 0.0;  // ns
};

// Entanglement-window tags in cycles that hold a readout-window tag.
inline double conditioned_count(const std::vector<TimeTag>& tags, Window ent, Window readout,
                                const CycleWeights* w = nullptr) {
    const auto cond = cycles_with_tag(tags, readout.a, readout.b);
    double n = 0.0;
    for (const auto& t : tags)
        if (detail::in_window(t, ent.a, ent.b) && std::binary_search(cond.begin(), cond.end(), t.cycle))
            n += detail::weight_of(w, t.cycle);
    return n;
}

struct ComputationalInputs {
    // [red_down, blue_down, blue_up, red_up]
    std::array<std::vector<TimeTag>, 4> tags;
    std::array<std::int64_t, 4> cycles{};
};

struct ComputationalReport {
    std::array<double, 4> counts{};
    Estimate f1;
    BootstrapSummary bootstrap;
    double ratio_down = 0.0;  // N_red_down / N_blue_down
    double ratio_up = 0.0;    // N_blue_up / N_red_up
};

inline ComputationalReport computational_analysis(const ComputationalInputs& in, Window ent, Window readout,
                                                  int resamples = 200, std::uint64_t seed = 0) {
    ComputationalReport r;
    for (int i = 0; i < 4; ++i) r.counts[i] = conditioned_count(in.tags[i], ent, readout);
    if (std::all_of(in.tags.begin(), in.tags.end(), [&](const auto& t) { return cycles_with_tag(t, readout.a, readout.b).empty(); }))
        throw AnalysisError("NoConditioningEvents", "no conditioning events");
    r.f1 = computational_fidelity(r.counts[0], r.counts[1], r.counts[2], r.counts[3]);
    r.ratio_down = r.counts[1] > 0.0 ? r.counts[0] / r.counts[1] : std::numeric_limits<double>::infinity();
    r.ratio_up = r.counts[3] > 0.0 ? r.counts[2] / r.counts[3] : std::numeric_limits<double>::infinity();
    std::vector<double> vals;
    for (int b = 0; b < resamples; ++b) {
        std::array<double, 4> c{};
        for (int i = 0; i < 4; ++i) {
            const auto w = resample_cycles(in.cycles[i], seed, static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(i));
            c[i] = conditioned_count(in.tags[i], ent, readout, &w);
        }
        try {
            vals.push_back(computational_fidelity(c[0], c[1], c[2], c[3]).value);
        } catch (const AnalysisError&) {
        }
    }
    r.bootstrap = summarize(vals);
    return r;
}

// ---------------------------------------------------------------------------
// superposition basis

struct FringeDataset {
    std::vector<TimeTag> ent;      // tags histogrammed in the entanglement window
    std::vector<TimeTag> readout;  // tags searched for the conditioning click
    std::int64_t cycles = 0;
};

struct FringeSettings {
    Window ent{1.15, 1.7};
    Window readout;
    double bin_ps = 10.0;
    double omega = 0.0;        // rad/ns
    double jitter_fwhm = 0.0;  // ps
    FringeOptions options;
};

// Conditional rate relative to the unconditional rate, bin by bin.
inline Histogram fringe_histogram(const FringeDataset& d, const FringeSettings& s, const CycleWeights* w = nullptr) {
    const auto cond = conditional_histogram(d.ent, d.readout, s.readout.a, s.readout.b, s.bin_ps, s.ent.a, s.ent.b, w);
    const auto uncond = unconditional_histogram(d.ent, s.ent.a, s.ent.b, s.bin_ps, d.cycles, w);
    return relative_histogram(cond, uncond);
}

struct SuperpositionReport {
    Histogram plus_hist, minus_hist;
    FringeFit plus, minus;
    SuperpositionFidelity f2;
    BootstrapSummary bootstrap;
};

inline SuperpositionReport superposition_analysis(const FringeDataset& plus, const FringeDataset& minus,
                                                  const FringeSettings& s, int resamples = 200, std::uint64_t seed = 0) {
    SuperpositionReport r;
    r.plus_hist = fringe_histogram(plus, s);
    r.minus_hist = fringe_histogram(minus, s);
    r.plus = fit_fringes(r.plus_hist, s.omega, s.jitter_fwhm, s.options);
    r.minus = fit_fringes(r.minus_hist, s.omega, s.jitter_fwhm, s.options);
    r.f2 = superposition_fidelity(r.plus, r.minus);
    std::vector<double> vals;
    for (int b = 0; b < resamples; ++b) {
        const auto wp = resample_cycles(plus.cycles, seed, static_cast<std::uint64_t>(b), 10);
        const auto wm = resample_cycles(minus.cycles, seed, static_cast<std::uint64_t>(b), 11);
        try {
            const auto fp = fit_fringes(fringe_histogram(plus, s, &wp), s.omega, s.jitter_fwhm, s.options);
            const auto fm = fit_fringes(fringe_histogram(minus, s, &wm), s.omega, s.jitter_fwhm, s.options);
            vals.push_back(superposition_fidelity(fp, fm).F2);
        } catch (const AnalysisError&) {
        }
    }
    r.bootstrap = summarize(vals);
    return r;
}

}  // namespace qdspin
