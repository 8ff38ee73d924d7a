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

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "qdspin/analysis.hpp"
#include "qdspin/io.hpp"
#include "qdspin/pipeline.hpp"

using namespace qdspin;
using units::two_pi;

namespace {

// Independent Poisson clicks on detectors 0 and 1 inside [1.15, 1.7) ns.
std::vector<TimeTag> poisson_tags(std::int64_t cycles, double mean, std::uint64_t seed) {
    std::vector<TimeTag> tags;
    Stream rng(seed);
    for (std::int64_t c = 0; c < cycles; ++c) {
        for (int d = 0; d < 2; ++d) {
            const auto n = rng.poisson(mean);
            for (std::uint64_t k = 0; k < n; ++k) tags.push_back({c, d, 1150 + static_cast<std::int64_t>(rng.below(550)), -1});
        }
    }
    sort_tags(tags);
    return tags;
}

// Photon times (ps) from 1 + v(t) cos(w t + phi) on [a, b) ns, with Gaussian jitter.
struct FringeSample {
    std::vector<double> t_ns;
    std::vector<double> jitter_ps;
};

FringeSample fringe_sample(std::size_t n, double omega, double phi, double a, double b, std::uint64_t seed,
                           double v0 = 1.0, double v1 = 1.0) {
    FringeSample s;
    Stream rng(seed);
    while (s.t_ns.size() < n) {
        const double t = a + (b - a) * rng.uniform();
        const double v = v0 + (v1 - v0) * (t - a) / (b - a);
        if (2.0 * rng.uniform() < 1.0 + v * std::cos(omega * t + phi)) {
            s.t_ns.push_back(t);
            s.jitter_ps.push_back(rng.normal());
        }
    }
    return s;
}

Histogram fringe_counts(const FringeSample& s, double jitter_fwhm, double a, double b, double bin_ps = 10.0) {
    std::vector<TimeTag> tags;
    const double sigma = jitter_fwhm / units::fwhm_per_sigma;
    for (std::size_t i = 0; i < s.t_ns.size(); ++i)
        tags.push_back({0, 0, std::llround(s.t_ns[i] * 1000.0 + sigma * s.jitter_ps[i]), -1});
    Histogram h = unconditional_histogram(tags, a, b, bin_ps, 1);
    h.values.clear();
    h.exposure.clear();
    h.normalization = Normalization::Raw;
    return h;
}

double phase_gap(double a, double b) { return std::abs(wrap_2pi(a - b) - units::pi); }

}  // namespace

TEST(G2, PoissonStreamsGiveOne) {
    for (double mean : {0.01, 0.03, 0.1}) {
        const auto tags = poisson_tags(1500000, mean, static_cast<std::uint64_t>(mean * 1000));
        const auto g = g2_zero(tags, 1.15, 1.7, 1500000);
        EXPECT_NEAR(g.value, 1.0, 3.0 * g.error) << mean;
        EXPECT_GE(g.side_mean, 100.0);
    }
}

TEST(G2, SingleClickPerCycleIsAntibunched) {
    std::vector<TimeTag> tags;
    Stream rng(8);
    for (std::int64_t c = 0; c < 100000; ++c) tags.push_back({c, static_cast<int>(rng.below(2)), 1300, -1});
    const auto g = g2_zero(tags, 1.15, 1.7, 100000);
    EXPECT_LT(g.value, 0.05);
}

TEST(G2, InsufficientCounts) {
    const auto tags = poisson_tags(5000, 0.01, 1);
    try {
        g2_zero(tags, 1.15, 1.7, 5000);
        FAIL();
    } catch (const AnalysisError& e) {
        EXPECT_EQ(e.kind(), "InsufficientCounts");
    }
}

TEST(Conditional, EmptyReadoutHasNoConditioningEvents) {
    const auto ent = poisson_tags(1000, 0.5, 2);
    try {
        conditional_histogram(ent, {}, 9.0, 14.0, 10.0, 1.15, 1.7);
        FAIL();
    } catch (const AnalysisError& e) {
        EXPECT_EQ(e.kind(), "NoConditioningEvents");
        EXPECT_STREQ(e.what(), "no conditioning events");
    }
}

TEST(Conditional, VacuousConditioningEqualsUnconditional) {
    const auto ent = poisson_tags(2000, 0.5, 3);
    std::vector<TimeTag> ro;
    for (std::int64_t c = 0; c < 2000; ++c) ro.push_back({c, 0, 10000, -1});
    const auto h = conditional_histogram(ent, ro, 9.0, 14.0, 10.0, 1.15, 1.7);
    const auto u = unconditional_histogram(ent, 1.15, 1.7, 10.0, 2000);
    EXPECT_EQ(h.counts, u.counts);
    EXPECT_EQ(h.values, u.values);
}

TEST(Conditional, LinearInConditioningCycles) {
    const auto ent = poisson_tags(3000, 0.5, 4);
    std::vector<TimeTag> ro, even, odd;
    Stream rng(5);
    for (std::int64_t c = 0; c < 3000; ++c) {
        if (!rng.bernoulli(0.4)) continue;
        TimeTag t{c, 0, 10000, -1};
        ro.push_back(t);
        (c % 2 ? odd : even).push_back(t);
    }
    const auto all = conditional_histogram(ent, ro, 9.0, 14.0, 10.0, 1.15, 1.7);
    const auto a = conditional_histogram(ent, even, 9.0, 14.0, 10.0, 1.15, 1.7);
    const auto b = conditional_histogram(ent, odd, 9.0, 14.0, 10.0, 1.15, 1.7);
    for (std::size_t i = 0; i < all.bins(); ++i) EXPECT_EQ(all.counts[i], a.counts[i] + b.counts[i]);
    EXPECT_EQ(all.triggers, a.triggers + b.triggers);
}

TEST(ComputationalFidelity, Examples) {
    EXPECT_DOUBLE_EQ(computational_fidelity(100, 0, 80, 0).value, 1.0);
    EXPECT_NEAR(computational_fidelity(16, 1, 29, 1).value, 0.954, 5e-4);  // quoted to three places
    EXPECT_DOUBLE_EQ(computational_fidelity(50, 50, 50, 50).value, 0.5);
    EXPECT_THROW(computational_fidelity(0, 0, 5, 5), AnalysisError);
}

TEST(FringeFit, NoiselessFullVisibility) {
    const double w = two_pi / 0.066;
    Histogram h = detail::empty_histogram(0.0, 0.66, 10.0);
    for (std::size_t i = 0; i < h.bins(); ++i)
        h.counts[i] = std::llround(1e6 * (1.0 + std::cos(w * h.center_ns(i) + 0.4)));
    const auto f = fit_fringes(h, w, 0.0);
    EXPECT_NEAR(f.visibility_raw, 1.0, 0.01);
    EXPECT_DOUBLE_EQ(f.visibility_deconvolved, f.visibility_raw);
    EXPECT_NEAR(f.phase, 0.4, 1e-3);
    EXPECT_LT(f.jacobian_check, 1e-4);
}

TEST(FringeFit, JitterAttenuatesAt66ps) {
    const double w = two_pi / 0.066;
    EXPECT_NEAR(jitter_attenuation(w, 40.0), 0.2705, 5e-4);
    const auto s = fringe_sample(100000, w, 0.0, 0.0, 1.0, 21);
    const auto f = fit_fringes(fringe_counts(s, 40.0, 0.1, 0.9), w, 40.0);
    EXPECT_NEAR(f.visibility_raw, 0.27, 0.02);
    EXPECT_NEAR(f.visibility_deconvolved, 1.0, 0.08);
    EXPECT_LE(f.visibility_raw, f.visibility_deconvolved);
}

TEST(FringeFit, DeconvolutionRoundTrip) {
    for (double period : {0.110, 0.066}) {
        const double w = two_pi / period;
        for (double jitter : {0.0, 20.0, 40.0}) {
            for (double v : {0.5, 0.9}) {
                const auto s = fringe_sample(100000, w, 1.0, 0.0, 1.0, 31 + static_cast<std::uint64_t>(jitter), v, v);
                const auto f = fit_fringes(fringe_counts(s, jitter, 0.1, 0.9), w, jitter);
                EXPECT_NEAR(f.visibility_deconvolved, v, 0.08 * v) << period << " " << jitter << " " << v;
            }
        }
    }
}

TEST(FringeFit, AttenuationHoldsWhenVisibilityDrifts) {
    // visibility rising across the window, same photons with and without jitter
    for (double period : {0.110, 0.066}) {
        const double w = two_pi / period;
        const auto s = fringe_sample(1000000, w, 0.3, 1.0, 1.8, 41, 0.6, 1.0);
        const auto f0 = fit_fringes(fringe_counts(s, 0.0, 1.15, 1.7), w, 0.0);
        const auto f1 = fit_fringes(fringe_counts(s, 40.0, 1.15, 1.7), w, 40.0);
        const double att = jitter_attenuation(w, 40.0);
        EXPECT_NEAR(f1.visibility_raw / f0.visibility_raw, att, 0.03 * att) << period;
    }
}

TEST(FringeFit, OpposedPhases) {
    const double w = two_pi / 0.066;
    const auto plus = fringe_sample(100000, w, 0.5 * units::pi, 0.0, 1.0, 51);
    const auto minus = fringe_sample(100000, w, 1.5 * units::pi, 0.0, 1.0, 52);
    const auto fp = fit_fringes(fringe_counts(plus, 40.0, 0.1, 0.9), w, 40.0);
    const auto fm = fit_fringes(fringe_counts(minus, 40.0, 0.1, 0.9), w, 40.0);
    EXPECT_LT(phase_gap(fp.phase, fm.phase), 0.15);
    EXPECT_NEAR(superposition_fidelity(fp, fm).F2, 1.0, 0.05);
}

TEST(FringeFit, FreeFrequencyRecoversPeriod) {
    const double w = two_pi / 0.110;
    const auto s = fringe_sample(200000, w, 0.0, 0.0, 1.0, 61);
    const auto f = fit_fringes(fringe_counts(s, 40.0, 0.1, 0.9), 0.98 * w, 40.0, FringeOptions{true});
    EXPECT_NEAR(f.frequency, w, 0.005 * w);
}

TEST(FringeFit, PeriodUnderResolved) {
    const Histogram h = detail::empty_histogram(0.0, 1.0, 20.0);
    try {
        fit_fringes(h, two_pi / 0.066, 0.0);
        FAIL();
    } catch (const AnalysisError& e) {
        EXPECT_EQ(e.kind(), "PeriodUnderResolved");
    }
}

TEST(SuperpositionFidelity, Examples) {
    FringeFit p, m;
    p.phase = 0.3;
    m.phase = 0.3 + units::pi;
    p.visibility_deconvolved = m.visibility_deconvolved = 1.0;
    EXPECT_DOUBLE_EQ(superposition_fidelity(p, m).F2, 1.0);
    p.visibility_deconvolved = m.visibility_deconvolved = 0.0;
    EXPECT_DOUBLE_EQ(superposition_fidelity(p, m).F2, 0.5);
    p.visibility_deconvolved = m.visibility_deconvolved = 0.52;
    EXPECT_NEAR(superposition_fidelity(p, m).F2, 0.76, 1e-12);
    p.visibility_deconvolved = m.visibility_deconvolved = 1.3;
    const auto c = superposition_fidelity(p, m);
    EXPECT_TRUE(c.clamped);
    EXPECT_EQ(c.F2, 1.0);
    m.phase = p.phase + 2.0;
    EXPECT_THROW(superposition_fidelity(p, m), AnalysisError);
}

TEST(EntanglementBound, Examples) {
    EXPECT_DOUBLE_EQ(entanglement_bound(1.0, 1.0).value, 1.0);
    EXPECT_NEAR(entanglement_bound(0.9287, 0.5885).value, 0.7586, 1e-12);
    EXPECT_NEAR(entanglement_bound(0.8413, 0.7601).value, 0.8007, 1e-12);
    EXPECT_NEAR(entanglement_bound(0.9, 0.8, 0.03, 0.04).error, 0.025, 1e-12);
    EXPECT_THROW(entanglement_bound(1.2, 0.5), AnalysisError);
}

TEST(Bootstrap, DeterministicResamples) {
    const auto a = resample_cycles(1000, 7, 3), b = resample_cycles(1000, 7, 3), c = resample_cycles(1000, 7, 4);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    EXPECT_EQ(std::accumulate(a.begin(), a.end(), 0u), 1000u);
    const auto s = bootstrap_cycles(1000, 50, 7, [](const CycleWeights& w) { return static_cast<double>(w[0]); });
    EXPECT_EQ(s.valid, 50);
    EXPECT_NEAR(s.mean, 1.0, 0.5);
}

namespace {

struct FringeRun {
    RunConfig cfg;
    std::vector<ScanPoint> pts;
    std::vector<BatchResult> batches;
};

// Both superposition-basis projections of the 110 ps preset at the given tilt.
FringeRun fringe_run(double tilt, std::int64_t trajectories) {
    FringeRun r;
    r.cfg = load_run_config(std::string(QDSPIN_PRESET_DIR) + "/fig5_superposition_5t.cfg");
    r.cfg.trajectories = trajectories;
    r.cfg.imperfections.rotation_tilt = tilt;
    const int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    r.pts = scan_points(r.cfg.sequence, *r.cfg.seed);
    for (const auto& pt : r.pts) r.batches.push_back(simulate_point(r.cfg, pt, threads));
    return r;
}

FringeDataset fringe_data(const FringeRun& r, int i, double jitter) {
    DetectorConfig det = r.cfg.detector;
    det.jitter_fwhm = jitter;
    const auto tags = detect(r.batches[i].events, r.cfg.filters.front().filter, det, detection_seed(r.pts[i], 0),
                             r.pts[i].sequence, r.cfg.params, r.batches[i].cycles);
    return {select_channel(tags, 0), tags, r.batches[i].cycles};
}

FringeSettings settings_110ps(double jitter) {
    FringeSettings s;
    s.readout = {4.1, 8.0};
    s.omega = two_pi / 0.110;
    s.jitter_fwhm = jitter;
    return s;
}

}  // namespace

TEST(EndToEnd, SuperpositionFidelityDoesNotRiseWithJitterOrTilt) {
    // Deconvolution undoes jitter in expectation and small tilts cost F2 only at
    // second order, so both directions are checked within two standard errors.
    const double tilts[3] = {0.0, 0.1, 0.2}, jitters[3] = {0.0, 20.0, 40.0};
    double f2[3][3], err[3][3];
    for (int a = 0; a < 3; ++a) {
        const auto run = fringe_run(tilts[a], 500);
        for (int j = 0; j < 3; ++j) {
            const auto r = superposition_analysis(fringe_data(run, 0, jitters[j]), fringe_data(run, 1, jitters[j]),
                                                  settings_110ps(jitters[j]), 0);
            f2[a][j] = r.f2.F2;
            err[a][j] = r.f2.error;
        }
    }
    for (int a = 0; a < 3; ++a) {
        for (int j = 0; j < 3; ++j) {
            if (j + 1 < 3)
                EXPECT_LE(f2[a][j + 1], f2[a][j] + 2.0 * std::hypot(err[a][j], err[a][j + 1]))
                    << "tilt " << tilts[a] << " jitter " << jitters[j + 1];
            if (a + 1 < 3)
                EXPECT_LE(f2[a + 1][j], f2[a][j] + 2.0 * std::hypot(err[a][j], err[a + 1][j]))
                    << "jitter " << jitters[j] << " tilt " << tilts[a + 1];
        }
    }
}

TEST(EndToEnd, LargeTiltLowersVisibilityAndBreaksPhaseOpposition) {
    const auto s = settings_110ps(0.0);
    FringeFit f[2][2];
    for (int a = 0; a < 2; ++a) {
        const auto run = fringe_run(a == 0 ? 0.0 : 0.7, 1000);
        for (int i = 0; i < 2; ++i) f[a][i] = fit_fringes(fringe_histogram(fringe_data(run, i, 0.0), s), s.omega, 0.0);
    }
    const double v0 = 0.5 * (f[0][0].visibility_deconvolved + f[0][1].visibility_deconvolved);
    const double v1 = 0.5 * (f[1][0].visibility_deconvolved + f[1][1].visibility_deconvolved);
    const double e = 0.5 * std::sqrt(std::pow(f[0][0].deconvolved_error, 2) + std::pow(f[0][1].deconvolved_error, 2) +
                                     std::pow(f[1][0].deconvolved_error, 2) + std::pow(f[1][1].deconvolved_error, 2));
    EXPECT_LT(v1, v0 - 2.0 * e);
    EXPECT_LT(phase_gap(f[0][0].phase, f[0][1].phase), 0.15);
    try {
        superposition_fidelity(f[1][0], f[1][1]);
        FAIL();
    } catch (const AnalysisError& ex) {
        EXPECT_EQ(ex.kind(), "PhaseInconsistent");
    }
}
