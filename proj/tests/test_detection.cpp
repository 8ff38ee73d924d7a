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
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "qdspin/detection.hpp"

using namespace qdspin;
using units::two_pi;

namespace {

SystemParams params(double de_ghz = 16.0) {
    SystemParams p;
    p.electron_splitting = two_pi * de_ghz;
    p.hole_splitting = two_pi * 28.26;
    return p;
}

// One red photon per cycle at a fixed time.
std::vector<EmissionEvent> fixed_events(std::int64_t n, double t) {
    std::vector<EmissionEvent> ev(static_cast<std::size_t>(n));
    for (std::int64_t c = 0; c < n; ++c) {
        ev[c].t_phot = t;
        ev[c].cycle = c;
        ev[c].channel = 0;
    }
    return ev;
}

const Sequence& entangling_sequence() {
    static const Sequence s = parse_sequence("period 25\npulse e kind=drive t0=1 shape=gauss fwhm=0.3 target=T1 rabi_ghz=1.5657");
    return s;
}

std::string kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return std::string(e.kind()) + ": " + e.what();
    }
    return "none";
}

}  // namespace

TEST(Filter, PeakAndHalfMaximum) {
    for (auto shape : {FilterShape::Gaussian, FilterShape::Lorentzian}) {
        FilterConfig f{3.0, 2.0, shape};
        EXPECT_DOUBLE_EQ(filter_transmission(3.0, f), 1.0);
        EXPECT_NEAR(filter_transmission(4.0, f), 0.5, 1e-12);
        EXPECT_NEAR(filter_transmission(2.0, f), 0.5, 1e-12);
    }
}

TEST(Filter, GratingFilterLeakageAtBothFields) {
    const auto f = FilterConfig::from_nm(0.0, 0.12, 1550.0);
    const double blue_9t = wavelength_offset_to_angular_frequency(0.125, 1550.0);
    const double blue_5t = wavelength_offset_to_angular_frequency(0.065, 1550.0);
    EXPECT_NEAR(filter_transmission(blue_9t, f), 0.04937, 5e-5);
    EXPECT_NEAR(filter_transmission(blue_5t, f), 0.44330, 5e-5);
}

TEST(Filter, RedFilterRejectsBlueBetterAtLargerSplitting) {
    const auto f = FilterConfig::from_nm(0.0, 0.12, 1550.0);
    double prev = 2.0;
    for (double ghz = 1.0; ghz <= 30.0; ghz += 0.5) {
        const auto p = params(ghz);
        const auto ch = build_channels(p);
        FilterConfig red = f;
        red.center_offset = ch[0].frequency_offset;
        const double t = filter_transmission(ch[1].frequency_offset, red);
        EXPECT_LT(t, prev) << ghz;
        prev = t;
    }
}

TEST(Wavelength, OffsetsToAngularFrequency) {
    EXPECT_EQ(wavelength_offset_to_angular_frequency(0.0, 1550.0), 0.0);
    EXPECT_NEAR(wavelength_offset_to_angular_frequency(0.125, 1550.0) / two_pi, 15.598, 1e-3);
    EXPECT_NEAR(wavelength_offset_to_angular_frequency(0.065, 1550.0) / two_pi, 8.111, 1e-3);
    EXPECT_THROW(wavelength_offset_to_angular_frequency(0.1, 0.0), ConfigError);
}

TEST(Detect, JitterWidth) {
    DetectorConfig det;
    const auto tags = detect(fixed_events(100000, 5.0), FilterConfig::open(), det, 1, entangling_sequence(), params(), 100000);
    ASSERT_EQ(tags.size(), 100000u);
    double s = 0.0, s2 = 0.0;
    for (const auto& t : tags) {
        const double x = static_cast<double>(t.t_ps - 5000);
        s += x;
        s2 += x * x;
    }
    const double n = static_cast<double>(tags.size());
    const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
    EXPECT_NEAR(sd, 16.99, 0.2);
}

TEST(Detect, EfficiencyThinning) {
    DetectorConfig det;
    det.efficiency = 0.3;
    const auto tags = detect(fixed_events(100000, 5.0), FilterConfig::open(), det, 2, entangling_sequence(), params(), 100000);
    EXPECT_NEAR(static_cast<double>(tags.size()), 30000.0, 3.0 * std::sqrt(1e5 * 0.3 * 0.7));
}

TEST(Detect, ZeroEfficiencyLeavesOnlyLeakageAndDark) {
    DetectorConfig det;
    det.efficiency = 0.0;
    det.laser_leakage = 0.5;
    det.dark_rate = 0.001;
    const auto tags = detect(fixed_events(20000, 5.0), FilterConfig::open(), det, 3, entangling_sequence(), params(), 20000);
    EXPECT_GT(tags.size(), 0u);
    std::size_t leak = 0;
    for (const auto& t : tags) {
        EXPECT_EQ(t.truth, -1);
        if (t.t_ps >= 100 && t.t_ps <= 1900) ++leak;
    }
    // Poisson(0.5) per pulse, inside the pulse support, plus 25 ns x 1e-3 dark counts per cycle
    EXPECT_NEAR(static_cast<double>(leak), 10000.0 + 20000 * 0.025 * 1.8 / 25.0, 4.0 * std::sqrt(10500.0));
    EXPECT_NEAR(static_cast<double>(tags.size() - leak), 20000 * 0.025 * 23.2 / 25.0, 4.0 * std::sqrt(500.0));
}

TEST(Detect, NeverTwoTagsFromOneEvent) {
    std::vector<EmissionEvent> ev;
    for (std::int64_t c = 0; c < 5000; ++c)
        for (int k = 0; k < 3; ++k) ev.push_back({1.0 + 0.5 * k, c, k % 4, 0, Origin::Entanglement});
    DetectorConfig det;
    det.efficiency = 0.7;
    det.detectors = 2;
    const auto tags = detect(ev, FilterConfig::open(), det, 4, entangling_sequence(), params(), 5000);
    std::set<std::int64_t> seen;
    std::map<std::int64_t, int> per_cycle;
    for (const auto& t : tags) {
        ASSERT_GE(t.truth, 0);
        EXPECT_TRUE(seen.insert(t.truth).second);
        EXPECT_EQ(ev[t.truth].cycle, t.cycle);
        ++per_cycle[t.cycle];
    }
    for (const auto& [c, n] : per_cycle) EXPECT_LE(n, 3);
}

TEST(Detect, ErasedOutcomeSelectsDetector) {
    std::vector<EmissionEvent> ev;
    for (std::int64_t c = 0; c < 1000; ++c) ev.push_back({1.2, c, 0, c % 2 ? 1 : -1, Origin::Entanglement});
    DetectorConfig det;
    det.detectors = 2;
    const auto tags = detect(ev, FilterConfig::open(), det, 5, entangling_sequence(), params(), 1000);
    for (const auto& t : tags) EXPECT_EQ(t.channel, ev[t.truth].outcome > 0 ? 0 : 1);
}

TEST(Detect, ErasedTransmissionAveragesColours) {
    const auto p = params();
    const auto ch = build_channels(p);
    FilterConfig red{ch[0].frequency_offset, two_pi * 10.0, FilterShape::Gaussian};
    const EmissionEvent e{1.0, 0, 0, 1, Origin::Entanglement};
    EXPECT_NEAR(event_transmission(e, ch, red), 0.5 * (1.0 + filter_transmission(ch[1].frequency_offset, red)), 1e-15);
}

TEST(Detect, DeterministicPerSeedAndSorted) {
    std::vector<EmissionEvent> ev;
    for (std::int64_t c = 0; c < 3000; ++c) ev.push_back({1.0 + 0.001 * (c % 7), c, static_cast<int>(c % 4), 0, Origin::Entanglement});
    DetectorConfig det;
    det.efficiency = 0.5;
    det.dark_rate = 0.01;
    det.laser_leakage = 0.1;
    const auto a = detect(ev, FilterConfig::open(), det, 9, entangling_sequence(), params(), 3000);
    const auto b = detect(ev, FilterConfig::open(), det, 9, entangling_sequence(), params(), 3000);
    const auto c = detect(ev, FilterConfig::open(), det, 10, entangling_sequence(), params(), 3000);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (std::size_t i = 1; i < a.size(); ++i)
        EXPECT_TRUE(a[i - 1].cycle < a[i].cycle || (a[i - 1].cycle == a[i].cycle && a[i - 1].t_ps <= a[i].t_ps));
}

TEST(Detect, ThinningIndependentOfJitter) {
    std::vector<EmissionEvent> ev = fixed_events(5000, 3.0);
    DetectorConfig d0, d1;
    d0.efficiency = d1.efficiency = 0.4;
    d0.jitter_fwhm = 0.0;
    const auto a = detect(ev, FilterConfig::open(), d0, 6, entangling_sequence(), params(), 5000);
    const auto b = detect(ev, FilterConfig::open(), d1, 6, entangling_sequence(), params(), 5000);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].truth, b[i].truth);
}

TEST(BeamSplitter, BalancedAndDeterministic) {
    std::vector<TimeTag> tags;
    for (std::int64_t c = 0; c < 20000; ++c) tags.push_back({c, 0, 1200, -1});
    const auto a = split_beamsplitter(tags, 3), b = split_beamsplitter(tags, 3);
    EXPECT_EQ(a, b);
    const auto ones = select_channel(a, 1).size();
    EXPECT_NEAR(static_cast<double>(ones), 10000.0, 3.0 * std::sqrt(5000.0));
}

TEST(WireFormat, RoundTrip) {
    std::vector<TimeTag> tags{{0, 0, -12, 4}, {0, 1, 1200, 5}, {3, 0, 24999, -1}};
    std::ostringstream os;
    write_tags(os, tags);
    EXPECT_EQ(os.str(), "cycle,channel,t_ps\n0,0,-12\n0,1,1200\n3,0,24999\n");
    std::istringstream is(os.str());
    EXPECT_EQ(read_tags(is), tags);
}

TEST(WireFormat, MalformedInputsNameTheLine) {
    auto parse = [](const std::string& s) {
        return [s] {
            std::istringstream is(s);
            read_tags(is);
        };
    };
    EXPECT_NE(kind_of(parse("cycle,t_ps\n")).find("line 1"), std::string::npos);
    EXPECT_NE(kind_of(parse("cycle,channel,t_ps\n0,0,10\n0,x,5\n")).find("line 3"), std::string::npos);
    EXPECT_NE(kind_of(parse("cycle,channel,t_ps\n1,0,10\n0,0,5\n")).find("line 3: rows not sorted"), std::string::npos);
    EXPECT_NE(kind_of(parse("cycle,channel,t_ps\n0,0\n")).find("line 2"), std::string::npos);
    std::istringstream crlf("cycle,channel,t_ps\r\n0,0,10\r\n");
    EXPECT_EQ(read_tags(crlf).size(), 1u);
}

TEST(Config, InvalidDetectorRejected) {
    DetectorConfig det;
    det.efficiency = 1.5;
    EXPECT_THROW(det.validate(), ConfigError);
    det = DetectorConfig{};
    det.jitter_fwhm = -1.0;
    EXPECT_THROW(det.validate(), ConfigError);
    FilterConfig f;
    f.bandwidth_fwhm = 0.0;
    EXPECT_THROW(f.validate(), ConfigError);
}
