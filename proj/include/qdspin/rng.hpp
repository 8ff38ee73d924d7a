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

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace qdspin {

// SplitMix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive a stream key from a parent key and a list of integer labels.
inline constexpr std::uint64_t derive_key(std::uint64_t parent, std::initializer_list<std::uint64_t> labels) {
    std::uint64_t k = mix64(parent);
    for (auto l : labels) k = mix64(k ^ mix64(l + 0x632be59bd9b4e019ULL));
    return k;
}

// Counter-based stream: the n-th draw is mix64(key + n * gamma), so a stream
// is fully determined by its key and independent of any other stream.
class Stream {
public:
    explicit constexpr Stream(std::uint64_t key) : key_(key) {}
    Stream(std::uint64_t parent, std::initializer_list<std::uint64_t> labels)
        : key_(derive_key(parent, labels)) {}

    std::uint64_t next_u64() {
        return mix64(key_ ^ mix64(ctr_++ * 0xd1b54a32d192ed03ULL));
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in (0, 1]
    double uniform_pos() { return 1.0 - uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

    // Box-Muller; second variate cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
        const double a = 2.0 * 3.14159265358979323846 * uniform();
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    double cauchy(double scale) {
        return scale * std::tan(3.14159265358979323846 * (uniform() - 0.5));
    }

    // Knuth multiplication for small means, normal approximation above 50.
    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 50.0) {
            double x = std::floor(normal(mean, std::sqrt(mean)) + 0.5);
            return x < 0.0 ? 0 : static_cast<std::uint64_t>(x);
        }
        const double limit = std::exp(-mean);
        std::uint64_t k = 0;
        double p = uniform_pos();
        while (p > limit) {
            ++k;
            p *= uniform_pos();
        }
        return k;
    }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace qdspin
