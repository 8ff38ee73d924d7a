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

#include <numbers>

// Internal units: time in ns, angular frequency in rad/ns, wavelength in nm.
namespace qdspin::units {

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// speed of light in nm/ns
inline constexpr double c_nm_per_ns = 299792458.0;

// 1 ueV / h = 0.241799 GHz
inline constexpr double ghz_per_uev = 0.2417989242;

// FWHM of a Gaussian in units of its standard deviation, 2 sqrt(2 ln 2)
inline constexpr double fwhm_per_sigma = 2.3548200450309493;

inline constexpr double ghz_to_rad_per_ns(double ghz) { return two_pi * ghz; }
inline constexpr double rad_per_ns_to_ghz(double w) { return w / two_pi; }
inline constexpr double uev_to_rad_per_ns(double uev) { return two_pi * ghz_per_uev * uev; }

// Frequency shift of a wavelength offset around lambda0 (first order).
inline constexpr double wavelength_offset_to_angular_frequency(double dlambda_nm, double lambda0_nm) {
    return two_pi * c_nm_per_ns * dlambda_nm / (lambda0_nm * lambda0_nm);
}

inline constexpr double angular_frequency_to_wavelength_offset(double w, double lambda0_nm) {
    return w * lambda0_nm * lambda0_nm / (two_pi * c_nm_per_ns);
}

}  // namespace qdspin::units
