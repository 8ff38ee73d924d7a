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

#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "units.hpp"

namespace qdspin {

using cplx = std::complex<double>;
using Vec4 = Eigen::Matrix<cplx, 4, 1>;
using Mat4 = Eigen::Matrix<cplx, 4, 4>;

enum class Level : int { SpinDown = 0, SpinUp = 1, TrionDown = 2, TrionUp = 3 };

inline constexpr int idx(Level l) { return static_cast<int>(l); }
inline constexpr bool is_trion(Level l) { return idx(l) >= 2; }
inline constexpr bool is_trion(int i) { return i >= 2; }

inline const char* level_name(Level l) {
    switch (l) {
        case Level::SpinDown: return "down";
        case Level::SpinUp: return "up";
        case Level::TrionDown: return "trion_down";
        case Level::TrionUp: return "trion_up";
    }
    return "?";
}

enum class DephasingShape { Gaussian, Exponential };
enum class Polarization { H, V };
enum class Branch { Red, Blue, Other };

inline const char* branch_name(Branch b) {
    switch (b) {
        case Branch::Red: return "red";
        case Branch::Blue: return "blue";
        default: return "other";
    }
}

struct SystemParams {
    double electron_splitting = 0.0;  // delta_e, rad/ns
    double hole_splitting = 0.0;      // delta_h, rad/ns
    double decay_rate = 1.0 / 1.32;   // Gamma, 1/ns
    // branching[t][g]: probability that trion t (0 = TrionDown, 1 = TrionUp) decays to ground g.
    std::array<std::array<double, 2>, 2> branching{{{0.5, 0.5}, {0.5, 0.5}}};
    double dephasing_T2star = std::numeric_limits<double>::infinity();  // ns
    DephasingShape dephasing_shape = DephasingShape::Gaussian;
    double center_wavelength = 1550.0;  // nm

    void validate() const {
        if (!(electron_splitting >= 0.0)) throw ConfigError("InvalidParams", "electron splitting must be >= 0");
        if (!(hole_splitting >= 0.0)) throw ConfigError("InvalidParams", "hole splitting must be >= 0");
        if (!(decay_rate > 0.0)) throw ConfigError("InvalidParams", "decay rate must be > 0");
        for (const auto& b : branching) {
            if (b[0] < 0.0 || b[1] < 0.0 || std::abs(b[0] + b[1] - 1.0) > 1e-12)
                throw ConfigError("InvalidParams", "branching probabilities must be nonnegative and sum to 1");
        }
        if (!(dephasing_T2star > 0.0)) throw ConfigError("InvalidParams", "T2* must be > 0");
        if (!(center_wavelength > 0.0)) throw ConfigError("InvalidParams", "center wavelength must be > 0");
    }

    // Std. dev. of the quasi-static electron-splitting offset (Gaussian shape).
    double dephasing_sigma() const {
        return std::isfinite(dephasing_T2star) ? std::sqrt(2.0) / dephasing_T2star : 0.0;
    }
};

struct TransitionChannel {
    int id = 0;  // 0..3 for T1..T4
    Level from = Level::TrionDown;
    Level to = Level::SpinDown;
    Polarization polarization = Polarization::H;
    double frequency_offset = 0.0;  // rad/ns from line center
    Branch branch_label = Branch::Other;
    double rate = 0.0;  // 1/ns

    std::string name() const { return "T" + std::to_string(id + 1); }
};

using ChannelTable = std::array<TransitionChannel, 4>;

// Bare level energies (rad/ns) relative to line center. `ground_shift` is an
// extra electron-splitting offset (quasi-static noise).
inline std::array<double, 4> level_energies(const SystemParams& p, double ground_shift = 0.0) {
    const double de = p.electron_splitting + ground_shift;
    return {0.5 * de, -0.5 * de, 0.5 * p.hole_splitting, -0.5 * p.hole_splitting};
}

inline ChannelTable build_channels(const SystemParams& p) {
    const auto e = level_energies(p);
    const bool split = p.electron_splitting > 0.0;
    ChannelTable ch;
    struct Row { Level from, to; Polarization pol; };
    const Row rows[4] = {
        {Level::TrionDown, Level::SpinDown, Polarization::V},
        {Level::TrionDown, Level::SpinUp, Polarization::H},
        {Level::TrionUp, Level::SpinDown, Polarization::H},
        {Level::TrionUp, Level::SpinUp, Polarization::V},
    };
    for (int i = 0; i < 4; ++i) {
        auto& c = ch[i];
        c.id = i;
        c.from = rows[i].from;
        c.to = rows[i].to;
        c.polarization = rows[i].pol;
        c.frequency_offset = e[idx(c.from)] - e[idx(c.to)];
        // |down> is the upper ground state, so its photon is the red one.
        c.branch_label = !split ? Branch::Other : (c.to == Level::SpinDown ? Branch::Red : Branch::Blue);
        c.rate = p.decay_rate * p.branching[idx(c.from) - 2][idx(c.to)];
    }
    return ch;
}

// Index of the channel connecting trion `from` to ground `to`.
inline int channel_index(Level from, Level to) {
    return (idx(from) - 2) * 2 + idx(to);
}

struct ActiveDrive {
    int channel = 0;         // 0..3
    double rabi = 0.0;       // rad/ns, envelope-scaled
    double detuning = 0.0;   // rad/ns, laser minus transition
};

// Laser frequency (rad/ns from line center) of a drive.
inline double drive_frequency(const ChannelTable& ch, const ActiveDrive& d) {
    return ch[d.channel].frequency_offset + d.detuning;
}

inline void check_drives(std::span<const ActiveDrive> drives) {
    for (std::size_t i = 0; i < drives.size(); ++i) {
        if (drives[i].channel < 0 || drives[i].channel > 3)
            throw ConfigError("UnknownTarget", "drive channel out of range");
        for (std::size_t j = 0; j < i; ++j) {
            if (drives[i].channel == drives[j].channel && drives[i].detuning != drives[j].detuning)
                throw SimulationError("ConflictingDrives",
                                      "two simultaneous drives on one transition with different detunings");
        }
    }
}

// Rotating-frame Hamiltonian; trion energies are measured from `frame`
// (laser frequency of the frame drive).
inline Mat4 hamiltonian(const SystemParams& p, const ChannelTable& ch, std::span<const ActiveDrive> drives,
                        double t, double frame, double ground_shift = 0.0) {
    check_drives(drives);
    Mat4 h = Mat4::Zero();
    const auto e = level_energies(p, ground_shift);
    h(0, 0) = e[0];
    h(1, 1) = e[1];
    h(2, 2) = e[2] - frame;
    h(3, 3) = e[3] - frame;
    for (const auto& d : drives) {
        const auto& c = ch[d.channel];
        const double w = drive_frequency(ch, d) - frame;
        const cplx v = 0.5 * d.rabi * std::exp(cplx(0.0, -w * t));
        h(idx(c.from), idx(c.to)) += v;
        h(idx(c.to), idx(c.from)) += std::conj(v);
    }
    return h;
}

// Frame at the first drive's laser frequency, or line center without drives.
inline Mat4 hamiltonian(const SystemParams& p, std::span<const ActiveDrive> drives, double t) {
    const auto ch = build_channels(p);
    const double frame = drives.empty() ? 0.0 : drive_frequency(ch, drives.front());
    return hamiltonian(p, ch, drives, t, frame);
}

// Ground-subspace rotation by theta about n = (cos a, 0, sin a), a = tilt;
// sigma_z |up> = +|up>. Identity on the trion block.
inline Mat4 rotation_matrix(double theta, double tilt = 0.0) {
    const double c = std::cos(0.5 * theta), s = std::sin(0.5 * theta);
    const double nx = std::cos(tilt), nz = std::sin(tilt);
    const cplx mi(0.0, -1.0);
    Mat4 u = Mat4::Identity();
    // basis order (down, up); sigma_z = diag(-1, +1)
    u(0, 0) = c + mi * s * (-nz);
    u(1, 1) = c + mi * s * nz;
    u(0, 1) = mi * s * nx;
    u(1, 0) = mi * s * nx;
    return u;
}

class QuantumState {
public:
    enum class Representation { Vector, Density };

    static QuantumState vector(const Vec4& psi) { return QuantumState(psi); }
    static QuantumState density(const Mat4& rho) { return QuantumState(rho); }
    static QuantumState basis(Level l) {
        Vec4 v = Vec4::Zero();
        v(idx(l)) = 1.0;
        return QuantumState(v);
    }

    Representation representation() const { return rep_; }
    bool is_vector() const { return rep_ == Representation::Vector; }
    const Vec4& psi() const { return psi_; }
    const Mat4& rho() const { return rho_; }

    Mat4 density_matrix() const { return is_vector() ? Mat4(psi_ * psi_.adjoint()) : rho_; }

    double population(Level l) const {
        return is_vector() ? std::norm(psi_(idx(l))) : rho_(idx(l), idx(l)).real();
    }

    // Throws SimulationError("InvalidState") on violation.
    void validate() const {
        if (is_vector()) {
            if (std::abs(psi_.squaredNorm() - 1.0) > 1e-9)
                throw SimulationError("InvalidState", "state vector not normalized");
            return;
        }
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                if (std::abs(rho_(i, j) - std::conj(rho_(j, i))) > 1e-12)
                    throw SimulationError("InvalidState", "density matrix not Hermitian");
        if (std::abs(rho_.trace().real() - 1.0) > 1e-9)
            throw SimulationError("InvalidState", "density matrix trace != 1");
        if (min_eigenvalue(rho_) < -1e-9)
            throw SimulationError("InvalidState", "density matrix not positive");
    }

    static double min_eigenvalue(const Mat4& rho) {
        Eigen::SelfAdjointEigenSolver<Mat4> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }

private:
    explicit QuantumState(const Vec4& v) : rep_(Representation::Vector), psi_(v), rho_(Mat4::Zero()) {}
    explicit QuantumState(const Mat4& m) : rep_(Representation::Density), psi_(Vec4::Zero()), rho_(m) {}

    Representation rep_;
    Vec4 psi_;
    Mat4 rho_;
};

inline QuantumState rotate_spin(const QuantumState& s, double theta, double tilt = 0.0) {
    const Mat4 u = rotation_matrix(theta, tilt);
    if (s.is_vector()) return QuantumState::vector(u * s.psi());
    return QuantumState::density(u * s.rho() * u.adjoint());
}

// Azimuth of the ground-spin Bloch vector with |down> at the north pole:
// psi ~ cos(t/2)|down> + e^{i phi} sin(t/2)|up>.
inline double bloch_azimuth(const Vec4& psi) {
    return std::arg(psi(idx(Level::SpinUp)) * std::conj(psi(idx(Level::SpinDown))));
}

}  // namespace qdspin
