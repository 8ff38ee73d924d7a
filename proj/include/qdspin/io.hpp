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

#include <openssl/evp.h>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "analysis.hpp"
#include "detection.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "pulse.hpp"
#include "quantum_core.hpp"
#include "units.hpp"

namespace qdspin {

// ---------------------------------------------------------------------------
// key = value text with [section] or [section label] headers

struct KvEntry {
    std::string value;
    int line = 0;
    mutable bool used = false;
};

struct KvSection {
    std::string name;
    std::string label;
    int line = 0;
    std::map<std::string, KvEntry> entries;

    bool has(const std::string& key) const { return entries.count(key) > 0; }
};

class KvFile {
public:
    std::string source;
    std::vector<KvSection> sections;

    static KvFile parse(std::string_view text, std::string source_name) {
        KvFile f;
        f.source = std::move(source_name);
        f.sections.push_back({"", "", 0, {}});
        int n = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto end = std::min(text.find('\n', pos), text.size());
            std::string_view raw = text.substr(pos, end - pos);
            pos = end + 1;
            ++n;
            if (const auto h = raw.find('#'); h != std::string_view::npos) raw = raw.substr(0, h);
            const auto line = detail::trim(raw);
            if (line.empty()) {
                if (end == text.size()) break;
                continue;
            }
            if (line.front() == '[') {
                if (line.back() != ']') throw f.error(n, "unterminated section header");
                const auto words = detail::split_ws(line.substr(1, line.size() - 2));
                if (words.empty() || words.size() > 2) throw f.error(n, "malformed section header");
                KvSection s{std::string(words[0]), words.size() > 1 ? std::string(words[1]) : "", n, {}};
                for (const auto& o : f.sections)
                    if (o.name == s.name && o.label == s.label && o.line > 0)
                        throw f.error(n, "duplicate section [" + s.name + (s.label.empty() ? "" : " " + s.label) + "]");
                f.sections.push_back(std::move(s));
            } else {
                const auto eq = line.find('=');
                if (eq == std::string_view::npos) throw f.error(n, "expected key = value");
                const std::string key(detail::trim(line.substr(0, eq)));
                const std::string value(detail::trim(line.substr(eq + 1)));
                if (key.empty()) throw f.error(n, "empty key");
                auto& sec = f.sections.back();
                if (sec.entries.count(key)) throw f.error(n, "duplicate key '" + key + "'");
                sec.entries[key] = {value, n};
            }
            if (end == text.size()) break;
        }
        return f;
    }

    ConfigError error(int line, const std::string& msg) const {
        return ConfigError("ConfigSyntax", source + " line " + std::to_string(line) + ": " + msg);
    }

    const KvSection* section(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name && (s.line > 0 || name.empty())) return &s;
        return nullptr;
    }

    std::vector<const KvSection*> all(const std::string& name) const {
        std::vector<const KvSection*> out;
        for (const auto& s : sections)
            if (s.name == name && s.line > 0) out.push_back(&s);
        return out;
    }

    // Throws on any key that no accessor consumed, naming key and line.
    void check_unused() const {
        for (const auto& s : sections)
            for (const auto& [k, e] : s.entries)
                if (!e.used)
                    throw ConfigError("UnknownKey", source + " line " + std::to_string(e.line) + ": unknown key '" + k +
                                                        "' in [" + s.name + "]");
        for (const auto& s : sections)
            if (s.line > 0 && !known_section(s.name))
                throw ConfigError("UnknownKey", source + " line " + std::to_string(s.line) + ": unknown section [" + s.name + "]");
    }

    std::vector<std::string> known;

private:
    bool known_section(const std::string& name) const {
        return std::find(known.begin(), known.end(), name) != known.end();
    }
};

// Typed accessors; every failure names the key and its line.
class KvReader {
public:
    KvReader(const KvFile& f, const KvSection* s) : f_(f), s_(s) {}

    bool has(const std::string& key) const { return s_ && s_->has(key); }

    std::optional<std::string> str(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        const auto& e = s_->entries.at(key);
        e.used = true;
        return e.value;
    }
    std::string str(const std::string& key, const std::string& def) const { return str(key).value_or(def); }
    std::string required(const std::string& key) const {
        auto v = str(key);
        if (!v) throw ConfigError("MissingKey", f_.source + ": missing required key '" + key + "' in [" + name() + "]");
        return *v;
    }

    std::optional<double> num(const std::string& key) const {
        auto v = str(key);
        if (!v) return std::nullopt;
        return to_double(key, *v);
    }
    double num(const std::string& key, double def) const { return num(key).value_or(def); }

    std::optional<std::int64_t> integer(const std::string& key) const {
        auto v = str(key);
        if (!v) return std::nullopt;
        std::int64_t x = 0;
        auto r = std::from_chars(v->data(), v->data() + v->size(), x);
        if (r.ec != std::errc() || r.ptr != v->data() + v->size()) throw bad(key, "expected an integer, got '" + *v + "'");
        return x;
    }

    std::vector<double> list(const std::string& key) const {
        std::vector<double> out;
        auto v = str(key);
        if (!v) return out;
        std::string_view rest(*v);
        while (true) {
            const auto c = rest.find(',');
            out.push_back(to_double(key, std::string(detail::trim(rest.substr(0, c)))));
            if (c == std::string_view::npos) break;
            rest = rest.substr(c + 1);
        }
        return out;
    }

    std::vector<std::string> words(const std::string& key) const {
        std::vector<std::string> out;
        auto v = str(key);
        if (!v) return out;
        std::string_view rest(*v);
        while (true) {
            const auto c = rest.find(',');
            const auto w = detail::trim(rest.substr(0, c));
            if (!w.empty()) out.emplace_back(w);
            if (c == std::string_view::npos) break;
            rest = rest.substr(c + 1);
        }
        return out;
    }

    std::pair<double, double> window(const std::string& key) const {
        const auto v = list(key);
        if (v.size() != 2 || !(v[1] > v[0])) throw bad(key, "expected 'a, b' with b > a");
        return {v[0], v[1]};
    }

    int line(const std::string& key) const { return has(key) ? s_->entries.at(key).line : (s_ ? s_->line : 0); }

    ConfigError bad(const std::string& key, const std::string& msg) const {
        return ConfigError("InvalidValue", f_.source + " line " + std::to_string(line(key)) + ": key '" + key + "': " + msg);
    }

private:
    std::string name() const { return s_ ? s_->name : ""; }

    double to_double(const std::string& key, const std::string& v) const {
        if (v == "inf") return std::numeric_limits<double>::infinity();
        double x = 0.0;
        auto r = std::from_chars(v.data(), v.data() + v.size(), x);
        if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw bad(key, "expected a number, got '" + v + "'");
        return x;
    }

    const KvFile& f_;
    const KvSection* s_;
};

// ---------------------------------------------------------------------------
// hashing and files

// Git blob object id (SHA-1 over "blob <size>\0" + content).
inline std::string git_blob_hash(std::string_view content) {
    const std::string head = "blob " + std::to_string(content.size()) + std::string(1, '\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 || EVP_DigestUpdate(ctx, head.data(), head.size()) != 1 ||
        EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("HashFailed", "SHA-1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw ConfigError("MissingFile", "cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("WriteFailed", "cannot write '" + p.string() + "'");
    os << content;
    if (!os) throw ConfigError("WriteFailed", "cannot write '" + p.string() + "'");
}

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) { return p.string() + ".meta"; }

inline std::string format_metadata(const Metadata& m) {
    std::string s;
    for (const auto& [k, v] : m) s += k + "=" + v + "\n";
    return s;
}

inline std::map<std::string, std::string> read_metadata(const std::filesystem::path& p) {
    std::map<std::string, std::string> out;
    std::istringstream is(read_file(p));
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("MalformedMetadata", p.string() + " line " + std::to_string(n) + ": expected key=value");
        out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

inline std::string format_histogram_csv(const Histogram& h) {
    std::ostringstream os;
    os << "bin_start_ps,bin_end_ps,count,normalized\n";
    for (std::size_t i = 0; i < h.bins(); ++i)
        os << format_number(h.bin_edges[i]) << ',' << format_number(h.bin_edges[i + 1]) << ',' << h.counts[i] << ','
           << format_number(h.values.empty() ? static_cast<double>(h.counts[i]) : h.values[i]) << '\n';
    return os.str();
}

// Tag file reader that also accepts a zero-byte file as an empty stream.
inline std::vector<TimeTag> read_tag_file(const std::filesystem::path& p) {
    const std::string text = read_file(p);
    if (text.empty()) return {};
    std::istringstream is(text);
    try {
        return read_tags(is);
    } catch (const ConfigError& e) {
        throw ConfigError(e.kind(), p.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// run configuration

struct NamedFilter {
    std::string name;
    FilterConfig filter;
};

struct ScanOutput {
    std::string statistic = "window_counts";  // window_counts | spin_up
    std::pair<double, double> window{0.0, 0.0};
    int channel = -1;                         // -1 = all detectors
    std::string filter;                       // empty = first filter
    bool normalize_first = false;
    std::string fit = "none";                 // none | initialization | ramsey
    double tau_origin = 0.0;                  // ns, Ramsey delay origin
};

struct RunConfig {
    std::filesystem::path config_path;
    std::filesystem::path sequence_path;
    std::string config_text;
    std::string sequence_text;
    Sequence sequence;
    SystemParams params;
    ImperfectionConfig imperfections;
    TrajectoryOptions trajectory;
    std::int64_t trajectories = 0;
    std::optional<std::uint64_t> seed;
    DetectorConfig detector;
    std::vector<NamedFilter> filters;
    std::string out_dir = "out";
    ScanOutput scan;
    std::string config_hash;    // blob id of config text + sequence text
    std::string sequence_hash;  // blob id of the sequence file

    std::int64_t cycles() const { return trajectories * trajectory.cycles; }
};

namespace detail {

inline double splitting_from(const KvReader& r, const std::string& stem, double lambda0) {
    const bool g = r.has(stem + "_ghz"), n = r.has(stem + "_nm");
    if (g && n) throw r.bad(stem + "_nm", "give either " + stem + "_ghz or " + stem + "_nm");
    if (n) return wavelength_offset_to_angular_frequency(*r.num(stem + "_nm"), lambda0);
    return units::ghz_to_rad_per_ns(r.num(stem + "_ghz", 0.0));
}

inline int channel_by_name(const KvReader& r, const std::string& key, const std::string& v) {
    for (int i = 0; i < 4; ++i)
        if (v == target_name(i)) return i;
    throw r.bad(key, "unknown channel '" + v + "'");
}

}  // namespace detail

inline SystemParams parse_system(const KvFile& f) {
    KvReader r(f, f.section("system"));
    SystemParams p;
    p.center_wavelength = r.num("center_wavelength_nm", p.center_wavelength);
    if (!(p.center_wavelength > 0.0)) throw r.bad("center_wavelength_nm", "must be > 0");
    p.electron_splitting = detail::splitting_from(r, "electron_splitting", p.center_wavelength);
    p.hole_splitting = detail::splitting_from(r, "hole_splitting", p.center_wavelength);
    if (auto lt = r.num("lifetime_ns")) {
        if (!(*lt > 0.0)) throw r.bad("lifetime_ns", "must be > 0");
        p.decay_rate = 1.0 / *lt;
    }
    p.dephasing_T2star = r.num("t2star_ns", p.dephasing_T2star);
    const auto shape = r.str("dephasing_shape", "gaussian");
    if (shape == "gaussian") p.dephasing_shape = DephasingShape::Gaussian;
    else if (shape == "exponential") p.dephasing_shape = DephasingShape::Exponential;
    else throw r.bad("dephasing_shape", "expected gaussian or exponential");
    if (r.has("branching")) {
        const auto b = r.list("branching");
        if (b.size() != 2) throw r.bad("branching", "expected 'p_down_from_trion_down, p_down_from_trion_up'");
        p.branching = {{{b[0], 1.0 - b[0]}, {b[1], 1.0 - b[1]}}};
    }
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.kind(), f.source + " [system]: " + e.what());
    }
    return p;
}

inline FilterConfig parse_filter(const KvReader& r, const SystemParams& p) {
    const auto ch = build_channels(p);
    FilterConfig fc;
    const bool by_channel = r.has("center_channel"), by_nm = r.has("center_nm");
    if (by_channel && by_nm) throw r.bad("center_nm", "give either center_channel or center_nm");
    if (by_channel) fc.center_offset = ch[detail::channel_by_name(r, "center_channel", *r.str("center_channel"))].frequency_offset;
    if (by_nm) fc.center_offset = wavelength_offset_to_angular_frequency(*r.num("center_nm"), p.center_wavelength);
    if (r.has("fwhm_nm")) {
        const double w = *r.num("fwhm_nm");
        if (!(w > 0.0)) throw r.bad("fwhm_nm", "must be > 0");
        fc.bandwidth_fwhm = wavelength_offset_to_angular_frequency(w, p.center_wavelength);
    }
    const auto shape = r.str("shape", "gaussian");
    if (shape == "gaussian") fc.shape = FilterShape::Gaussian;
    else if (shape == "lorentzian") fc.shape = FilterShape::Lorentzian;
    else throw r.bad("shape", "expected gaussian or lorentzian");
    return fc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c;
    c.config_path = path;
    c.config_text = read_file(path);
    KvFile f = KvFile::parse(c.config_text, path.filename().string());
    f.known = {"", "run", "system", "imperfections", "rotation", "detector", "filter", "scan"};

    KvReader run(f, f.section("run"));
    const auto seq_rel = run.required("sequence");
    c.sequence_path = path.parent_path() / seq_rel;
    if (!std::filesystem::exists(c.sequence_path))
        throw ConfigError("MissingFile", f.source + " line " + std::to_string(run.line("sequence")) +
                                             ": sequence file '" + seq_rel + "' does not exist");
    c.sequence_text = read_file(c.sequence_path);
    try {
        c.sequence = parse_sequence(c.sequence_text);
    } catch (const SequenceError& e) {
        throw SequenceError(e.kind(), c.sequence_path.filename().string() + ": " + e.what());
    }

    const auto traj = run.integer("trajectories");
    if (!traj) throw ConfigError("MissingKey", f.source + ": missing required key 'trajectories' in [run]");
    if (*traj < 1) throw ConfigError("InvalidValue", "trajectories must be ≥ 1");
    c.trajectories = *traj;
    const auto cyc = run.integer("cycles_per_trajectory").value_or(1);
    if (cyc < 1 || cyc > 100000000) throw run.bad("cycles_per_trajectory", "must be >= 1");
    c.trajectory.cycles = static_cast<int>(cyc);
    if (auto s = run.integer("seed")) {
        if (*s < 0) throw run.bad("seed", "must be >= 0");
        c.seed = static_cast<std::uint64_t>(*s);
    }
    const auto unr = run.str("unraveling", "frequency");
    if (unr == "frequency") c.trajectory.unraveling = Unraveling::Frequency;
    else if (unr == "erased") c.trajectory.unraveling = Unraveling::Erased;
    else throw run.bad("unraveling", "expected frequency or erased");
    const auto init = run.str("initial", "random");
    if (init == "random") c.trajectory.initial = InitialSpin::Random;
    else if (init == "down") c.trajectory.initial = InitialSpin::Down;
    else if (init == "up") c.trajectory.initial = InitialSpin::Up;
    else throw run.bad("initial", "expected random, down or up");
    c.trajectory.dt = run.num("dt_ns", 0.0);
    if (c.trajectory.dt < 0.0) throw run.bad("dt_ns", "must be >= 0");
    c.out_dir = run.str("out_dir", c.out_dir);

    c.params = parse_system(f);

    KvReader imp(f, f.section("imperfections"));
    c.imperfections.rotation_tilt = imp.num("rotation_tilt_rad", 0.0);

    KvReader rot(f, f.section("rotation"));
    c.trajectory.calibration.coefficient = rot.num("coefficient", c.trajectory.calibration.coefficient);
    c.trajectory.calibration.exponent = rot.num("exponent", c.trajectory.calibration.exponent);
    c.trajectory.calibration.reference_detuning = rot.num("reference_detuning_nm", c.trajectory.calibration.reference_detuning);

    KvReader det(f, f.section("detector"));
    c.detector.efficiency = det.num("efficiency", c.detector.efficiency);
    c.detector.jitter_fwhm = det.num("jitter_fwhm_ps", c.detector.jitter_fwhm);
    c.detector.dark_rate = det.num("dark_rate_per_ns", c.detector.dark_rate);
    c.detector.laser_leakage = det.num("laser_leakage", c.detector.laser_leakage);
    c.detector.detectors = static_cast<int>(det.integer("detectors").value_or(c.detector.detectors));
    try {
        c.detector.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(e.kind(), f.source + " [detector]: " + e.what());
    }
    c.imperfections.laser_leakage = c.detector.laser_leakage;

    for (const auto* s : f.all("filter")) {
        KvReader r(f, s);
        if (s->label.empty()) throw f.error(s->line, "filter sections need a name: [filter NAME]");
        c.filters.push_back({s->label, parse_filter(r, c.params)});
    }
    if (c.filters.empty()) c.filters.push_back({"open", FilterConfig::open()});

    KvReader sc(f, f.section("scan"));
    c.scan.statistic = sc.str("statistic", c.scan.statistic);
    if (c.scan.statistic != "window_counts" && c.scan.statistic != "spin_up")
        throw sc.bad("statistic", "expected window_counts or spin_up");
    if (sc.has("window_ns")) c.scan.window = sc.window("window_ns");
    else c.scan.window = {0.0, c.sequence.period};
    const auto chan = sc.str("channel", "all");
    if (chan == "all") c.scan.channel = -1;
    else if (chan == "0" || chan == "1") c.scan.channel = chan[0] - '0';
    else throw sc.bad("channel", "expected all, 0 or 1");
    c.scan.filter = sc.str("filter", c.filters.front().name);
    if (std::none_of(c.filters.begin(), c.filters.end(), [&](const NamedFilter& nf) { return nf.name == c.scan.filter; }))
        throw sc.bad("filter", "unknown filter '" + c.scan.filter + "'");
    const auto norm = sc.str("normalize", "none");
    if (norm != "none" && norm != "first") throw sc.bad("normalize", "expected none or first");
    c.scan.normalize_first = norm == "first";
    c.scan.fit = sc.str("fit", "none");
    if (c.scan.fit != "none" && c.scan.fit != "initialization" && c.scan.fit != "ramsey")
        throw sc.bad("fit", "expected none, initialization or ramsey");
    c.scan.tau_origin = sc.num("tau_origin_ns", 0.0);

    f.check_unused();
    c.sequence_hash = git_blob_hash(c.sequence_text);
    c.config_hash = git_blob_hash(c.config_text + '\0' + c.sequence_text);
    return c;
}

}  // namespace qdspin
