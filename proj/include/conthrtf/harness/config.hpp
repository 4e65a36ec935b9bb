#pragma once

// Experiment configuration: JSON with explicit keys, unknown keys rejected.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conthrtf/errors.hpp"
#include "conthrtf/simulator.hpp"
#include "conthrtf/sysid/diag_kalman.hpp"
#include "conthrtf/sysid/em.hpp"
#include "conthrtf/sysid/nlms.hpp"

namespace conthrtf::harness {

using nlohmann::json;

enum class Method { nlms_wn, nlms_pseq, diag_kf, proposed };

inline std::string to_string(Method m) {
    switch (m) {
    case Method::nlms_wn: return "nlms_wn";
    case Method::nlms_pseq: return "nlms_pseq";
    case Method::diag_kf: return "diag_kf";
    case Method::proposed: return "proposed";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "nlms_wn") return Method::nlms_wn;
    if (s == "nlms_pseq") return Method::nlms_pseq;
    if (s == "diag_kf") return Method::diag_kf;
    if (s == "proposed") return Method::proposed;
    throw ValidationError("methods: unknown method '" + s + "' (expected nlms_wn, nlms_pseq, diag_kf or proposed)");
}

inline ExcitationKind excitation_for(Method m) {
    return m == Method::nlms_wn ? ExcitationKind::white_noise : ExcitationKind::pseq;
}

struct InitConstants {
    double A = 1.0;
    double Gamma = 1e-7;
    double Sigma = 0.01;
    double mu0 = 0.0;
    double P0 = 1.0;

    sysid::StateSpaceParams params(sysid::Index n) const {
        return sysid::StateSpaceParams::isotropic(n, A, Gamma, Sigma, mu0, P0);
    }
};

struct ExperimentConfig {
    double sample_rate = 24000.0;
    std::size_t channels = 1;  // S
    std::size_t taps = 192;    // L
    std::uint64_t excitation_seed = 1;
    std::uint64_t noise_seed = 2;
    std::vector<double> velocities{180.0};
    double snr_db = 60.0;  // +inf: noiseless
    double start_angle = 0.0;
    std::size_t length = 0;  // N_t; 0 selects 2SL + ceil(180/v * fs)
    std::size_t frame = 1200;
    std::size_t lookback = 1200;
    std::size_t lookahead = 1200;
    std::size_t iterations = 10;
    std::vector<Method> methods{Method::nlms_pseq, Method::proposed};
    InitConstants init;
    bool warm_start = false;
    sysid::NlmsOptions nlms;
    double diag_sigma = 1e-6;
    double diag_time_constant = 0.05;
    SphereConfig sphere;
    std::vector<SourceDirection> sources;  // empty: chosen from S
    bool paper_literal_average = false;
    std::size_t archive_decimation = 1;
    std::filesystem::path output_dir = "results";
    // Execution only; excluded from the hash.
    std::size_t workers = 1;
    std::size_t memory_budget_mb = sysid::kDefaultMemoryBudget >> 20;

    LoudspeakerLayout layout() const {
        if (!sources.empty()) return {sources};
        if (channels == 1) return LoudspeakerLayout::horizontal();
        if (channels == 3) return LoudspeakerLayout::three_elevations();
        throw ValidationError("sources: must be given explicitly when S is not 1 or 3");
    }

    std::size_t length_for(double velocity) const {
        if (length > 0) return length;
        return 2 * channels * taps + std::size_t(std::ceil(180.0 / velocity * sample_rate));
    }

    void validate() const {
        require(sample_rate > 0.0, "sample_rate: must be positive");
        require(channels >= 1, "S: must be at least 1");
        require(taps >= 1, "L: must be at least 1");
        require(!velocities.empty(), "velocities: must not be empty");
        for (double v : velocities) require(std::isfinite(v) && v > 0.0, "velocities: entries must be positive");
        require(!std::isnan(snr_db) && snr_db > -1e300, "snr_db: must be a number or \"inf\"");
        require(frame >= 1, "N_f: must be at least 1");
        require(!methods.empty(), "methods: must not be empty");
        require(std::set<Method>(methods.begin(), methods.end()).size() == methods.size(),
                "methods: duplicate entries");
        require(init.Gamma >= 0.0 && init.Sigma > 0.0 && init.P0 >= 0.0, "init: Gamma, P0 >= 0 and Sigma > 0");
        require(nlms.step >= 0.0 && nlms.step <= 2.0, "nlms.step: must lie in [0, 2]");
        require(nlms.eps > 0.0, "nlms.eps: must be positive");
        require(diag_sigma > 0.0, "diag_kf.sigma: must be positive");
        require(diag_time_constant > 0.0, "diag_kf.time_constant: must be positive");
        require(sphere.sample_rate == sample_rate, "sphere sample rate must equal sample_rate");
        sphere.validate();
        require(taps <= sphere.ref_length, "L: must not exceed sphere.ref_length");
        require(sources.empty() || sources.size() == channels, "sources: count must equal S");
        layout();
        require(archive_decimation >= 1, "archive_decimation: must be at least 1");
        require(workers >= 1, "workers: must be at least 1");
        require(memory_budget_mb >= 1, "memory_budget_mb: must be at least 1");
        for (double v : velocities)
            require(length_for(v) > 2 * channels * taps, "N_t: must exceed the 2SL convergence phase");
    }
};

namespace detail {

class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ValidationError(label("") + "must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError(label(key) + "has the wrong type");
        }
    }

    void get_double(const char* key, double& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        if (v.is_number()) {
            out = v.get<double>();
        } else if (v.is_string() && (v.get<std::string>() == "inf" || v.get<std::string>() == "-inf")) {
            out = v.get<std::string>() == "inf" ? HUGE_VAL : -HUGE_VAL;
        } else {
            throw ValidationError(label(key) + "must be a number");
        }
    }

    void get_size(const char* key, std::size_t& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        const json& v = j_.at(key);
        if (!v.is_number_unsigned()) throw ValidationError(label(key) + "must be a non-negative integer");
        out = v.get<std::size_t>();
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string label(const std::string& key) const {
        const std::string path = where_.empty() ? key : (key.empty() ? where_ : where_ + "." + key);
        return path.empty() ? "config: " : path + ": ";
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) {
                const std::string path = where_.empty() ? item.key() : where_ + "." + item.key();
                throw ValidationError("unknown config key '" + path + "'");
            }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline json number_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

} // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    detail::Reader r(j, "");
    r.get_double("sample_rate", c.sample_rate);
    r.get_size("S", c.channels);
    r.get_size("L", c.taps);
    r.get("excitation_seed", c.excitation_seed);
    r.get("noise_seed", c.noise_seed);
    r.get("velocities", c.velocities);
    r.get_double("snr_db", c.snr_db);
    r.get_double("start_angle", c.start_angle);
    r.get_size("N_t", c.length);
    r.get_size("N_f", c.frame);
    r.get_size("N_b", c.lookback);
    r.get_size("N_a", c.lookahead);
    r.get_size("iterations", c.iterations);
    if (const json* m = r.child("methods")) {
        if (!m->is_array()) throw ValidationError("methods: must be a list");
        c.methods.clear();
        for (const auto& e : *m) {
            if (!e.is_string()) throw ValidationError("methods: entries must be strings");
            c.methods.push_back(parse_method(e.get<std::string>()));
        }
    }
    if (const json* i = r.child("init")) {
        detail::Reader ri(*i, "init");
        ri.get_double("A", c.init.A);
        ri.get_double("Gamma", c.init.Gamma);
        ri.get_double("Sigma", c.init.Sigma);
        ri.get_double("mu0", c.init.mu0);
        ri.get_double("P0", c.init.P0);
        ri.finish();
    }
    r.get("warm_start", c.warm_start);
    if (const json* n = r.child("nlms")) {
        detail::Reader rn(*n, "nlms");
        rn.get_double("step", c.nlms.step);
        rn.get_double("eps", c.nlms.eps);
        rn.finish();
    }
    if (const json* d = r.child("diag_kf")) {
        detail::Reader rd(*d, "diag_kf");
        rd.get_double("sigma", c.diag_sigma);
        rd.get_double("time_constant", c.diag_time_constant);
        rd.finish();
    }
    if (const json* s = r.child("sphere")) {
        detail::Reader rs(*s, "sphere");
        rs.get_double("radius", c.sphere.radius);
        rs.get_double("speed_of_sound", c.sphere.speed_of_sound);
        rs.get_double("source_distance", c.sphere.source_distance);
        rs.get_double("ear_azimuth", c.sphere.ear_azimuth);
        rs.get_double("ear_elevation", c.sphere.ear_elevation);
        rs.get_size("ref_length", c.sphere.ref_length);
        rs.get_size("fft_size", c.sphere.fft_size);
        rs.get_double("taper_start", c.sphere.taper_start);
        rs.finish();
    }
    c.sphere.sample_rate = c.sample_rate;
    if (const json* s = r.child("sources")) {
        if (!s->is_array()) throw ValidationError("sources: must be a list of [azimuth, elevation] pairs");
        for (const auto& e : *s) {
            if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
                throw ValidationError("sources: entries must be [azimuth, elevation] pairs");
            c.sources.push_back({e[0].get<double>(), e[1].get<double>()});
        }
    }
    r.get("paper_literal_average", c.paper_literal_average);
    r.get_size("archive_decimation", c.archive_decimation);
    std::string out = c.output_dir.string();
    r.get("output_dir", out);
    c.output_dir = out;
    r.get_size("workers", c.workers);
    r.get_size("memory_budget_mb", c.memory_budget_mb);
    r.finish();
    c.validate();
    return c;
}

/// Settings that determine the results, with every default filled in.
inline json scientific_json(const ExperimentConfig& c) {
    json methods = json::array();
    for (Method m : c.methods) methods.push_back(to_string(m));
    json sources = json::array();
    for (const auto& s : c.layout().sources) sources.push_back({s.azimuth, s.elevation});
    return {
        {"sample_rate", c.sample_rate},
        {"S", c.channels},
        {"L", c.taps},
        {"excitation_seed", c.excitation_seed},
        {"noise_seed", c.noise_seed},
        {"velocities", c.velocities},
        {"snr_db", detail::number_json(c.snr_db)},
        {"start_angle", c.start_angle},
        {"N_t", c.length},
        {"N_f", c.frame},
        {"N_b", c.lookback},
        {"N_a", c.lookahead},
        {"iterations", c.iterations},
        {"methods", methods},
        {"init", {{"A", c.init.A}, {"Gamma", c.init.Gamma}, {"Sigma", c.init.Sigma}, {"mu0", c.init.mu0},
                  {"P0", c.init.P0}}},
        {"warm_start", c.warm_start},
        {"nlms", {{"step", c.nlms.step}, {"eps", c.nlms.eps}}},
        {"diag_kf", {{"sigma", c.diag_sigma}, {"time_constant", c.diag_time_constant}}},
        {"sphere", {{"radius", c.sphere.radius}, {"speed_of_sound", c.sphere.speed_of_sound},
                    {"source_distance", c.sphere.source_distance}, {"ear_azimuth", c.sphere.ear_azimuth},
                    {"ear_elevation", c.sphere.ear_elevation}, {"ref_length", c.sphere.ref_length},
                    {"fft_size", c.sphere.fft_size}, {"taper_start", c.sphere.taper_start}}},
        {"sources", sources},
        {"paper_literal_average", c.paper_literal_average},
        {"archive_decimation", c.archive_decimation},
    };
}

inline json config_to_json(const ExperimentConfig& c) {
    json j = scientific_json(c);
    j["output_dir"] = c.output_dir.string();
    j["workers"] = c.workers;
    j["memory_budget_mb"] = c.memory_budget_mb;
    return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// FNV-1a over the canonical (sorted-key) dump of the scientific settings.
inline std::string config_hash(const ExperimentConfig& c) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << fnv1a64(scientific_json(c).dump());
    return os.str();
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

} // namespace conthrtf::harness
