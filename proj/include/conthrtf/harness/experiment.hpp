#pragma once

// Experiment orchestration: simulate -> identify -> evaluate for every
// (method, velocity) pair, with CSV, archive and plot-data outputs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "conthrtf/harness/archive.hpp"
#include "conthrtf/harness/config.hpp"
#include "conthrtf/metrics.hpp"

namespace conthrtf::harness {

inline constexpr const char* kVersion = "conthrtf 1.0.0";

inline std::string fmt(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string velocity_tag(double v) { return "v" + fmt(v); }

inline ExcitationSignal make_excitation(ExcitationKind kind, std::size_t channels, std::size_t taps,
                                        std::size_t length, std::uint64_t seed) {
    if (kind == ExcitationKind::white_noise) return gen_white_noise(channels, length, seed);
    return multichannel_pseq(taps, channels, length, seed);
}

inline RotationTrajectory trajectory_for(const ExperimentConfig& c, double velocity) {
    return {c.start_angle, velocity, c.sample_rate};
}

struct IdentifyOutput {
    sysid::Estimates estimates;
    std::optional<sysid::StateSpaceParams> first_params;
    std::vector<std::vector<double>> log_likelihoods;
};

inline IdentifyOutput identify_method(const ExperimentConfig& c, Method method, const sysid::SignalView& signals) {
    IdentifyOutput out;
    switch (method) {
    case Method::nlms_wn:
    case Method::nlms_pseq:
        out.estimates = sysid::nlms_run(signals, c.nlms);
        break;
    case Method::diag_kf: {
        sysid::DiagKalmanOptions o;
        o.sigma = c.diag_sigma;
        o.time_constant = c.diag_time_constant;
        o.sample_rate = c.sample_rate;
        out.estimates = sysid::diag_kalman_run(signals, o).estimates;
        break;
    }
    case Method::proposed: {
        const auto plan = sysid::plan_segments(signals.length(), c.frame, c.lookback, c.lookahead);
        sysid::ProposedOptions o;
        o.iterations = c.iterations;
        o.workers = c.workers;
        o.warm_start = c.warm_start;
        o.retain = sysid::ParamRetention::first;
        o.memory_budget = c.memory_budget_mb << 20;
        auto r = sysid::identify_proposed(signals, plan, c.init.params(signals.state_dim()), o);
        out.estimates = std::move(r.estimates);
        out.first_params = std::move(r.params.front());
        out.log_likelihoods = std::move(r.log_likelihoods);
        break;
    }
    }
    return out;
}

struct RunResult {
    Method method = Method::nlms_pseq;
    double velocity = 0.0;
    std::size_t length = 0;
    std::size_t iterations = 0;
    double average = 0.0;
    double average_shifted = 0.0;
    double seconds = 0.0;
    double achieved_snr = 0.0;
    DistanceSeries series;
    std::vector<double> angle;
    std::optional<sysid::StateSpaceParams> first_params;
};

struct ExperimentResult {
    std::string hash;
    std::size_t channels = 0;
    std::size_t taps = 0;
    double sample_rate = 0.0;
    std::vector<RunResult> runs;
    std::vector<std::filesystem::path> written;
};

enum class Figure { fig2, fig3, fig4, fig5 };

inline Figure parse_figure(const std::string& s) {
    if (s == "fig2") return Figure::fig2;
    if (s == "fig3") return Figure::fig3;
    if (s == "fig4") return Figure::fig4;
    if (s == "fig5") return Figure::fig5;
    throw ValidationError("unknown figure '" + s + "' (expected fig2, fig3, fig4 or fig5)");
}

/// Plot data for one figure. fig2 and fig3 are per velocity; fig4 and fig5
/// tabulate the averages of all runs.
inline std::string emit_plot_data(const ExperimentResult& res, Figure figure, double velocity = 0.0) {
    std::ostringstream os;
    os << "# config_hash=" << res.hash << "\n";
    auto runs_at = [&](double v) {
        std::vector<const RunResult*> out;
        for (const auto& r : res.runs)
            if (r.velocity == v) out.push_back(&r);
        if (out.empty()) throw ValidationError("plot data: no results at velocity " + fmt(v));
        return out;
    };
    switch (figure) {
    case Figure::fig2: {
        const RunResult* run = nullptr;
        for (const auto* r : runs_at(velocity))
            if (r->first_params) run = r;
        if (!run) throw ValidationError("plot data fig2: needs first-segment parameters of the proposed method");
        os << "matrix,row,col,value,warped\n";
        const auto emit = [&](const char* name, const sysid::MatrixXd& m) {
            for (sysid::Index i = 0; i < m.rows(); ++i)
                for (sysid::Index j = 0; j < m.cols(); ++j)
                    os << name << ',' << i << ',' << j << ',' << fmt(m(i, j)) << ','
                       << fmt(std::pow(std::abs(m(i, j)), 0.1)) << "\n";
        };
        emit("A", run->first_params->A);
        emit("Gamma", run->first_params->Gamma);
        break;
    }
    case Figure::fig3: {
        const auto runs = runs_at(velocity);
        const RunResult& first = *runs.front();
        os << "time_s,angle_deg";
        for (const auto* r : runs)
            for (std::size_t s = 0; s < res.channels; ++s) os << ",D_" << to_string(r->method) << "_" << s + 1;
        for (std::size_t s = 0; s < res.channels; ++s) os << ",TVI_" << s + 1;
        os << "\n";
        for (std::size_t k = 0; k < first.length; ++k) {
            os << fmt(double(k) / res.sample_rate) << ',' << fmt(first.angle[k]);
            for (const auto* r : runs)
                for (std::size_t s = 0; s < res.channels; ++s) os << ',' << fmt(r->series.distance[s][k]);
            for (std::size_t s = 0; s < res.channels; ++s) os << ',' << fmt(first.series.tvi[s][k]);
            os << "\n";
        }
        break;
    }
    case Figure::fig4:
    case Figure::fig5:
        if (res.runs.empty()) throw ValidationError("plot data: no results");
        os << "method,velocity_deg_s,D_avg_db,D_avg_shifted_db\n";
        for (const auto& r : res.runs)
            os << to_string(r.method) << ',' << fmt(r.velocity) << ',' << fmt(r.average) << ','
               << fmt(r.average_shifted) << "\n";
        break;
    }
    return os.str();
}

inline std::string samples_csv(const ExperimentResult& res, const RunResult& r) {
    std::ostringstream os;
    os << "# config_hash=" << res.hash << " method=" << to_string(r.method) << " velocity=" << fmt(r.velocity)
       << "\n";
    os << "k,time_s,angle_deg";
    for (std::size_t s = 0; s < res.channels; ++s) os << ",D_" << s + 1;
    for (std::size_t s = 0; s < res.channels; ++s) os << ",D_shifted_" << s + 1;
    for (std::size_t s = 0; s < res.channels; ++s) os << ",TVI_" << s + 1;
    os << "\n";
    for (std::size_t k = 0; k < r.length; ++k) {
        os << k << ',' << fmt(double(k) / res.sample_rate) << ',' << fmt(r.angle[k]);
        for (std::size_t s = 0; s < res.channels; ++s) os << ',' << fmt(r.series.distance[s][k]);
        for (std::size_t s = 0; s < res.channels; ++s) os << ',' << fmt(r.series.shifted[s][k]);
        for (std::size_t s = 0; s < res.channels; ++s) os << ',' << fmt(r.series.tvi[s][k]);
        os << "\n";
    }
    return os.str();
}

/// Wall-clock times are kept out of this table so it is reproducible byte for byte.
inline std::string summary_csv(const ExperimentResult& res) {
    std::ostringstream os;
    os << "# config_hash=" << res.hash << "\n";
    os << "method,velocity_deg_s,iterations,S,L,N_t,D_avg_db,D_avg_shifted_db\n";
    for (const auto& r : res.runs)
        os << to_string(r.method) << ',' << fmt(r.velocity) << ',' << r.iterations << ',' << res.channels << ','
           << res.taps << ',' << r.length << ',' << fmt(r.average) << ',' << fmt(r.average_shifted) << "\n";
    return os.str();
}

inline std::string timings_csv(const ExperimentResult& res) {
    std::ostringstream os;
    os << "# config_hash=" << res.hash << "\n";
    os << "method,velocity_deg_s,wall_clock_s\n";
    for (const auto& r : res.runs) os << to_string(r.method) << ',' << fmt(r.velocity) << ',' << fmt(r.seconds) << "\n";
    return os.str();
}

struct RunPlan {
    Method method = Method::nlms_pseq;
    double velocity = 0.0;
    std::size_t length = 0;
    std::size_t segments = 0;
};

struct ExperimentPlan {
    std::string hash;
    std::vector<RunPlan> runs;
    std::vector<std::filesystem::path> outputs;  // relative to output_dir
};

inline ExperimentPlan plan_experiment(const ExperimentConfig& c) {
    c.validate();
    ExperimentPlan p;
    p.hash = config_hash(c);
    bool proposed = false;
    for (double v : c.velocities) {
        const std::size_t n = c.length_for(v);
        for (Method m : c.methods) {
            const std::size_t segs = m == Method::proposed ? sysid::plan_segments(n, c.frame, c.lookback, c.lookahead).segments.size() : 0;
            p.runs.push_back({m, v, n, segs});
            const std::string tag = to_string(m) + "_" + velocity_tag(v);
            p.outputs.push_back("samples_" + tag + ".csv");
            p.outputs.push_back("hrir_" + tag + ".bin");
            proposed = proposed || m == Method::proposed;
        }
        p.outputs.push_back("fig3_" + velocity_tag(v) + ".csv");
        if (proposed) p.outputs.push_back("fig2_" + velocity_tag(v) + ".csv");
    }
    p.outputs.push_back(c.channels == 1 ? "fig4.csv" : "fig5.csv");
    p.outputs.push_back("summary.csv");
    p.outputs.push_back("timings.csv");
    p.outputs.push_back("config.json");
    return p;
}

struct RunOptions {
    bool force = false;
    bool dry_run = false;
    std::ostream* log = nullptr;
    std::filesystem::path scratch;  // empty: the system temp directory
};

namespace detail {

/// Files are written to a staging directory and moved into place only once the
/// whole experiment succeeded.
class Staging {
public:
    Staging(const std::filesystem::path& scratch, const std::string& hash) {
        namespace fs = std::filesystem;
        std::error_code ec;
        const fs::path base = scratch.empty() ? fs::temp_directory_path(ec) : scratch;
        if (ec) throw IoError("no scratch directory available: " + ec.message());
        fs::create_directories(base, ec);
        if (ec) throw IoError("cannot create scratch directory " + base.string() + ": " + ec.message());
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        dir_ = base / ("conthrtf-" + hash + "-" + std::to_string(stamp));
        fs::create_directories(dir_, ec);
        if (ec) throw IoError("cannot create staging directory " + dir_.string() + ": " + ec.message());
    }

    ~Staging() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }

    std::filesystem::path path(const std::filesystem::path& name) const { return dir_ / name; }

    void write(const std::filesystem::path& name, const std::string& text) { io::detail::write_file(path(name), text); }

    std::vector<std::filesystem::path> commit(const std::filesystem::path& out_dir,
                                              const std::vector<std::filesystem::path>& names) {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
        std::vector<fs::path> done;
        for (const auto& n : names) {
            const fs::path target = out_dir / n;
            fs::rename(path(n), target, ec);
            if (ec) {
                ec.clear();
                fs::copy_file(path(n), target, fs::copy_options::overwrite_existing, ec);
                if (ec) throw IoError("cannot write " + target.string() + ": " + ec.message());
            }
            done.push_back(target);
        }
        return done;
    }

private:
    std::filesystem::path dir_;
};

} // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
    const ExperimentPlan plan = plan_experiment(c);
    auto log = [&](const std::string& msg) {
        if (opt.log) *opt.log << msg << std::endl;
    };
    if (!opt.force)
        for (const auto& n : plan.outputs)
            if (std::filesystem::exists(c.output_dir / n))
                throw IoError("refusing to overwrite " + (c.output_dir / n).string() + " (use --force)");

    ExperimentResult res;
    res.hash = plan.hash;
    res.channels = c.channels;
    res.taps = c.taps;
    res.sample_rate = c.sample_rate;
    log("config " + plan.hash + ": " + std::to_string(plan.runs.size()) + " runs");
    for (const auto& r : plan.runs)
        log("  " + to_string(r.method) + " at " + fmt(r.velocity) + " deg/s, N_t = " + std::to_string(r.length) +
            (r.method == Method::proposed ? ", " + std::to_string(r.segments) + " segments" : ""));
    if (opt.dry_run) return res;

    detail::Staging stage(opt.scratch, plan.hash);
    const LoudspeakerLayout layout = c.layout();
    const json sci = scientific_json(c);
    for (double v : c.velocities) {
        const std::size_t n = c.length_for(v);
        const RotationTrajectory traj = trajectory_for(c, v);
        HrirCache cache(c.sphere);
        std::map<ExcitationKind, std::pair<ExcitationSignal, SimulationOutput>> sims;
        for (Method m : c.methods) {
            const ExcitationKind kind = excitation_for(m);
            if (!sims.count(kind)) {
                log("simulating " + to_string(kind) + " at " + fmt(v) + " deg/s");
                auto ex = make_excitation(kind, c.channels, c.taps, n, c.excitation_seed);
                auto sim = simulate_measurement(layout, ex, traj, cache, c.snr_db, c.noise_seed);
                sims.emplace(kind, std::make_pair(std::move(ex), std::move(sim)));
            }
            const auto& [ex, sim] = sims.at(kind);
            log("identifying with " + to_string(m) + " at " + fmt(v) + " deg/s");
            const auto t0 = std::chrono::steady_clock::now();
            const sysid::SignalView signals{ex.channels, sim.y, c.taps};
            IdentifyOutput id = identify_method(c, m, signals);
            RunResult r;
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            r.method = m;
            r.velocity = v;
            r.length = n;
            r.iterations = m == Method::proposed ? c.iterations : 0;
            r.achieved_snr = sim.achieved_snr;
            r.series = distance_series(sim.references, id.estimates);
            r.average = average_system_distance(r.series.distance, c.channels, c.taps, n, c.paper_literal_average);
            r.average_shifted =
                average_system_distance(r.series.shifted, c.channels, c.taps, n, c.paper_literal_average);
            r.angle = sim.angle;
            r.first_params = std::move(id.first_params);
            log("  D_avg = " + fmt(r.average) + " dB, shifted " + fmt(r.average_shifted) + " dB (" + fmt(r.seconds) +
                " s)");

            json meta = {{"version", kVersion},
                         {"config_hash", plan.hash},
                         {"config", sci},
                         {"method", to_string(m)},
                         {"velocity", v},
                         {"excitation", to_string(kind)},
                         {"excitation_seed", c.excitation_seed},
                         {"noise_seed", c.noise_seed},
                         {"achieved_snr_db", detail::number_json(sim.achieved_snr)}};
            const std::string tag = to_string(m) + "_" + velocity_tag(v);
            write_archive(stage.path("hrir_" + tag + ".bin"),
                          make_archive(id.estimates, sim.angle, c.archive_decimation, std::move(meta)));
            res.runs.push_back(std::move(r));
            stage.write("samples_" + tag + ".csv", samples_csv(res, res.runs.back()));
        }
        stage.write("fig3_" + velocity_tag(v) + ".csv", emit_plot_data(res, Figure::fig3, v));
        bool proposed = false;
        for (Method m : c.methods) proposed = proposed || m == Method::proposed;
        if (proposed) stage.write("fig2_" + velocity_tag(v) + ".csv", emit_plot_data(res, Figure::fig2, v));
    }
    stage.write(c.channels == 1 ? "fig4.csv" : "fig5.csv",
                emit_plot_data(res, c.channels == 1 ? Figure::fig4 : Figure::fig5));
    stage.write("summary.csv", summary_csv(res));
    stage.write("timings.csv", timings_csv(res));
    stage.write("config.json", config_to_json(c).dump(2) + "\n");
    res.written = stage.commit(c.output_dir, plan.outputs);
    return res;
}

} // namespace conthrtf::harness
