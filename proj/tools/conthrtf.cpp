#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conthrtf/conthrtf.hpp"

using namespace conthrtf;
using namespace conthrtf::harness;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, validation = 1, numerical = 2, io_failure = 3 };

std::size_t env_workers() {
    const char* v = std::getenv("CONTHRTF_WORKERS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    require(*end == '\0' && n >= 1, "CONTHRTF_WORKERS must be a positive integer");
    return std::size_t(n);
}

fs::path env_scratch() {
    const char* v = std::getenv("CONTHRTF_SCRATCH");
    return v && *v ? fs::path(v) : fs::path();
}

ExperimentConfig load_or_default(const std::string& path) {
    ExperimentConfig c = path.empty() ? config_from_json(json::object()) : load_config(path);
    c.workers = env_workers();
    return c;
}

void guard_overwrite(const fs::path& p, bool force) {
    if (!force && fs::exists(p)) throw IoError("refusing to overwrite " + p.string() + " (use --force)");
}

void write_text(const fs::path& p, const std::string& text) { io::detail::write_file(p, text); }

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw IoError(p.string() + " is not valid JSON: " + e.what());
    }
}

ExcitationKind parse_kind(const std::string& s) {
    if (s == "pseq") return ExcitationKind::pseq;
    if (s == "white_noise") return ExcitationKind::white_noise;
    throw ValidationError("excitation must be pseq or white_noise, got '" + s + "'");
}

// "s=f:c" maps loudspeaker s to channel c of excitation file f.
std::pair<std::size_t, ChannelSource> parse_map_entry(const std::string& e) {
    const auto eq = e.find('='), colon = e.find(':');
    require(eq != std::string::npos && colon != std::string::npos && colon > eq,
            "channel map entry '" + e + "' must look like s=file:channel");
    try {
        return {std::stoul(e.substr(0, eq)),
                {std::stoul(e.substr(eq + 1, colon - eq - 1)), std::stoul(e.substr(colon + 1))}};
    } catch (const std::exception&) {
        throw ValidationError("channel map entry '" + e + "' must look like s=file:channel");
    }
}

struct SimulationRecord {
    ExperimentConfig config;
    double velocity = 0.0;
    std::size_t length = 0;
};

SimulationRecord load_simulation(const fs::path& p) {
    const json j = read_json(p);
    SimulationRecord r;
    try {
        r.config = config_from_json(j.at("config"));
        r.velocity = j.at("velocity").get<double>();
        r.length = j.at("N_t").get<std::size_t>();
    } catch (const json::exception&) {
        throw ValidationError(p.string() + ": missing or malformed simulation record fields");
    }
    return r;
}

int cmd_synthesize(const std::string& config, const std::vector<double>& angles, double step, const fs::path& out,
                   bool force) {
    const ExperimentConfig c = load_or_default(config);
    std::vector<double> grid = angles;
    if (step > 0.0)
        for (double a = 0.0; a <= 180.0 + 1e-9; a += step) grid.push_back(std::min(a, 180.0));
    require(!grid.empty(), "give --angle or --grid-step");
    guard_overwrite(out, force);
    std::string text = "incidence_deg";
    for (std::size_t i = 0; i < c.sphere.ref_length; ++i) text += ",h" + std::to_string(i);
    text += "\n";
    for (double a : grid) {
        const HRIR h = synthesize_hrir(c.sphere, a);
        text += fmt(a);
        for (double v : h.taps) text += "," + fmt(v);
        text += "\n";
    }
    write_text(out, text);
    std::clog << "wrote " << grid.size() << " responses to " << out.string() << "\n";
    return ok;
}

int cmd_simulate(const std::string& config, double velocity, const std::string& kind_name, const fs::path& out,
                 const std::string& format, bool force) {
    ExperimentConfig c = load_or_default(config);
    require(velocity >= 0.0, "velocity must be non-negative");
    const ExcitationKind kind = parse_kind(kind_name);
    require(format == "float32" || format == "float64", "wav format must be float32 or float64");
    const auto wf = format == "float32" ? io::WavSampleFormat::float32 : io::WavSampleFormat::float64;
    const std::size_t n = c.length > 0 ? c.length : c.length_for(velocity > 0.0 ? velocity : 180.0);
    for (const char* f : {"excitation.wav", "mic.wav", "clean.wav", "simulation.json"}) guard_overwrite(out / f, force);
    HrirCache cache(c.sphere);
    const auto ex = make_excitation(kind, c.channels, c.taps, n, c.excitation_seed);
    const auto sim = simulate_measurement(c.layout(), ex, trajectory_for(c, velocity), cache, c.snr_db, c.noise_seed);
    fs::create_directories(out);
    io::write_wav(out / "excitation.wav", {ex.channels, c.sample_rate}, wf);
    io::write_wav(out / "mic.wav", {{sim.y}, c.sample_rate}, wf);
    io::write_wav(out / "clean.wav", {{sim.d}, c.sample_rate}, wf);
    const json rec = {{"version", kVersion},
                      {"config_hash", config_hash(c)},
                      {"config", scientific_json(c)},
                      {"velocity", velocity},
                      {"N_t", n},
                      {"excitation", to_string(kind)},
                      {"excitation_seed", c.excitation_seed},
                      {"noise_seed", c.noise_seed},
                      {"achieved_snr_db", harness::detail::number_json(sim.achieved_snr)},
                      {"wav_format", format}};
    write_text(out / "simulation.json", rec.dump(2) + "\n");
    std::clog << "simulated " << n << " samples, SNR " << fmt(sim.achieved_snr) << " dB\n";
    return ok;
}

int cmd_identify(const std::string& config, const std::string& method_name, const fs::path& ex_file,
                 const fs::path& mic_file, const fs::path& sim_file, const fs::path& out, bool force) {
    ExperimentConfig c = load_or_default(config);
    std::optional<SimulationRecord> rec;
    if (!sim_file.empty()) rec = load_simulation(sim_file);
    const Method method = parse_method(method_name);
    guard_overwrite(out, force);
    const io::WavData ex = io::read_wav(ex_file);
    const io::WavData mic = io::read_wav(mic_file);
    require(ex.sample_rate == c.sample_rate && mic.sample_rate == c.sample_rate,
            "wav sample rates must equal the configured sample_rate");
    require(ex.channel_count() == c.channels, "excitation file has " + std::to_string(ex.channel_count()) +
                                                  " channels but S = " + std::to_string(c.channels));
    require(mic.channel_count() >= 1 && mic.length() == ex.length(), "microphone and excitation lengths differ");
    const sysid::SignalView signals{ex.channels, mic.channels[0], c.taps};
    IdentifyOutput id = identify_method(c, method, signals);
    std::vector<double> angles(ex.length(), std::numeric_limits<double>::quiet_NaN());
    if (rec) {
        const auto traj = trajectory_for(rec->config, rec->velocity);
        for (std::size_t k = 0; k < angles.size(); ++k) angles[k] = angle_at(traj, k);
    }
    json meta = {{"version", kVersion}, {"config_hash", config_hash(c)}, {"config", scientific_json(c)},
                 {"method", to_string(method)}, {"excitation_file", ex_file.string()},
                 {"mic_file", mic_file.string()}};
    if (rec) meta["velocity"] = rec->velocity;
    write_archive(out, make_archive(id.estimates, angles, c.archive_decimation, meta));
    std::clog << "wrote " << out.string() << "\n";
    return ok;
}

int cmd_evaluate(const fs::path& archive_file, const fs::path& sim_file, const fs::path& out, bool force) {
    const HrirArchive a = read_archive(archive_file);
    const SimulationRecord rec = load_simulation(sim_file);
    const ExperimentConfig& c = rec.config;
    require(a.channels == c.channels, "archive channel count differs from the simulation");
    require(a.original_length == rec.length, "archive length differs from the simulation");
    if (!out.empty()) guard_overwrite(out, force);
    HrirCache cache(c.sphere);
    const ReferenceSet refs = build_references(c.layout(), trajectory_for(c, rec.velocity), rec.length, cache);
    const std::size_t S = a.channels, L = a.taps, shift = L * S / 2, start = 2 * S * L;
    std::string text = "k,time_s";
    for (std::size_t s = 0; s < S; ++s) text += ",D_" + std::to_string(s + 1);
    for (std::size_t s = 0; s < S; ++s) text += ",D_shifted_" + std::to_string(s + 1);
    text += "\n";
    double sum = 0.0, sum_shift = 0.0;
    std::size_t count = 0;
    std::vector<double> h(L);
    for (std::size_t n = 0; n < a.samples(); ++n) {
        const std::size_t k = n * a.decimation;
        std::vector<double> d(S), ds(S, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t i = 0; i < L; ++i) h[i] = a.at(n, s, i);
            d[s] = system_distance(refs.at(k, s).taps, h);
            if (k >= shift) ds[s] = system_distance(refs.at(k - shift, s).taps, h);
        }
        if (k >= start) {
            for (std::size_t s = 0; s < S; ++s) sum += d[s], sum_shift += ds[s];
            ++count;
        }
        text += std::to_string(k) + "," + fmt(double(k) / c.sample_rate);
        for (double v : d) text += "," + fmt(v);
        for (double v : ds) text += "," + fmt(v);
        text += "\n";
    }
    require(count > 0, "no stored samples after the 2SL convergence phase");
    const double norm = double(count) * (c.paper_literal_average ? 1.0 : double(S));
    if (!out.empty()) write_text(out, "# config_hash=" + config_hash(c) + "\n" + text);
    std::cout << "D_avg_db," << fmt(sum / norm) << "\nD_avg_shifted_db," << fmt(sum_shift / norm) << "\n";
    return ok;
}

int cmd_experiment(const std::string& config, const std::string& output_dir, bool force, bool dry_run) {
    ExperimentConfig c = load_or_default(config);
    if (!output_dir.empty()) c.output_dir = output_dir;
    RunOptions opt;
    opt.force = force;
    opt.dry_run = dry_run;
    opt.log = &std::clog;
    opt.scratch = env_scratch();
    const auto res = run_experiment(c, opt);
    if (!dry_run) std::cout << summary_csv(res);
    return ok;
}

int cmd_ingest(const fs::path& mic, std::size_t mic_channel, const std::vector<std::string>& ex_files,
               const std::vector<std::string>& map, const std::string& seed_spec, std::size_t S, std::size_t L,
               double rate, const fs::path& out, bool force) {
    IngestSpec spec;
    spec.mic_file = mic;
    spec.mic_channel = mic_channel;
    spec.loudspeakers = S;
    spec.sample_rate = rate;
    for (const auto& f : ex_files) spec.excitation_files.emplace_back(f);
    for (const auto& e : map) {
        const auto [s, src] = parse_map_entry(e);
        require(spec.channel_map.emplace(s, src).second, "loudspeaker " + std::to_string(s) + " is mapped twice");
    }
    if (!seed_spec.empty()) {
        const auto colon = seed_spec.find(':');
        require(colon != std::string::npos, "seed spec must look like kind:seed");
        SeedSpec sp;
        sp.kind = parse_kind(seed_spec.substr(0, colon));
        try {
            sp.seed = std::stoull(seed_spec.substr(colon + 1));
        } catch (const std::exception&) {
            throw ValidationError("seed spec must look like kind:seed");
        }
        sp.taps = L;
        spec.seed = sp;
    } else if (spec.channel_map.empty() && spec.excitation_files.size() == 1) {
        for (std::size_t s = 0; s < S; ++s) spec.channel_map[s] = {0, s};
    }
    for (const char* f : {"excitation.wav", "mic.wav"}) guard_overwrite(out / f, force);
    const auto in = ingest_recording(spec);
    fs::create_directories(out);
    io::write_wav(out / "excitation.wav", {in.excitation, in.sample_rate}, io::WavSampleFormat::float64);
    io::write_wav(out / "mic.wav", {{in.mic}, in.sample_rate}, io::WavSampleFormat::float64);
    std::clog << "ingested " << in.mic.size() << " samples from " << S << " loudspeaker channels\n";
    return ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuous HRTF measurement simulation and identification"};
    app.require_subcommand(1);
    bool force = false;

    std::string config;
    std::vector<double> angles;
    double grid_step = 0.0;
    std::string out;
    auto* syn = app.add_subcommand("synthesize-hrtf", "Rigid-sphere reference responses as CSV");
    syn->add_option("--config", config, "Experiment config (sphere section is used)");
    syn->add_option("--angle", angles, "Incidence angle in degrees (repeatable)");
    syn->add_option("--grid-step", grid_step, "Uniform incidence grid over [0, 180] with this step");
    syn->add_option("--out", out, "Output CSV")->required();
    syn->add_flag("--force", force, "Overwrite existing outputs");

    double velocity = 180.0;
    std::string kind = "pseq", wav_format = "float32";
    auto* sim = app.add_subcommand("simulate", "Simulate a continuous measurement");
    sim->add_option("--config", config, "Experiment config");
    sim->add_option("--velocity", velocity, "Rotational velocity in deg/s");
    sim->add_option("--excitation", kind, "pseq or white_noise");
    sim->add_option("--wav-format", wav_format, "float32 or float64");
    sim->add_option("--out", out, "Output directory")->required();
    sim->add_flag("--force", force, "Overwrite existing outputs");

    std::string method = "proposed", ex_file, mic_file, sim_file;
    auto* idf = app.add_subcommand("identify", "Estimate time-varying responses from recorded signals");
    idf->add_option("--config", config, "Experiment config");
    idf->add_option("--method", method, "nlms_wn, nlms_pseq, diag_kf or proposed");
    idf->add_option("--excitation", ex_file, "Multichannel excitation WAV")->required();
    idf->add_option("--mic", mic_file, "Microphone WAV (first channel)")->required();
    idf->add_option("--simulation", sim_file, "simulation.json, to record head angles");
    idf->add_option("--out", out, "Output archive")->required();
    idf->add_flag("--force", force, "Overwrite existing outputs");

    std::string archive;
    auto* ev = app.add_subcommand("evaluate", "System distances of an archive against simulated references");
    ev->add_option("--archive", archive, "HRIR-set archive")->required();
    ev->add_option("--simulation", sim_file, "simulation.json of the measurement")->required();
    ev->add_option("--out", out, "Per-sample CSV");
    ev->add_flag("--force", force, "Overwrite existing outputs");

    std::string output_dir;
    bool dry_run = false;
    auto* exp = app.add_subcommand("experiment", "Run a configured experiment suite");
    exp->add_option("--config", config, "Experiment config")->required();
    exp->add_option("--output-dir", output_dir, "Overrides output_dir");
    exp->add_flag("--dry-run", dry_run, "Validate and print the plan only");
    exp->add_flag("--force", force, "Overwrite existing outputs");

    std::string mic, seed_spec;
    std::size_t mic_channel = 0, S = 1, L = 192;
    std::vector<std::string> ex_files, map;
    double rate = 24000.0;
    auto* ing = app.add_subcommand("ingest", "Align recorded WAV files into identification inputs");
    ing->add_option("--mic", mic, "Microphone WAV")->required();
    ing->add_option("--mic-channel", mic_channel, "Channel of the microphone WAV");
    ing->add_option("--excitation", ex_files, "Excitation WAV (repeatable)");
    ing->add_option("--map", map, "Loudspeaker mapping s=file:channel (repeatable)");
    ing->add_option("--seed-spec", seed_spec, "Regenerate the excitation: pseq:SEED or white_noise:SEED");
    ing->add_option("-S,--channels", S, "Loudspeaker count");
    ing->add_option("-L,--taps", L, "Taps per response (PSEQ period per channel)");
    ing->add_option("--rate", rate, "Expected sample rate in Hz");
    ing->add_option("--out", out, "Output directory")->required();
    ing->add_flag("--force", force, "Overwrite existing outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : validation;
    }

    try {
        if (*syn) return cmd_synthesize(config, angles, grid_step, out, force);
        if (*sim) return cmd_simulate(config, velocity, kind, out, wav_format, force);
        if (*idf) return cmd_identify(config, method, ex_file, mic_file, sim_file, out, force);
        if (*ev) return cmd_evaluate(archive, sim_file, out, force);
        if (*exp) return cmd_experiment(config, output_dir, force, dry_run);
        if (*ing) return cmd_ingest(mic, mic_channel, ex_files, map, seed_spec, S, L, rate, out, force);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return numerical;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return io_failure;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return io_failure;
    } catch (const std::bad_alloc&) {
        std::cerr << "numerical failure: out of memory\n";
        return numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return validation;
    }
    return ok;
}
