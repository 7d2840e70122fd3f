// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// latflow: data generation, training, adaptation, enhancement and evaluation
// behind one subcommand-style binary.
//
// Failures print a single line "error[<category>]: <message>" on stderr.
// Exit codes: 0 ok, 2 bad input (config, I/O, ingestion), 1 anything else.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "latflow/config/run_config.hpp"
#include "latflow/core/error.hpp"
#include "latflow/eval/eval.hpp"

namespace fs = std::filesystem;
using namespace latflow;

namespace {

struct Common {
    std::string preset = "desk";
    std::string config;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--preset", c.preset, "Configuration preset (desk, full)")->capture_default_str();
    cmd->add_option("--config", c.config, "JSON config merged over the preset");
    cmd->add_option("--seed", c.seed, "Seed for all randomness of this command")->capture_default_str();
}

RunConfig config_of(const Common& c) { return load_run_config(c.preset, c.config); }

// Every artifact directory records the exact configuration and tool version.
void echo_config(const fs::path& dir, const std::string& command, const Common& c, const nlohmann::json& cfg,
                 const nlohmann::json& extra = nlohmann::json::object()) {
    fs::create_directories(dir);
    nlohmann::json j = {{"version", LATFLOW_VERSION}, {"command", command}, {"preset", c.preset},
                        {"seed", c.seed},           {"config", cfg},     {"args", extra}};
    std::ofstream f(dir / "run_config.json");
    if (!f) throw IoError("cannot write " + (dir / "run_config.json").string());
    f << j.dump(2) << "\n";
}

LogFn logger(const fs::path& dir) {
    auto file = std::make_shared<std::ofstream>(dir / "run.log", std::ios::app);
    auto mu = std::make_shared<std::mutex>();
    return [file, mu](const std::string& line) {
        std::lock_guard lock(*mu);
        std::cerr << line << "\n";
        *file << line << "\n" << std::flush;
    };
}

std::uint64_t path_tag(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
    return h;
}

int cmd_make_inventory(const std::string& out, std::int64_t scenes, std::int64_t speakers, std::int64_t utts,
                       std::uint64_t seed) {
    auto inv = make_toy_inventory(out, scenes, speakers, utts, seed);
    std::cout << "wrote " << (fs::path(out) / "inventory.json").string() << " (" << inv.scenes.size() << " scenes, "
              << inv.speech.size() << " utterances, " << inv.noise.size() << " noise files)\n";
    return 0;
}

int cmd_gen_data(const Common& c, const std::string& inventory, const std::string& out) {
    auto cfg = config_of(c);
    auto inv = load_inventory(inventory);
    echo_config(out, "gen-data", c, to_json(cfg), {{"inventory", inventory}});
    auto plan = generate_corpus(cfg.data, inv, c.seed, out);
    std::cout << "generated " << plan.size() << " clips under " << out << "\n";
    return 0;
}

int cmd_train_vae(const Common& c, const std::string& data, const std::string& out, bool resume) {
    auto cfg = config_of(c);
    echo_config(out, "train-vae", c, to_json(cfg), {{"data", data}});
    auto clips = load_split(data, "train");
    RunOptions opt{c.seed, resume, -1, to_json(cfg), logger(out)};
    auto r = train_vae(cfg.compressor, cfg.train, clips, out, opt);
    std::cout << "compressor checkpoint " << (fs::path(out) / "compressor.ckpt").string() << " at step "
              << r.last_step << "\n";
    return 0;
}

int cmd_train_flow(const Common& c, const std::string& data, const std::string& compressor, const std::string& out,
                   bool resume) {
    auto cfg = config_of(c);
    echo_config(out, "train-flow", c, to_json(cfg), {{"data", data}, {"compressor", compressor}});
    auto comp = load_compressor(compressor);
    auto log = logger(out);
    log("encoding training clips");
    auto latents = encode_pairs(comp, load_split(data, "train"));
    RunOptions opt{c.seed, resume, -1, to_json(cfg), log};
    auto r = train_flow(cfg.udit, cfg.flow.path, cfg.train, latents, out, opt);
    std::cout << "flow checkpoint " << (fs::path(out) / "udit.ckpt").string() << " at step " << r.last_step << "\n";
    return 0;
}

int cmd_adapt(const Common& c, const std::string& backbone, const std::string& compressor, const std::string& data,
              const std::string& mode, bool extend, const std::string& prior, const std::string& out) {
    auto cfg = config_of(c);
    echo_config(out, "adapt", c, to_json(cfg),
                {{"backbone", backbone}, {"compressor", compressor}, {"data", data}, {"mode", mode}, {"extend", extend},
                 {"adapters", prior}});
    AdaptOptions how;
    how.mode = adapt_mode_from_string(mode);
    how.setup = cfg.adapters;
    how.extend = extend;
    how.prior_adapters = prior;
    if (extend && prior.empty()) throw ConfigError("--extend needs a prior MoELoRA adapter checkpoint (--adapters)");
    auto comp = load_compressor(compressor);
    auto log = logger(out);
    auto latents = encode_pairs(comp, load_split(data, "train"));
    RunOptions opt{c.seed, false, -1, to_json(cfg), log};
    auto r = adapt(backbone, cfg.flow.path, cfg.train, how, latents, out, opt);
    if (!r.frozen_unchanged) throw TrainingError("frozen backbone tensors changed during adaptation");
    return 0;
}

std::vector<fs::path> wav_inputs(const fs::path& in) {
    std::vector<fs::path> rel;
    if (fs::is_regular_file(in)) return {in.filename()};
    if (!fs::is_directory(in)) throw IoError("input not found: " + in.string());
    for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".wav") rel.push_back(fs::relative(e.path(), in));
    }
    std::sort(rel.begin(), rel.end());
    if (rel.empty()) throw IoError("no WAV files under " + in.string());
    return rel;
}

int cmd_enhance(const Common& c, const std::string& model_path, const std::string& comp_path,
                const std::string& adapters, const std::string& in, const std::string& out, std::int64_t steps) {
    auto cfg = config_of(c);
    SolverConfig solver = cfg.flow.solver;
    if (steps > 0) solver.steps = steps;
    solver.validate();
    echo_config(out, "enhance", c, to_json(cfg),
                {{"model", model_path}, {"compressor", comp_path}, {"adapters", adapters}, {"in", in}, {"steps", solver.steps}});
    auto comp = load_compressor(comp_path);
    auto model = load_udit(model_path);
    if (!adapters.empty()) load_adapters(adapters, model);
    auto log = logger(out);
    const fs::path in_root = fs::is_regular_file(in) ? fs::path(in).parent_path() : fs::path(in);
    const auto files = wav_inputs(in);
    auto run_one = [&](const fs::path& rel) {
        auto r = read_wav(in_root / rel);
        if (r.resampled) log("warning: " + rel.string() + " resampled from " + std::to_string(r.original_rate) + " Hz");
        Rng rng(c.seed, path_tag(rel.generic_string()));
        auto x = Tensor::from_data({1, static_cast<std::int64_t>(r.wave.size())}, r.wave.samples);
        auto y = enhance(x, comp, model, solver, rng);
        fs::create_directories((fs::path(out) / rel).parent_path());
        write_wav(fs::path(out) / rel, Waveform{y.to_vector(), kSampleRate});
    };
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    const auto workers = std::min<std::size_t>(
        cfg.eval.workers > 0 ? cfg.eval.workers : std::max(1u, std::thread::hardware_concurrency()), files.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < files.size();) {
                try {
                    run_one(files[i]);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    log("enhanced " + std::to_string(files.size()) + " files with " + std::to_string(solver.steps) + " " +
        to_string(solver.scheme) + " steps");

    if (cfg.eval.measure_rtf) {
        std::vector<Waveform> set;
        for (std::size_t i = 0; i < files.size() && static_cast<std::int64_t>(i) < cfg.eval.rtf_clips; ++i) {
            set.push_back(read_wav(in_root / files[i]).wave);
        }
        auto enhancer = [&](const Waveform& w) {
            Rng rng(c.seed, 0);
            auto y = enhance(Tensor::from_data({1, static_cast<std::int64_t>(w.size())}, w.samples), comp, model,
                             solver, rng);
            return Waveform{y.to_vector(), kSampleRate};
        };
        const double rtf = measure_rtf(enhancer, set);
        std::ofstream(fs::path(out) / "rtf.json") << nlohmann::json{{"rtf", rtf}, {"steps", solver.steps}, {"clips", set.size()}}.dump(2) << "\n";
        char b[64];
        std::snprintf(b, sizeof b, "real-time factor %.4f", rtf);
        log(b);
    }
    return 0;
}

int cmd_eval(const Common& c, const std::string& clean, const std::string& est, const std::string& report_dir) {
    auto cfg = config_of(c);
    auto report = evaluate_directories(clean, est, static_cast<int>(cfg.eval.workers));
    for (const auto& n : report.notes) std::cerr << "warning: " << n << "\n";
    if (!cfg.eval.scorer.empty()) {
        std::vector<ScorerPair> pairs;
        std::set<std::string> ids;
        for (const auto& r : report.rows) ids.insert(r.utterance_id);
        for (const auto& id : ids) pairs.push_back({id, fs::path(clean) / (id + ".wav"), fs::path(est) / (id + ".wav")});
        for (const auto& [id, m] : run_external_scorer(cfg.eval.scorer, pairs)) report.add(id, m);
    }
    if (fs::exists(fs::path(est) / "rtf.json")) {
        std::ifstream f(fs::path(est) / "rtf.json");
        report.rtf = nlohmann::json::parse(f).at("rtf").get<double>();
    }
    report.config = {{"version", LATFLOW_VERSION}, {"preset", c.preset}, {"config", to_json(cfg)},
                     {"clean", clean}, {"estimate", est}};
    emit_report(report, report_dir);
    echo_config(report_dir, "eval", c, to_json(cfg), {{"clean", clean}, {"est", est}});
    for (const auto& a : report.aggregates()) {
        std::printf("%-8s mean %.4f  std %.4f  n=%lld\n", a.metric.c_str(), a.mean, a.std, static_cast<long long>(a.count));
    }
    return 0;
}

// Copies the distorted and clean test clips into two mirrored trees so
// enhance and eval can work on plain directories.
int cmd_export_split(const std::string& data, const std::string& split, const std::string& out) {
    auto clips = list_corpus(data, split);
    if (clips.empty()) throw ConfigError("split '" + split + "' is empty");
    for (const char* sub : {"mix", "clean"}) fs::create_directories(fs::path(out) / sub);
    for (const auto& c : clips) {
        fs::copy_file(c.mix, fs::path(out) / "mix" / (c.clip_id + ".wav"), fs::copy_options::overwrite_existing);
        fs::copy_file(c.clean, fs::path(out) / "clean" / (c.clip_id + ".wav"), fs::copy_options::overwrite_existing);
    }
    std::cout << "exported " << clips.size() << " " << split << " clips to " << out << "\n";
    return 0;
}

int exit_code(const Error& e) {
    const auto& c = e.category();
    return c == "config" || c == "io" || c == "ingestion" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latflow: latent flow-matching speech enhancement toolkit"};
    app.set_version_flag("--version", std::string(LATFLOW_VERSION));
    app.require_subcommand(1);

    Common common;
    std::string inventory, out, data, compressor, backbone, mode = "moelora", adapters, model, in, clean, est, report,
                                                                split = "test";
    std::int64_t scenes = 10, speakers = 12, utts = 3, steps = 0;
    bool extend = false, no_resume = false;

    auto* mk = app.add_subcommand("make-inventory", "Synthesize a toy RIR/speech/noise inventory");
    mk->add_option("--out", out, "Output directory")->required();
    mk->add_option("--scenes", scenes)->capture_default_str();
    mk->add_option("--speakers", speakers)->capture_default_str();
    mk->add_option("--utterances", utts, "Utterances per speaker")->capture_default_str();
    mk->add_option("--seed", common.seed)->capture_default_str();

    auto* gen = app.add_subcommand("gen-data", "Generate a corpus from an inventory");
    add_common(gen, common);
    gen->add_option("--inventory", inventory, "inventory.json")->required();
    gen->add_option("--out", out)->required();

    auto* tv = app.add_subcommand("train-vae", "Train the audio compressor");
    add_common(tv, common);
    tv->add_option("--data", data, "Corpus directory")->required();
    tv->add_option("--out", out)->required();
    tv->add_flag("--no-resume", no_resume, "Ignore checkpoints already in --out");

    auto* tf = app.add_subcommand("train-flow", "Train the flow model on compressor latents");
    add_common(tf, common);
    tf->add_option("--data", data)->required();
    tf->add_option("--compressor", compressor, "compressor.ckpt")->required();
    tf->add_option("--out", out)->required();
    tf->add_flag("--no-resume", no_resume);

    auto* ad = app.add_subcommand("adapt", "Fine-tune a flow backbone (full, lora, moelora)");
    add_common(ad, common);
    ad->add_option("--backbone", backbone, "udit.ckpt")->required();
    ad->add_option("--compressor", compressor)->required();
    ad->add_option("--data", data)->required();
    ad->add_option("--mode", mode)->check(CLI::IsMember({"full", "lora", "moelora"}))->capture_default_str();
    ad->add_flag("--extend", extend, "Append one expert to the adapters given by --adapters");
    ad->add_option("--adapters", adapters, "Prior adapters.ckpt (for --extend)");
    ad->add_option("--out", out)->required();

    auto* en = app.add_subcommand("enhance", "Enhance a WAV file or directory");
    add_common(en, common);
    en->add_option("--model", model, "udit.ckpt")->required();
    en->add_option("--compressor", compressor)->required();
    en->add_option("--adapters", adapters);
    en->add_option("--in", in)->required();
    en->add_option("--out", out)->required();
    en->add_option("--steps", steps, "ODE steps (default: flow.steps, 50)");

    auto* ev = app.add_subcommand("eval", "Score estimates against clean references");
    add_common(ev, common);
    ev->add_option("--clean", clean)->required();
    ev->add_option("--est", est)->required();
    ev->add_option("--report", report, "Report directory")->required();

    auto* ex = app.add_subcommand("export-split", "Copy a corpus split into mix/ and clean/ trees");
    ex->add_option("--data", data)->required();
    ex->add_option("--split", split)->capture_default_str();
    ex->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        if (*mk) return cmd_make_inventory(out, scenes, speakers, utts, common.seed);
        if (*gen) return cmd_gen_data(common, inventory, out);
        if (*tv) return cmd_train_vae(common, data, out, !no_resume);
        if (*tf) return cmd_train_flow(common, data, compressor, out, !no_resume);
        if (*ad) return cmd_adapt(common, backbone, compressor, data, mode, extend, adapters, out);
        if (*en) return cmd_enhance(common, model, compressor, adapters, in, out, steps);
        if (*ev) return cmd_eval(common, clean, est, report);
        if (*ex) return cmd_export_split(data, split, out);
    } catch (const Error& e) {
        std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
