// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/train/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "latflow/core/checkpoint.hpp"
#include "latflow/core/error.hpp"
#include "latflow/core/json_fields.hpp"
#include "latflow/core/optim.hpp"
#include "latflow/data/datasetgen.hpp"

namespace latflow {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    if (vae_steps < 0 || flow_steps < 0 || adapt_steps < 0) throw ConfigError("train step counts must be >= 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(crop_seconds > 0)) throw ConfigError("train.crop_seconds must be positive");
    if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"vae_steps", c.vae_steps},
            {"flow_steps", c.flow_steps},
            {"adapt_steps", c.adapt_steps},
            {"batch_size", c.batch_size},
            {"crop_seconds", c.crop_seconds},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    JsonFields f(j, "train");
    f.get("lr", c.lr)
        .get("weight_decay", c.weight_decay)
        .get("vae_steps", c.vae_steps)
        .get("flow_steps", c.flow_steps)
        .get("adapt_steps", c.adapt_steps)
        .get("batch_size", c.batch_size)
        .get("crop_seconds", c.crop_seconds)
        .get("checkpoint_every", c.checkpoint_every);
    f.finish();
    c.validate();
    return c;
}

std::vector<ClipPair> load_split(const fs::path& corpus_dir, const std::string& split) {
    std::vector<ClipPair> out;
    for (const auto& c : list_corpus(corpus_dir, split)) {
        out.push_back({c.clip_id, read_wav(c.mix).wave, read_wav(c.clean).wave});
    }
    if (out.empty()) throw ConfigError("corpus split '" + split + "' under " + corpus_dir.string() + " is empty");
    return out;
}

namespace {

constexpr std::uint64_t kVaeStream = 0x766165;    // "vae"
constexpr std::uint64_t kFlowStream = 0x666c6f;   // "flo"
constexpr std::uint64_t kAdaptStream = 0x616470;  // "adp"

struct StepOut {
    Tensor total;
    std::vector<double> parts;
};

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.9g", v);
    return b;
}

// Keeps the header and rows up to `upto`, so a resumed run appends cleanly.
void prepare_csv(const fs::path& csv, const std::vector<std::string>& parts, std::int64_t upto) {
    std::string header = "step,loss";
    for (const auto& p : parts) header += "," + p;
    std::string kept = header + "\n";
    if (upto > 0) {
        std::ifstream in(csv);
        if (!in) throw IoError("resuming at step " + std::to_string(upto) + " but " + csv.string() + " is missing");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (!line.empty() && std::stoll(line.substr(0, line.find(','))) <= upto) kept += line + "\n";
        }
    }
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv.string());
    out << kept;
}

void save_optimizer(const fs::path& path, const OptimizerState& st, std::int64_t step) {
    Checkpoint ck;
    ck.model_type = "optimizer";
    ck.meta["step"] = step;
    add_optimizer_state(ck, st);
    save_checkpoint(path, ck);
}

std::int64_t load_optimizer(const fs::path& path, OptimizerState& st) {
    auto ck = load_checkpoint(path);
    if (ck.model_type != "optimizer") throw IoError(path.string() + " is not an optimizer state file");
    restore_optimizer_state(ck, st);
    return ck.meta.at("step").get<std::int64_t>();
}

TrainResult run_loop(ParamSet<float>& params, AdamW<float>& optim, std::int64_t start, std::int64_t steps,
                     const RunOptions& opt, std::int64_t every, const fs::path& csv,
                     const std::vector<std::string>& parts, const std::function<StepOut(std::int64_t)>& step_fn,
                     const std::function<void(std::int64_t)>& save, const std::string& what) {
    prepare_csv(csv, parts, start);
    std::ofstream rows(csv, std::ios::app);
    const auto end = opt.stop_after >= 0 ? std::min(steps, opt.stop_after) : steps;
    TrainResult res{{}, start, start};
    for (std::int64_t s = start; s < end; ++s) {
        try {
            params.zero_grad();
            auto out = step_fn(s);
            const double loss = out.total.item();
            if (!std::isfinite(loss)) throw TrainingError("non-finite " + what + " loss");
            out.total.backward();
            optim.step(params);
            res.losses.push_back(loss);
            rows << s + 1 << "," << fmt(loss);
            for (double p : out.parts) rows << "," << fmt(p);
            rows << "\n" << std::flush;
        } catch (const Error& e) {
            // Parameters are untouched by the failed step: they are the last good state.
            save(s);
            throw TrainingError(what + " step " + std::to_string(s + 1) + ": " + e.what() +
                                "; last good checkpoint (step " + std::to_string(s) + ") kept");
        }
        res.last_step = s + 1;
        if ((s + 1) % every == 0 || s + 1 == end) save(s + 1);
        if (opt.log && ((s + 1) % 25 == 0 || s + 1 == end)) {
            opt.log(what + " step " + std::to_string(s + 1) + "/" + std::to_string(steps) + " loss " + fmt(res.losses.back()));
        }
    }
    return res;
}

std::int64_t crop_len(const TrainConfig& t, std::int64_t available, double rate) {
    return std::min<std::int64_t>(available, std::max<std::int64_t>(1, std::llround(t.crop_seconds * rate)));
}

Tensor wave_crop(const Waveform& w, std::int64_t start, std::int64_t n) {
    return Tensor::from_data({1, n}, std::vector<float>(w.samples.begin() + start, w.samples.begin() + start + n));
}

struct LatentBatch {
    std::vector<Tensor> clean, mix;
};

LatentBatch latent_batch(const LatentSet& data, const TrainConfig& t, Rng& r) {
    LatentBatch b;
    for (std::int64_t k = 0; k < t.batch_size; ++k) {
        const auto& p = data.pairs[r.below(data.pairs.size())];
        const auto len = std::min(p.clean.rows(), p.mix.rows());
        const auto n = crop_len(t, len, data.frame_rate);
        const auto at = static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(len - n + 1)));
        b.clean.push_back(slice_rows(p.clean, at, n).detach());
        b.mix.push_back(slice_rows(p.mix, at, n).detach());
    }
    return b;
}

}  // namespace

TrainResult train_vae(const CompressorConfig& cfg, const TrainConfig& train, const std::vector<ClipPair>& data,
                      const fs::path& out_dir, const RunOptions& opt) {
    cfg.validate();
    train.validate();
    if (data.empty()) throw ConfigError("no training clips");
    fs::create_directories(out_dir);
    const auto ckpt = out_dir / "compressor.ckpt", ostate = out_dir / "compressor.optim";
    Compressor model(cfg, opt.seed);
    AdamW<float> optim(AdamWConfig{train.lr, 0.9, 0.999, 1e-8, train.weight_decay});
    std::int64_t start = 0;
    if (opt.resume && fs::exists(ckpt) && fs::exists(ostate)) {
        auto loaded = load_compressor(ckpt);
        if (to_json(loaded.config()) != to_json(cfg)) throw ConfigError(ckpt.string() + " was trained with another compressor config");
        model.params().load_values(load_checkpoint(ckpt).tensors_with_prefix(""), true);
        start = load_optimizer(ostate, optim.state());
        if (opt.log) opt.log("resuming VAE training at step " + std::to_string(start));
    }
    const Rng root(opt.seed, kVaeStream);
    auto step = [&](std::int64_t s) {
        Rng r = root.fork(static_cast<std::uint64_t>(s));
        std::vector<Tensor> clips;
        for (std::int64_t k = 0; k < train.batch_size; ++k) {
            const auto pick = r.below(2 * data.size());
            const auto& w = pick % 2 ? data[pick / 2].mix : data[pick / 2].clean;
            const auto n = crop_len(train, static_cast<std::int64_t>(w.size()), cfg.sample_rate);
            const auto at = static_cast<std::int64_t>(r.below(w.size() - static_cast<std::size_t>(n) + 1));
            clips.push_back(wave_crop(w, at, n));
        }
        Rng noise = r.fork(1);
        auto l = vae_loss(model, clips, noise);
        return StepOut{l.total, {l.recon, l.kl}};
    };
    auto save = [&](std::int64_t s) {
        nlohmann::json meta = {{"step", s}, {"seed", opt.seed}, {"train", to_json(train)}, {"run", opt.echo}};
        save_compressor(ckpt, model, meta);
        save_optimizer(ostate, optim.state(), s);
    };
    return run_loop(model.params(), optim, start, train.vae_steps, opt, train.checkpoint_every,
                    out_dir / "vae_loss.csv", {"recon", "kl"}, step, save, "vae");
}

LatentSet encode_pairs(const Compressor& compressor, const std::vector<ClipPair>& data) {
    NoGradGuard guard;
    LatentSet set;
    set.frame_rate = compressor.config().latent_rate();
    for (const auto& p : data) {
        auto as_tensor = [](const Waveform& w) {
            return Tensor::from_data({1, static_cast<std::int64_t>(w.size())}, w.samples);
        };
        set.pairs.push_back({compressor.encode(as_tensor(p.clean)).mu, compressor.encode(as_tensor(p.mix)).mu});
    }
    return set;
}

TrainResult train_flow(const UditConfig& cfg, const FlowPathConfig& path, const TrainConfig& train,
                       const LatentSet& data, const fs::path& out_dir, const RunOptions& opt) {
    cfg.validate();
    train.validate();
    if (data.pairs.empty()) throw ConfigError("no training latents");
    if (data.pairs.front().clean.cols() != cfg.latent_dim) {
        throw ConfigError("latent width " + std::to_string(data.pairs.front().clean.cols()) +
                          " does not match udit.latent_dim " + std::to_string(cfg.latent_dim));
    }
    fs::create_directories(out_dir);
    const auto ckpt = out_dir / "udit.ckpt", ostate = out_dir / "udit.optim";
    Udit model(cfg, opt.seed);
    AdamW<float> optim(AdamWConfig{train.lr, 0.9, 0.999, 1e-8, train.weight_decay});
    std::int64_t start = 0;
    if (opt.resume && fs::exists(ckpt) && fs::exists(ostate)) {
        auto ck = load_checkpoint(ckpt);
        if (ck.meta.at("config") != to_json(cfg)) {
            throw ConfigError(ckpt.string() + " was trained with another udit config");
        }
        model.params().load_values(ck.tensors_with_prefix(""), true);
        start = load_optimizer(ostate, optim.state());
        if (opt.log) opt.log("resuming flow training at step " + std::to_string(start));
    }
    const Rng root(opt.seed, kFlowStream);
    auto step = [&](std::int64_t s) {
        Rng r = root.fork(static_cast<std::uint64_t>(s));
        auto b = latent_batch(data, train, r);
        Rng noise = r.fork(1);
        return StepOut{cfm_loss(velocity_of(model), b.clean, b.mix, noise, path), {}};
    };
    auto save = [&](std::int64_t s) {
        nlohmann::json meta = {{"step", s}, {"seed", opt.seed}, {"train", to_json(train)}, {"run", opt.echo}};
        save_udit(ckpt, model, meta);
        save_optimizer(ostate, optim.state(), s);
    };
    return run_loop(model.params(), optim, start, train.flow_steps, opt, train.checkpoint_every,
                    out_dir / "flow_loss.csv", {}, step, save, "flow");
}

std::string to_string(AdaptMode m) {
    switch (m) {
        case AdaptMode::kFull: return "full";
        case AdaptMode::kLora: return "lora";
        case AdaptMode::kMoeLora: return "moelora";
    }
    return "?";
}

AdaptMode adapt_mode_from_string(const std::string& s) {
    if (s == "full") return AdaptMode::kFull;
    if (s == "lora") return AdaptMode::kLora;
    if (s == "moelora") return AdaptMode::kMoeLora;
    throw ConfigError("unknown adaptation mode '" + s + "' (full, lora, moelora)");
}

AdaptResult adapt(const fs::path& backbone, const FlowPathConfig& path, const TrainConfig& train,
                  const AdaptOptions& how, const LatentSet& data, const fs::path& out_dir, const RunOptions& opt) {
    train.validate();
    if (data.pairs.empty()) throw ConfigError("no adaptation latents");
    if (how.extend && how.mode != AdaptMode::kMoeLora) throw ConfigError("--extend applies to moelora adapters only");
    if (how.extend && (how.prior_adapters.empty() || !fs::exists(how.prior_adapters))) {
        throw ConfigError("--extend needs a prior MoELoRA adapter checkpoint (--adapters)");
    }
    if (!fs::exists(backbone)) throw IoError("backbone checkpoint not found: " + backbone.string());
    Udit model = load_udit(backbone);
    AdapterSetup setup = how.setup;
    if (how.mode != AdaptMode::kFull) {
        if (how.extend) {
            setup = load_adapters(how.prior_adapters, model);
            if (setup.mode != AdapterMode::kMoeLora) {
                throw ConfigError(how.prior_adapters.string() + " holds plain LoRA adapters; --extend needs MoELoRA");
            }
            extend_with_expert(model, opt.seed);
        } else {
            setup.mode = how.mode == AdaptMode::kLora ? AdapterMode::kLora : AdapterMode::kMoeLora;
            if (setup.mode == AdapterMode::kLora) {
                setup.bank.num_experts = 1;
                setup.bank.top_k = 1;
            }
            setup.bank.use_router = setup.mode == AdapterMode::kMoeLora;
            inject(model, setup, opt.seed);
        }
    }
    fs::create_directories(out_dir);
    AdaptResult res;
    res.params = count_parameters(model);
    if (opt.log) {
        char b[160];
        std::snprintf(b, sizeof b, "adapt mode %s%s: trainable parameters %lld of %lld (%.2f%%)",
                      to_string(how.mode).c_str(), how.extend ? " +extend" : "",
                      static_cast<long long>(res.params.trainable), static_cast<long long>(res.params.total),
                      100.0 * res.params.fraction());
        opt.log(b);
    }
    std::map<std::string, std::vector<float>> frozen;
    for (const auto& p : model.params().entries()) {
        if (!p.trainable) frozen[p.name] = p.value.to_vector();
    }

    AdamW<float> optim(AdamWConfig{train.lr, 0.9, 0.999, 1e-8, train.weight_decay});
    const Rng root(opt.seed, kAdaptStream);
    const double lb = how.mode == AdaptMode::kFull ? 0.0 : setup.bank.load_balance_weight;
    auto step = [&](std::int64_t s) {
        Rng r = root.fork(static_cast<std::uint64_t>(s));
        auto b = latent_batch(data, train, r);
        Rng noise = r.fork(1), gate_noise = r.fork(2);
        std::vector<GateRecord<float>> records;
        RoutingContext<float> ctx{true, &gate_noise, &records};
        auto loss = cfm_loss(velocity_of(model, &ctx), b.clean, b.mix, noise, path);
        double balance = 0;
        if (lb > 0 && !records.empty()) {
            auto l = load_balance_loss(records);
            balance = l.item();
            loss = add(loss, scale(l, static_cast<float>(lb)));
        }
        return StepOut{loss, {balance}};
    };
    const auto ckpt = out_dir / (how.mode == AdaptMode::kFull ? "udit.ckpt" : "adapters.ckpt");
    auto save = [&](std::int64_t s) {
        nlohmann::json meta = {{"step", s},
                               {"seed", opt.seed},
                               {"backbone", fs::absolute(backbone).string()},
                               {"mode", to_string(how.mode)},
                               {"extended", how.extend},
                               {"train", to_json(train)},
                               {"run", opt.echo}};
        if (how.mode == AdaptMode::kFull) save_udit(ckpt, model, meta);
        else save_adapters(ckpt, model, setup, meta);
    };
    RunOptions fresh = opt;
    fresh.resume = false;
    res.train = run_loop(model.params(), optim, 0, train.adapt_steps, fresh, train.checkpoint_every,
                         out_dir / "adapt_loss.csv", {"load_balance"}, step, save, "adapt");
    for (const auto& p : model.params().entries()) {
        auto it = frozen.find(p.name);
        if (it != frozen.end() && p.value.to_vector() != it->second) res.frozen_unchanged = false;
    }
    if (opt.log) opt.log(std::string("frozen-tensor snapshot check: ") + (res.frozen_unchanged ? "pass" : "FAIL"));
    return res;
}

}  // namespace latflow
