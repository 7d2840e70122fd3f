// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/config/run_config.hpp"

#include <fstream>

#include "latflow/core/error.hpp"
#include "latflow/core/json_fields.hpp"

namespace latflow {

namespace {

nlohmann::json to_json(const FlowSection& f) {
    return {{"sigma_min", f.path.sigma_min}, {"steps", f.solver.steps}, {"scheme", to_string(f.solver.scheme)}};
}

FlowSection flow_from_json(const nlohmann::json& j) {
    FlowSection f;
    std::string scheme = to_string(f.solver.scheme);
    JsonFields g(j, "flow");
    g.get("sigma_min", f.path.sigma_min).get("steps", f.solver.steps).get("scheme", scheme);
    g.finish();
    f.solver.scheme = ode_scheme_from_string(scheme);
    if (!(f.path.sigma_min >= 0 && f.path.sigma_min < 1)) throw ConfigError("flow.sigma_min must lie in [0, 1)");
    f.solver.validate();
    return f;
}

nlohmann::json to_json(const EvalSection& e) {
    return {{"measure_rtf", e.measure_rtf}, {"rtf_clips", e.rtf_clips}, {"scorer", e.scorer}, {"workers", e.workers}};
}

EvalSection eval_from_json(const nlohmann::json& j) {
    EvalSection e;
    JsonFields g(j, "eval");
    g.get("measure_rtf", e.measure_rtf).get("rtf_clips", e.rtf_clips).get("scorer", e.scorer).get("workers", e.workers);
    g.finish();
    if (e.rtf_clips < 1) throw ConfigError("eval.rtf_clips must be >= 1");
    return e;
}

}  // namespace

void RunConfig::validate() const {
    data.validate();
    compressor.validate();
    udit.validate();
    flow.solver.validate();
    adapters.bank.validate();
    train.validate();
    if (compressor.latent_dim != udit.latent_dim) {
        throw ConfigError("compressor.latent_dim (" + std::to_string(compressor.latent_dim) +
                          ") must equal udit.latent_dim (" + std::to_string(udit.latent_dim) + ")");
    }
}

nlohmann::json to_json(const RunConfig& c) {
    return {{"data", to_json(c.data)},         {"compressor", to_json(c.compressor)}, {"udit", to_json(c.udit)},
            {"flow", to_json(c.flow)},         {"adapters", to_json(c.adapters)},     {"train", to_json(c.train)},
            {"eval", to_json(c.eval)}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    JsonFields f(j, "config");
    if (const auto* s = f.sub("data")) c.data = corpus_config_from_json(*s);
    if (const auto* s = f.sub("compressor")) c.compressor = compressor_config_from_json(*s);
    if (const auto* s = f.sub("udit")) c.udit = udit_config_from_json(*s);
    if (const auto* s = f.sub("flow")) c.flow = flow_from_json(*s);
    if (const auto* s = f.sub("adapters")) c.adapters = adapter_setup_from_json(*s);
    if (const auto* s = f.sub("train")) c.train = train_config_from_json(*s);
    if (const auto* s = f.sub("eval")) c.eval = eval_from_json(*s);
    f.finish();
    c.validate();
    return c;
}

nlohmann::json preset_json(const std::string& name) {
    auto j = to_json(RunConfig{});
    if (name == "full") return j;
    if (name != "desk") throw ConfigError("unknown preset '" + name + "' (desk, full)");
    j.merge_patch({
        {"compressor", {{"latent_dim", 16}, {"embed_dim", 16}, {"blocks", 1}, {"lstm_hidden", 16}, {"attn_heads", 2},
                        {"attn_qk_dim", 2}}},
        {"udit", {{"latent_dim", 16}, {"layers", 4}, {"embed_dim", 64}, {"heads", 4}, {"max_len", 128},
                  {"time_freq_dim", 64}}},
        {"train", {{"lr", 2e-3}, {"vae_steps", 400}, {"flow_steps", 300}, {"batch_size", 4}, {"crop_seconds", 1.0},
                   {"checkpoint_every", 100}}},
    });
    return j;
}

RunConfig load_run_config(const std::string& preset, const std::filesystem::path& file) {
    auto j = preset_json(preset);
    if (!file.empty()) {
        std::ifstream f(file);
        if (!f) throw IoError("config file not found: " + file.string());
        nlohmann::json patch;
        try {
            patch = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(file.string() + ": " + e.what());
        }
        if (!patch.is_object()) throw ConfigError(file.string() + ": expected a JSON object");
        j.merge_patch(patch);
    }
    return run_config_from_json(j);
}

}  // namespace latflow
