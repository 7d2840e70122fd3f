// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/adapters/inject.hpp"

#include <algorithm>

#include "latflow/core/json_fields.hpp"

namespace latflow {

namespace {

constexpr const char* kAdapterPrefix = "adapters.";

bool is_adapter_param(const std::string& name) { return name.rfind(kAdapterPrefix, 0) == 0; }

std::string bank_name(std::size_t block, const std::string& target) {
    return std::string(kAdapterPrefix) + "block" + std::to_string(block) + "." + target;
}

}  // namespace

AdapterSetup adapter_preset(AdapterMode mode) {
    AdapterSetup s;
    s.mode = mode;
    if (mode == AdapterMode::kLora) {
        s.targets = {"Wq", "Wv"};
        s.bank.num_experts = 1;
        s.bank.top_k = 1;
        s.bank.use_router = false;
    } else {
        s.targets = {"Wq", "Wk", "Wv", "Wo", "mlp"};
    }
    return s;
}

template <typename T>
void inject(UditT<T>& model, const AdapterSetup& setup, std::uint64_t seed) {
    if (setup.targets.empty()) throw ConfigError("adapter targets must not be empty");
    auto cfg = setup.bank;
    cfg.use_router = setup.mode == AdapterMode::kMoeLora;
    cfg.validate();
    auto& blocks = model.blocks();
    for (const auto& t : setup.targets) {
        blocks.front().target_dims(t);  // validates the name
        if (std::count(setup.targets.begin(), setup.targets.end(), t) > 1) {
            throw ConfigError("adapter target '" + t + "' listed twice");
        }
    }
    for (const auto& b : blocks) {
        if (!b.adapters.empty()) throw ConfigError("model already carries adapters");
    }
    auto& ps = model.params();
    ps.freeze_all();
    Rng rng(seed, 0x61646170);  // "adap"
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        for (const auto& t : setup.targets) {
            auto [in, out] = blocks[i].target_dims(t);
            blocks[i].adapters[t] = AdapterBankT<T>::make(ps, rng, bank_name(i, t), in, out, cfg);
        }
    }
}

template <typename T>
void extend_with_expert(UditT<T>& model, std::uint64_t seed) {
    auto& ps = model.params();
    ps.freeze_all();
    Rng rng(seed, 0x65787464);  // "extd"
    bool any = false;
    for (auto& b : model.blocks()) {
        for (auto& [target, bank] : b.adapters) {
            bank->add_expert(ps, rng);
            for (auto& p : ps.entries()) {
                if (p.name.rfind(bank->router_prefix() + ".", 0) == 0) p.trainable = true;
            }
            any = true;
        }
    }
    if (!any) throw ConfigError("extend_with_expert needs an adapter-injected model");
}

template <typename T>
ParamCount count_parameters(const UditT<T>& model) {
    return {model.params().trainable_count(), model.params().total_count()};
}

std::string to_string(AdapterMode mode) { return mode == AdapterMode::kLora ? "lora" : "moelora"; }

AdapterMode adapter_mode_from_string(const std::string& s) {
    if (s == "lora") return AdapterMode::kLora;
    if (s == "moelora") return AdapterMode::kMoeLora;
    throw ConfigError("unknown adapter mode '" + s + "' (expected lora or moelora)");
}

nlohmann::json to_json(const AdapterSetup& s) {
    return {{"mode", to_string(s.mode)},
            {"targets", s.targets},
            {"rank", s.bank.rank},
            {"alpha", s.bank.alpha},
            {"num_experts", s.bank.num_experts},
            {"top_k", s.bank.top_k},
            {"renormalize", s.bank.renormalize},
            {"load_balance_weight", s.bank.load_balance_weight}};
}

AdapterSetup adapter_setup_from_json(const nlohmann::json& j) {
    std::string mode = "moelora";
    JsonFields f(j, "adapters");
    f.get("mode", mode);
    AdapterSetup s = adapter_preset(adapter_mode_from_string(mode));
    f.get("targets", s.targets)
        .get("rank", s.bank.rank)
        .get("alpha", s.bank.alpha)
        .get("num_experts", s.bank.num_experts)
        .get("top_k", s.bank.top_k)
        .get("renormalize", s.bank.renormalize)
        .get("load_balance_weight", s.bank.load_balance_weight);
    f.finish();
    s.bank.use_router = s.mode == AdapterMode::kMoeLora;
    s.bank.validate();
    return s;
}

void save_adapters(const std::filesystem::path& path, const Udit& model, const AdapterSetup& setup,
                   const nlohmann::json& meta) {
    Checkpoint ck;
    ck.model_type = "adapters";
    ck.meta = meta.is_object() ? meta : nlohmann::json::object();
    ck.meta["setup"] = to_json(setup);
    std::int64_t experts = 0;
    for (const auto& b : model.blocks()) {
        for (const auto& [t, bank] : b.adapters) experts = static_cast<std::int64_t>(bank->experts.size());
    }
    if (experts == 0) throw ContractError("model carries no adapters to save");
    ck.meta["experts_per_bank"] = experts;
    for (const auto& p : model.params().entries()) {
        if (is_adapter_param(p.name)) ck.add(p.name, p.value.shape(), p.value.to_vector());
    }
    save_checkpoint(path, ck);
}

AdapterSetup load_adapters(const std::filesystem::path& path, Udit& model) {
    auto ck = load_checkpoint(path);
    if (ck.model_type != "adapters") {
        throw IoError(path.string() + " holds a '" + ck.model_type + "' checkpoint, not adapters");
    }
    auto setup = adapter_setup_from_json(ck.meta.at("setup"));
    inject(model, setup, 0);
    const auto experts = ck.meta.at("experts_per_bank").get<std::int64_t>();
    for (auto n = setup.bank.num_experts; n < experts; ++n) extend_with_expert(model, 0);
    auto values = ck.tensors_with_prefix("");
    for (const auto& p : model.params().entries()) {
        if (is_adapter_param(p.name) && !values.count(p.name)) {
            throw IoError(path.string() + " lacks adapter tensor " + p.name);
        }
    }
    model.params().load_values(values, false);
    return setup;
}

template void inject(UditT<float>&, const AdapterSetup&, std::uint64_t);
template void inject(UditT<double>&, const AdapterSetup&, std::uint64_t);
template void extend_with_expert(UditT<float>&, std::uint64_t);
template void extend_with_expert(UditT<double>&, std::uint64_t);
template ParamCount count_parameters(const UditT<float>&);
template ParamCount count_parameters(const UditT<double>&);

}  // namespace latflow
