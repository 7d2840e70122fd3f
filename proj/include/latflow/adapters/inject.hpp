// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Attaching adapter banks to a trained uDiT, growing them by one expert, and
// storing them apart from the backbone.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latflow/adapters/moelora.hpp"
#include "latflow/models/udit.hpp"

namespace latflow {

enum class AdapterMode { kLora, kMoeLora };

struct AdapterSetup {
    AdapterMode mode = AdapterMode::kMoeLora;
    std::vector<std::string> targets;
    AdapterConfig bank;
};

// Plain LoRA on the query/value projections; MoELoRA on all attention
// projections plus the feed-forward branch.
AdapterSetup adapter_preset(AdapterMode mode);

// Freezes every existing parameter, then gives each targeted map in every
// block a fresh bank under "adapters.block<i>.<target>". Outputs are
// unchanged (B = 0). Unknown or empty targets → ConfigError.
template <typename T>
void inject(UditT<T>& model, const AdapterSetup& setup, std::uint64_t seed);

// Appends one zero-initialised expert per bank. Afterwards only the new
// experts and the router parameters are trainable.
template <typename T>
void extend_with_expert(UditT<T>& model, std::uint64_t seed);

struct ParamCount {
    std::int64_t trainable = 0, total = 0;
    double fraction() const { return total ? double(trainable) / double(total) : 0.0; }
};

template <typename T>
ParamCount count_parameters(const UditT<T>& model);

// model_type "adapters"; meta records the setup and experts per bank so a
// backbone plus this file reconstructs the adapted model.
void save_adapters(const std::filesystem::path& path, const Udit& model, const AdapterSetup& setup,
                   const nlohmann::json& meta = {});
// Injects into `model` (a freshly loaded backbone) and loads the adapter
// tensors; returns the stored setup.
AdapterSetup load_adapters(const std::filesystem::path& path, Udit& model);

std::string to_string(AdapterMode mode);
AdapterMode adapter_mode_from_string(const std::string& s);
nlohmann::json to_json(const AdapterSetup& setup);
AdapterSetup adapter_setup_from_json(const nlohmann::json& j);

}  // namespace latflow
