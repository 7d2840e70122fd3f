// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// The single JSON document every command reads. Sections: data, compressor,
// udit, flow, adapters, train, eval. Missing keys take the preset's value;
// unknown keys are rejected.

#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "latflow/adapters/inject.hpp"
#include "latflow/data/datasetgen.hpp"
#include "latflow/flow/flow.hpp"
#include "latflow/models/compressor.hpp"
#include "latflow/models/udit.hpp"
#include "latflow/train/train.hpp"

namespace latflow {

struct FlowSection {
    FlowPathConfig path;
    SolverConfig solver;
};

struct EvalSection {
    bool measure_rtf = true;
    std::int64_t rtf_clips = 4;  // clips timed for the RTF summary
    std::string scorer;          // external scorer command; empty = none
    std::int64_t workers = 0;    // 0 = hardware concurrency
};

struct RunConfig {
    CorpusConfig data;
    CompressorConfig compressor;
    UditConfig udit;
    FlowSection flow;
    AdapterSetup adapters = adapter_preset(AdapterMode::kMoeLora);
    TrainConfig train;
    EvalSection eval;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// "full": full-size defaults. "desk": shrunk so the whole pipeline runs in
// minutes on one laptop core.
nlohmann::json preset_json(const std::string& name);

// preset, then the file (if any) merged over it as a JSON merge patch.
RunConfig load_run_config(const std::string& preset, const std::filesystem::path& file = {});

}  // namespace latflow
