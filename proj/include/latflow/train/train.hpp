// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Training loops for the compressor, the flow model and adapters.
//
// Every run directory holds a model checkpoint, an optimizer-state file next
// to it (".optim"), and a loss CSV with one row per completed step. A run
// resumes from those files bit-exactly: batch selection and noise for step s
// are drawn from a generator forked on s.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latflow/adapters/inject.hpp"
#include "latflow/flow/flow.hpp"
#include "latflow/models/compressor.hpp"
#include "latflow/signal/wav.hpp"

namespace latflow {

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 0.0;
    std::int64_t vae_steps = 200;
    std::int64_t flow_steps = 300;
    std::int64_t adapt_steps = 50;
    std::int64_t batch_size = 4;
    double crop_seconds = 1.0;  // random crop per example; clips shorter are used whole
    std::int64_t checkpoint_every = 50;
    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ClipPair {
    std::string id;
    Waveform mix, clean;
};

// Loads a corpus split in index order; an empty split → ConfigError.
std::vector<ClipPair> load_split(const std::filesystem::path& corpus_dir, const std::string& split);

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
    std::uint64_t seed = 0;
    bool resume = true;            // continue from checkpoints found in out_dir
    std::int64_t stop_after = -1;  // ≥ 0: stop once this many steps are done (for staged runs)
    nlohmann::json echo;           // stored in checkpoint meta
    LogFn log;
};

struct TrainResult {
    std::vector<double> losses;  // this invocation's steps only
    std::int64_t first_step = 0, last_step = 0;
};

// <out>/compressor.ckpt, compressor.optim, vae_loss.csv (step,loss,recon,kl).
// The VAE sees clean and distorted clips alike. A non-finite loss or gradient
// aborts with TrainingError and leaves the last good checkpoint on disk.
TrainResult train_vae(const CompressorConfig& cfg, const TrainConfig& train, const std::vector<ClipPair>& data,
                      const std::filesystem::path& out_dir, const RunOptions& opt);

// Latent means of every clip (clean, distorted), computed once.
struct LatentPair {
    Tensor clean, mix;  // [L, D]
};
struct LatentSet {
    std::vector<LatentPair> pairs;
    double frame_rate = 50.0;  // latent frames per second
};
LatentSet encode_pairs(const Compressor& compressor, const std::vector<ClipPair>& data);

// <out>/udit.ckpt, udit.optim, flow_loss.csv (step,loss).
TrainResult train_flow(const UditConfig& cfg, const FlowPathConfig& path, const TrainConfig& train,
                       const LatentSet& data, const std::filesystem::path& out_dir, const RunOptions& opt);

enum class AdaptMode { kFull, kLora, kMoeLora };
std::string to_string(AdaptMode m);
AdaptMode adapt_mode_from_string(const std::string& s);

struct AdaptOptions {
    AdaptMode mode = AdaptMode::kMoeLora;
    AdapterSetup setup;                     // targets and bank shape for lora/moelora
    bool extend = false;                    // append one expert to prior adapters
    std::filesystem::path prior_adapters;  // required with extend
};

struct AdaptResult {
    TrainResult train;
    ParamCount params;
    bool frozen_unchanged = true;  // snapshot check over frozen tensors
};

// Adapts a backbone on `data`. full → <out>/udit.ckpt; lora/moelora →
// <out>/adapters.ckpt (backbone untouched). Logs the trainable share.
// extend without a prior MoELoRA checkpoint → ConfigError.
AdaptResult adapt(const std::filesystem::path& backbone, const FlowPathConfig& path, const TrainConfig& train,
                  const AdaptOptions& how, const LatentSet& data, const std::filesystem::path& out_dir,
                  const RunOptions& opt);

}  // namespace latflow
