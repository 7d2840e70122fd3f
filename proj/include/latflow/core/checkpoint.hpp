// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint file layout:
//
//   bytes [0, 8)        little-endian uint64 header length H
//   bytes [8, 8+H)      UTF-8 JSON header
//   bytes [8+H, ...)    little-endian float32 payloads, concatenated in
//                       header order
//
// The header holds {"format_version", "model_type", "meta", "tensors"}, where
// each tensor entry is {"name", "shape", "offset", "length"} with offset and
// length counted in float32 elements relative to the payload start.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "latflow/core/optim.hpp"
#include "latflow/core/params.hpp"

namespace latflow {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::string model_type;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<CheckpointTensor> tensors;

    void add(const std::string& name, const Shape& shape, std::vector<float> data);
    const CheckpointTensor* find(const std::string& name) const;
    // Tensors whose names start with `prefix`, with the prefix stripped.
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors_with_prefix(const std::string& prefix) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
void add_params(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix = "");

// Optimizer moments are stored as tensors named "<prefix>m/<param>" and
// "<prefix>v/<param>"; scalars go to meta["optimizer"].
void add_optimizer_state(Checkpoint& ckpt, const OptimizerState& state, const std::string& prefix = "optim.");
void restore_optimizer_state(const Checkpoint& ckpt, OptimizerState& state, const std::string& prefix = "optim.");

}  // namespace latflow
