// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace latflow {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void Checkpoint::add(const std::string& name, const Shape& shape, std::vector<float> data) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw DimensionError("checkpoint tensor " + name + " has inconsistent shape");
    }
    tensors.push_back({name, shape, std::move(data)});
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

std::map<std::string, std::pair<Shape, std::vector<float>>> Checkpoint::tensors_with_prefix(
    const std::string& prefix) const {
    std::map<std::string, std::pair<Shape, std::vector<float>>> out;
    for (const auto& t : tensors) {
        if (t.name.compare(0, prefix.size(), prefix) == 0) out[t.name.substr(prefix.size())] = {t.shape, t.data};
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["model_type"] = ckpt.model_type;
    header["meta"] = ckpt.meta;
    auto entries = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"length", t.data.size()}});
        offset += t.data.size();
    }
    header["tensors"] = entries;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot write checkpoint " + tmp.string());
        const std::uint64_t len = text.size();
        os.write(reinterpret_cast<const char*>(&len), sizeof(len));
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : ckpt.tensors) {
            os.write(reinterpret_cast<const char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        }
        if (!os) throw IoError("short write to checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!is || len > (1ull << 32)) throw IoError("corrupt checkpoint header in " + path.string());
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("truncated checkpoint header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("invalid checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format_version", 0) != kCheckpointFormatVersion) {
        throw IoError("unsupported checkpoint format version in " + path.string());
    }
    Checkpoint ckpt;
    ckpt.model_type = header.value("model_type", "");
    ckpt.meta = header.value("meta", nlohmann::json::object());
    std::vector<float> payload;
    for (const auto& e : header.at("tensors")) {
        const auto length = e.at("length").get<std::uint64_t>();
        CheckpointTensor t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<Shape>();
        t.data.resize(length);
        is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(length * sizeof(float)));
        if (!is) throw IoError("truncated checkpoint payload for " + t.name + " in " + path.string());
        if (shape_numel(t.shape) != static_cast<std::int64_t>(length)) {
            throw IoError("checkpoint tensor " + t.name + " has inconsistent shape");
        }
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

template <typename T>
void add_params(Checkpoint& ckpt, const ParamSet<T>& params, const std::string& prefix) {
    for (const auto& p : params.entries()) {
        auto d = p.value.data();
        ckpt.add(prefix + p.name, p.value.shape(), std::vector<float>(d.begin(), d.end()));
    }
}

template void add_params<float>(Checkpoint&, const ParamSet<float>&, const std::string&);
template void add_params<double>(Checkpoint&, const ParamSet<double>&, const std::string&);

void add_optimizer_state(Checkpoint& ckpt, const OptimizerState& state, const std::string& prefix) {
    ckpt.meta["optimizer"] = {{"step", state.step},
                              {"lr", state.config.lr},
                              {"beta1", state.config.beta1},
                              {"beta2", state.config.beta2},
                              {"eps", state.config.eps},
                              {"weight_decay", state.config.weight_decay}};
    for (const auto& [name, m] : state.first_moment) {
        ckpt.add(prefix + "m/" + name, {static_cast<std::int64_t>(m.size())}, m);
    }
    for (const auto& [name, v] : state.second_moment) {
        ckpt.add(prefix + "v/" + name, {static_cast<std::int64_t>(v.size())}, v);
    }
}

void restore_optimizer_state(const Checkpoint& ckpt, OptimizerState& state, const std::string& prefix) {
    if (!ckpt.meta.contains("optimizer")) throw IoError("checkpoint carries no optimizer state");
    const auto& o = ckpt.meta.at("optimizer");
    state.step = o.at("step").get<std::int64_t>();
    state.config.lr = o.at("lr").get<double>();
    state.config.beta1 = o.at("beta1").get<double>();
    state.config.beta2 = o.at("beta2").get<double>();
    state.config.eps = o.at("eps").get<double>();
    state.config.weight_decay = o.at("weight_decay").get<double>();
    state.first_moment.clear();
    state.second_moment.clear();
    for (auto& [name, t] : ckpt.tensors_with_prefix(prefix + "m/")) state.first_moment[name] = t.second;
    for (auto& [name, t] : ckpt.tensors_with_prefix(prefix + "v/")) state.second_moment[name] = t.second;
}

}  // namespace latflow
