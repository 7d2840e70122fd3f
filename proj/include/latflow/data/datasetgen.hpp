// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Corpus synthesis from an RIR inventory: stationary speakers (one fixed RIR
// position per speaker per scene), reverberant noise at a drawn SNR, then a
// post-mix distortion chain. No gain normalisation between convolution and
// summation, so level varies naturally with position.
//
// On-disk layout under the output directory:
//   index.jsonl                        one scene per line
//   corpus.json                        config echo, seed, version
//   <split>/<scene_id>/manifest.json   scene manifest (all clips)
//   <split>/<scene_id>/<clip>_{mix,clean}.wav and <clip>_ref<k>.wav

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latflow/core/rng.hpp"
#include "latflow/distort/distort.hpp"
#include "latflow/signal/wav.hpp"

namespace latflow {

inline constexpr int kManifestSchemaVersion = 1;

struct RirPosition {
    std::string id;
    std::string rir;                   // path relative to the inventory file
    std::optional<double> distance_m;  // source–microphone distance when known
};

struct InventoryScene {
    std::string id;
    std::vector<RirPosition> positions;
};

struct SpeechItem {
    std::string path;
    std::string speaker;
};

struct RirInventory {
    std::filesystem::path base_dir;
    std::vector<InventoryScene> scenes;
    std::vector<SpeechItem> speech;
    std::vector<std::string> noise, music;

    const InventoryScene& scene(const std::string& id) const;
    std::filesystem::path resolve(const std::string& rel) const;
    // ≥ 1 position per scene, unique ids, distances within [1, 8] m when given.
    void validate() const;
};

// Missing file → IoError naming the path.
RirInventory load_inventory(const std::filesystem::path& path);
void save_inventory(const std::filesystem::path& path, const RirInventory& inv);

// Evenly spaced indices over a track of `track_len` responses; first and last
// included when count ≥ 2.
std::vector<std::int64_t> discretize_positions(std::int64_t track_len, std::int64_t count);

struct SourceEntry {
    std::string role;      // speech | noise | music
    std::string path;
    std::string position;  // RIR position id within the scene
    std::int64_t offset = 0;   // placement in the mixture (samples)
    std::int64_t begin = 0;    // first sample taken from the file
    std::int64_t length = -1;  // samples taken; −1 = to the end (noise tiles)
    double snr_db = 0.0;       // noise/music: level against the reverberant speech
    std::string speaker;       // speech only
};

// One synthetic mixture.
struct SceneManifest {
    std::string scene_id, clip_id, split;
    std::uint64_t seed = 0;
    std::int64_t length = 0;  // mixture samples
    std::vector<SourceEntry> sources;
    DistortionSpec post;
    std::string noise_rir_policy = "independent-per-clip";
};

struct BuiltScene {
    Waveform mixture;
    std::vector<Waveform> references;  // dry, aligned to the direct path, one per speech source
    Waveform clean;                    // sum of references
};

// Missing audio → IngestionError naming the path.
BuiltScene build_scene(const SceneManifest& m, const RirInventory& inv);

struct CorpusConfig {
    std::int64_t train_scenes = 6, val_scenes = 2, test_scenes = 2;
    std::int64_t clips_per_scene = 8;
    double clip_seconds = 2.0;
    std::int64_t speakers_per_clip = 1;
    std::int64_t noises_per_clip = 1;
    double music_prob = 0.0;
    double snr_min_db = 0.0, snr_max_db = 15.0;
    double codec_prob = 1.0;
    std::string codec_fallback = "auto";
    double clip_prob = 0.0, bandlimit_prob = 0.0, packet_loss_prob = 0.0;
    std::int64_t workers = 0;  // 0 = hardware concurrency

    void validate() const;
};

nlohmann::json to_json(const CorpusConfig& c);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneManifest& m);
SceneManifest scene_manifest_from_json(const nlohmann::json& j);

// Pure planning step: every manifest follows from (config, inventory, seed).
// Scenes and speakers are partitioned disjointly across splits; a pool too
// small for the configured counts → ConfigError.
std::vector<SceneManifest> plan_corpus(const CorpusConfig& cfg, const RirInventory& inv, std::uint64_t seed);

// Plans, builds every clip (worker pool over scenes) and writes the layout above.
std::vector<SceneManifest> generate_corpus(const CorpusConfig& cfg, const RirInventory& inv, std::uint64_t seed,
                                           const std::filesystem::path& out_dir);

struct CorpusClip {
    std::string clip_id, scene_id, split;
    std::filesystem::path mix, clean;
};

// Reads index.jsonl and the scene manifests of one split.
std::vector<CorpusClip> list_corpus(const std::filesystem::path& corpus_dir, const std::string& split);

// Exponentially decaying white-noise tail (−60 dB at rt60) behind a unit
// direct-path impulse at sample 0.
Waveform toy_rir(Rng& rng, double rt60_s, double length_s, int rate = kSampleRate);

// Toy audio for desk runs: a voiced, syllabic "utterance" with a
// speaker-dependent pitch, and coloured background noise.
Waveform toy_speech(Rng& rng, double seconds, double f0_hz, int rate = kSampleRate);
Waveform toy_noise(Rng& rng, double seconds, int rate = kSampleRate);

// Writes a complete toy inventory (speech, noise, RIR tracks discretised to
// fixed positions) and returns it.
RirInventory make_toy_inventory(const std::filesystem::path& dir, std::int64_t scenes, std::int64_t speakers,
                                std::int64_t utterances_per_speaker, std::uint64_t seed);

}  // namespace latflow
