// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded distortion stages. Every stage preserves length and sample rate and
// is a pure function of its inputs (seeds included).

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latflow/core/rng.hpp"
#include "latflow/signal/wav.hpp"

namespace latflow {

// Full linear convolution (FFT) truncated to len(x); no gain normalisation.
Waveform convolve_rir(const Waveform& x, const Waveform& rir);

// Scales noise (tiled or trimmed from `offset`) so the speech-to-noise power
// ratio is snr_db, and returns the sum. +∞ returns the speech unchanged.
Waveform add_noise_at_snr(const Waveform& speech, const Waveform& noise, double snr_db, std::size_t offset = 0);

// Hard clip at ±threshold·max|x|, 0 < threshold ≤ 1.
Waveform clip(const Waveform& x, double threshold);

// Zero-phase 8th-order Butterworth low-pass (forward-backward, odd-reflection
// padding, steady-state initial conditions so DC passes exactly).
Waveform bandlimit(const Waveform& x, double cutoff_hz);

// Zeroes each frame_ms frame independently with probability loss_rate.
Waveform packet_loss(const Waveform& x, double frame_ms, double loss_rate, std::uint64_t seed);

enum class CodecFallback { kAuto, kForce, kOff };

struct CodecConfig {
    int complexity = 10;
    double frame_ms = 20.0;
    CodecFallback fallback = CodecFallback::kAuto;
};

struct CodecResult {
    Waveform wave;
    std::string backend;  // "opus" or "simulated"
    std::int64_t delay = 0;
};

inline constexpr int kMinCodecBitrate = 30000;
inline constexpr int kMaxCodecBitrate = 40000;

// Uniform integer bitrate in [30000, 40000] bps.
int draw_codec_bitrate(Rng& rng);

// Opus encode/decode when libopus can be loaded, else (unless disabled) a
// framed band-limit + quantisation simulator. Delay is removed by
// cross-correlation alignment; output length = input length.
CodecResult codec_roundtrip(const Waveform& x, int bitrate_bps, const CodecConfig& cfg = {});

bool opus_available();

struct DistortionStage {
    std::string kind;  // reverb | noise | codec | clip | bandlimit | packet_loss
    nlohmann::json params = nlohmann::json::object();
    std::uint64_t seed = 0;
};

struct DistortionSpec {
    std::vector<DistortionStage> stages;
};

nlohmann::json to_json(const DistortionSpec& spec);
DistortionSpec distortion_spec_from_json(const nlohmann::json& j);

// Loads the audio a stage names (RIR or noise file).
using AudioResolver = std::function<Waveform(const std::string&)>;
AudioResolver wav_resolver(const std::filesystem::path& base_dir);

// Applies stages in order. Stage failures are rethrown with their index and
// kind prepended, keeping the error category.
Waveform apply_chain(const Waveform& x, const DistortionSpec& spec, const AudioResolver& resolve);

}  // namespace latflow
