// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <vector>

namespace latflow {

inline constexpr int kSampleRate = 8000;

struct Waveform {
    std::vector<float> samples;
    int sample_rate = kSampleRate;

    std::size_t size() const { return samples.size(); }
    double duration() const { return double(samples.size()) / double(sample_rate); }
};

// Rational-ratio polyphase resampler with a Kaiser-windowed sinc prototype.
std::vector<float> resample(const std::vector<float>& x, int from_rate, int to_rate);

struct WavReadResult {
    Waveform wave;
    int original_rate = 0;
    bool resampled = false;
};

// Reads PCM 16-bit or IEEE float WAV; channels are averaged to mono and the
// result resampled to `target_rate` (0 keeps the file rate). Throws IoError.
WavReadResult read_wav(const std::filesystem::path& path, int target_rate = kSampleRate);

// Writes PCM 16-bit mono (scale 32768, saturating); atomic via rename.
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace latflow
