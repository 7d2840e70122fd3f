// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/signal/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "latflow/core/error.hpp"

namespace latflow {

std::vector<float> resample(const std::vector<float>& x, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw SignalError("sample rates must be positive");
    if (from_rate == to_rate || x.empty()) return x;
    const int g = std::gcd(from_rate, to_rate);
    const std::int64_t up = to_rate / g, down = from_rate / g;
    const std::int64_t factor = std::max(up, down);
    // Prototype at rate up*from_rate, cutoff at the lower Nyquist.
    constexpr std::int64_t kZeros = 16;
    const double beta = 8.6;
    const std::int64_t half = kZeros * factor;
    const double fc = 0.5 / double(factor);
    std::vector<double> h(static_cast<std::size_t>(2 * half + 1));
    const double i0b = std::cyl_bessel_i(0.0, beta);
    for (std::int64_t i = -half; i <= half; ++i) {
        const double r = double(i) / double(half);
        const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
        const double arg = 2.0 * fc * double(i);
        const double sinc = i == 0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
        h[i + half] = 2.0 * fc * sinc * win * double(up);
    }
    const auto n_in = static_cast<std::int64_t>(x.size());
    const std::int64_t n_out = (n_in * up + down - 1) / down;
    std::vector<float> y(static_cast<std::size_t>(n_out));
    for (std::int64_t m = 0; m < n_out; ++m) {
        // Output m sits at position m*down on the upsampled grid; only every
        // up-th tap meets a real input sample (the polyphase branch).
        const std::int64_t pos = m * down;
        std::int64_t j0 = (pos - half + up - 1) / up;
        if (pos - half < 0) j0 = -((half - pos) / up);
        double acc = 0;
        for (std::int64_t j = std::max<std::int64_t>(j0, 0); j < n_in; ++j) {
            const std::int64_t tap = pos - j * up;
            if (tap < -half) break;
            if (tap > half) continue;
            acc += h[tap + half] * double(x[j]);
        }
        y[m] = static_cast<float>(acc);
    }
    return y;
}

namespace {

template <typename U>
U read_le(const char* p) {
    U v;
    std::memcpy(&v, p, sizeof(U));
    return v;
}

}  // namespace

WavReadResult read_wav(const std::filesystem::path& path, int target_rate) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
        throw IoError(path.string() + " is not a RIFF/WAVE file");
    }
    int format = 0, channels = 0, rate = 0, bits = 0;
    const char* data = nullptr;
    std::size_t data_len = 0;
    for (std::size_t off = 12; off + 8 <= buf.size();) {
        const char* id = buf.data() + off;
        const auto len = read_le<std::uint32_t>(id + 4);
        const std::size_t body = off + 8;
        if (body + len > buf.size()) {
            // tolerate a truncated final data chunk
            if (std::memcmp(id, "data", 4) != 0) throw IoError("truncated chunk in " + path.string());
        }
        const std::size_t avail = std::min<std::size_t>(len, buf.size() - body);
        if (std::memcmp(id, "fmt ", 4) == 0 && avail >= 16) {
            format = read_le<std::uint16_t>(buf.data() + body);
            channels = read_le<std::uint16_t>(buf.data() + body + 2);
            rate = static_cast<int>(read_le<std::uint32_t>(buf.data() + body + 4));
            bits = read_le<std::uint16_t>(buf.data() + body + 14);
            if (format == 0xFFFE && avail >= 26) format = read_le<std::uint16_t>(buf.data() + body + 24);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = buf.data() + body;
            data_len = avail;
        }
        off = body + len + (len & 1u);
    }
    if (!data || channels <= 0 || rate <= 0) throw IoError(path.string() + " lacks fmt/data chunks");
    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32) {
        throw IoError(path.string() + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits); expected PCM16 or float32");
    }
    const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
    const std::size_t frames = data_len / frame_bytes;
    WavReadResult r;
    r.original_rate = rate;
    r.wave.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0;
        for (int c = 0; c < channels; ++c) {
            const char* p = data + i * frame_bytes + static_cast<std::size_t>(c) * (bits / 8);
            acc += pcm16 ? read_le<std::int16_t>(p) / 32768.0 : double(read_le<float>(p));
        }
        r.wave.samples[i] = static_cast<float>(acc / channels);
    }
    r.wave.sample_rate = rate;
    if (target_rate > 0 && rate != target_rate) {
        r.wave.samples = resample(r.wave.samples, rate, target_rate);
        r.wave.sample_rate = target_rate;
        r.resampled = true;
    }
    return r;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
    if (w.sample_rate <= 0) throw SignalError("cannot write a WAV with non-positive sample rate");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot write " + tmp.string());
        auto put32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
        auto put16 = [&](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
        const auto bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
        os.write("RIFF", 4);
        put32(36 + bytes);
        os.write("WAVEfmt ", 8);
        put32(16);
        put16(1);
        put16(1);
        put32(static_cast<std::uint32_t>(w.sample_rate));
        put32(static_cast<std::uint32_t>(w.sample_rate) * 2);
        put16(2);
        put16(16);
        os.write("data", 4);
        put32(bytes);
        std::vector<std::int16_t> pcm(w.samples.size());
        for (std::size_t i = 0; i < pcm.size(); ++i) {
            const double v = std::clamp(std::round(double(w.samples[i]) * 32768.0), -32768.0, 32767.0);
            pcm[i] = static_cast<std::int16_t>(v);
        }
        os.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(bytes));
        if (!os) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace latflow
