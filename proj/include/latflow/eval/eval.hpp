// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

// Batch evaluation: per-utterance metrics, aggregates, real-time factor and
// report files.

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latflow/signal/wav.hpp"

namespace latflow {

inline constexpr double kSiSdrCapDb = 60.0;
inline constexpr int kReportSchemaVersion = 1;

using MetricMap = std::map<std::string, double>;

// Scale-invariant SDR in dB, clamped to ±kSiSdrCapDb (a perfect estimate
// reports the cap).
double si_sdr(const std::vector<float>& reference, const std::vector<float>& estimate);

// {lsd, si_sdr} over the common prefix. Rates must match; zero overlap → EvalError.
MetricMap evaluate_pair(const Waveform& clean, const Waveform& estimate);

struct EvalRow {
    std::string utterance_id, metric;
    double value = 0;
    bool operator==(const EvalRow&) const = default;
};

struct Aggregate {
    std::string metric;
    double mean = 0, std = 0;  // population std
    std::int64_t count = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::optional<double> rtf;
    nlohmann::json config;           // echoed verbatim
    std::vector<std::string> notes;  // warnings, e.g. resampled inputs

    void add(const std::string& utterance, const MetricMap& metrics);
    // Sorted by metric name; a pure function of rows.
    std::vector<Aggregate> aggregates() const;
};

// Writes <dir>/report.csv (utterance_id,metric,value) and <dir>/report.json
// (aggregates, rtf, notes, config echo, run id = SHA-1 of the CSV and config).
// Byte-stable for a fixed report. Empty report → EvalError; I/O → IoError.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);
std::vector<EvalRow> read_report_csv(const std::filesystem::path& csv);

using Enhancer = std::function<Waveform(const Waveform&)>;

// One discarded warm-up call, then `repeats` timed passes over the set;
// returns the median of processing time / audio duration. Single-threaded.
double measure_rtf(const Enhancer& enhance, const std::vector<Waveform>& set, int repeats = 3);

// Pairs every *.wav under est_dir with the same relative path under
// clean_dir. Inputs at another rate are resampled with a note in the report.
EvalReport evaluate_directories(const std::filesystem::path& clean_dir, const std::filesystem::path& est_dir,
                                int workers = 0);

struct ScorerPair {
    std::string utterance_id;
    std::filesystem::path clean, estimate;
};

// External scorer protocol: the command reads a JSON list of
// {utterance_id, clean, estimate} on stdin and writes a JSON list of
// {utterance_id, <metric>: value, ...} on stdout. Failures → EvalError.
std::map<std::string, MetricMap> run_external_scorer(const std::string& command, const std::vector<ScorerPair>& pairs);

}  // namespace latflow
