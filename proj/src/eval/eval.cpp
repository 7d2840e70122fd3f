// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/eval/eval.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "latflow/core/error.hpp"
#include "latflow/signal/loss.hpp"

namespace latflow {

namespace fs = std::filesystem;

double si_sdr(const std::vector<float>& reference, const std::vector<float>& estimate) {
    const auto n = std::min(reference.size(), estimate.size());
    double rr = 0, er = 0, ee = 0;
    for (std::size_t i = 0; i < n; ++i) {
        rr += double(reference[i]) * reference[i];
        er += double(estimate[i]) * reference[i];
        ee += double(estimate[i]) * estimate[i];
    }
    if (rr == 0) return ee == 0 ? kSiSdrCapDb : -kSiSdrCapDb;
    const double a = er / rr;
    double target = 0, noise = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = a * reference[i], e = estimate[i] - t;
        target += t * t;
        noise += e * e;
    }
    if (noise == 0) return kSiSdrCapDb;
    if (target == 0) return -kSiSdrCapDb;
    return std::clamp(10.0 * std::log10(target / noise), -kSiSdrCapDb, kSiSdrCapDb);
}

MetricMap evaluate_pair(const Waveform& clean, const Waveform& estimate) {
    if (clean.sample_rate != estimate.sample_rate) {
        throw EvalError("sample rates differ: " + std::to_string(clean.sample_rate) + " vs " +
                        std::to_string(estimate.sample_rate) + " Hz");
    }
    const auto n = std::min(clean.size(), estimate.size());
    if (n == 0) throw EvalError("clean and estimate have no overlapping samples");
    std::vector<float> c(clean.samples.begin(), clean.samples.begin() + n), e(estimate.samples.begin(),
                                                                                estimate.samples.begin() + n);
    return {{"lsd", lsd(c, e)}, {"si_sdr", si_sdr(c, e)}};
}

void EvalReport::add(const std::string& utterance, const MetricMap& metrics) {
    for (const auto& [k, v] : metrics) rows.push_back({utterance, k, v});
}

std::vector<Aggregate> EvalReport::aggregates() const {
    std::map<std::string, std::vector<double>> by;
    for (const auto& r : rows) by[r.metric].push_back(r.value);
    std::vector<Aggregate> out;
    for (const auto& [metric, v] : by) {
        double m = 0;
        for (double x : v) m += x;
        m /= double(v.size());
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        out.push_back({metric, m, std::sqrt(s / double(v.size())), static_cast<std::int64_t>(v.size())});
    }
    return out;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string sha1_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) throw EvalError("SHA-1 failed");
    std::string hex;
    char b[3];
    for (unsigned int i = 0; i < len; ++i) {
        const unsigned char c = md[i];
        std::snprintf(b, sizeof b, "%02x", c);
        hex += b;
    }
    return hex;
}

void write_file(const fs::path& p, const std::string& text) {
    const auto tmp = fs::path(p.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f << text;
        if (!f) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, p, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace

void emit_report(const EvalReport& report, const fs::path& dir) {
    if (report.rows.empty()) throw EvalError("refusing to emit an empty report");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    std::string csv = "utterance_id,metric,value\n";
    for (const auto& r : report.rows) {
        if (r.utterance_id.find_first_of(",\"\n") != std::string::npos) {
            throw EvalError("utterance id '" + r.utterance_id + "' cannot be written to CSV");
        }
        csv += r.utterance_id + "," + r.metric + "," + fmt(r.value) + "\n";
    }
    auto aggs = nlohmann::json::array();
    for (const auto& a : report.aggregates()) {
        aggs.push_back({{"metric", a.metric}, {"mean", a.mean}, {"std", a.std}, {"count", a.count}});
    }
    nlohmann::json j = {{"schema_version", kReportSchemaVersion},
                        {"run_id", sha1_hex(csv + report.config.dump())},
                        {"version", LATFLOW_VERSION},
                        {"aggregates", aggs},
                        {"rtf", report.rtf ? nlohmann::json(*report.rtf) : nlohmann::json(nullptr)},
                        {"notes", report.notes},
                        {"config", report.config}};
    write_file(dir / "report.csv", csv);
    write_file(dir / "report.json", j.dump(2) + "\n");
}

std::vector<EvalRow> read_report_csv(const fs::path& csv) {
    std::ifstream f(csv);
    if (!f) throw IoError("cannot read " + csv.string());
    std::string line;
    std::getline(f, line);
    if (line != "utterance_id,metric,value") throw EvalError(csv.string() + ": unexpected header");
    std::vector<EvalRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto a = line.find(','), b = line.find(',', a + 1);
        if (a == std::string::npos || b == std::string::npos) throw EvalError(csv.string() + ": malformed row");
        rows.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
    }
    return rows;
}

double measure_rtf(const Enhancer& enhance, const std::vector<Waveform>& set, int repeats) {
    if (set.empty()) throw EvalError("RTF needs at least one clip");
    if (repeats < 1) throw EvalError("RTF needs at least one repeat");
    double audio = 0;
    for (const auto& w : set) audio += w.duration();
    if (!(audio > 0)) throw EvalError("RTF set has zero total duration");
    enhance(set.front());  // warm-up
    std::vector<double> ratios;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& w : set) enhance(w);
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        ratios.push_back(dt.count() / audio);
    }
    std::sort(ratios.begin(), ratios.end());
    return ratios[ratios.size() / 2];
}

EvalReport evaluate_directories(const fs::path& clean_dir, const fs::path& est_dir, int workers) {
    if (!fs::is_directory(est_dir)) throw IoError("estimate directory not found: " + est_dir.string());
    if (!fs::is_directory(clean_dir)) throw IoError("clean directory not found: " + clean_dir.string());
    std::vector<fs::path> rel;
    for (const auto& e : fs::recursive_directory_iterator(est_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".wav") rel.push_back(fs::relative(e.path(), est_dir));
    }
    std::sort(rel.begin(), rel.end());
    if (rel.empty()) throw EvalError("no WAV files under " + est_dir.string());
    for (const auto& r : rel) {
        if (!fs::exists(clean_dir / r)) throw EvalError("no clean counterpart for " + r.string());
    }
    std::vector<MetricMap> metrics(rel.size());
    std::vector<std::string> notes(rel.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr err;
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < rel.size();) {
            try {
                auto c = read_wav(clean_dir / rel[i]);
                auto e = read_wav(est_dir / rel[i]);
                for (const auto* w : {&c, &e}) {
                    if (w->resampled) {
                        notes[i] += (notes[i].empty() ? "" : "; ") + rel[i].string() + " resampled from " +
                                    std::to_string(w->original_rate) + " Hz";
                    }
                }
                metrics[i] = evaluate_pair(c.wave, e.wave);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    const auto n = std::min<std::size_t>(workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency()),
                                         rel.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    EvalReport report;
    for (std::size_t i = 0; i < rel.size(); ++i) {
        auto id = rel[i];
        report.add(id.replace_extension().generic_string(), metrics[i]);
        if (!notes[i].empty()) report.notes.push_back(notes[i]);
    }
    return report;
}

std::map<std::string, MetricMap> run_external_scorer(const std::string& command, const std::vector<ScorerPair>& pairs) {
    auto req = nlohmann::json::array();
    for (const auto& p : pairs) {
        req.push_back({{"utterance_id", p.utterance_id}, {"clean", p.clean.string()}, {"estimate", p.estimate.string()}});
    }
    const auto in = fs::temp_directory_path() / ("latflow_scorer_" + sha1_hex(req.dump()).substr(0, 12) + ".json");
    write_file(in, req.dump());
    const std::string cmd = command + " < '" + in.string() + "'";
    std::string out;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw EvalError("cannot start scorer: " + command);
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) out.append(buf, n);
    const int status = ::pclose(pipe);
    fs::remove(in);
    if (status != 0) throw EvalError("scorer exited with status " + std::to_string(status) + ": " + command);
    std::map<std::string, MetricMap> scores;
    try {
        for (const auto& e : nlohmann::json::parse(out)) {
            MetricMap m;
            for (const auto& [k, v] : e.items()) {
                if (k != "utterance_id") m[k] = v.get<double>();
            }
            scores[e.at("utterance_id").get<std::string>()] = m;
        }
    } catch (const nlohmann::json::exception& ex) {
        throw EvalError(std::string("scorer output is not the expected JSON: ") + ex.what());
    }
    return scores;
}

}  // namespace latflow
