// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "latflow/data/datasetgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

#include "latflow/core/error.hpp"
#include "latflow/core/json_fields.hpp"

namespace latflow {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

template <typename V>
void shuffle(std::vector<V>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot write " + tmp.string());
        f << text;
        if (!f) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

Waveform load_source(const fs::path& p) {
    if (!fs::exists(p)) throw IngestionError("missing audio file " + p.string());
    try {
        return read_wav(p).wave;
    } catch (const IoError& e) {
        throw IngestionError(p.string() + ": " + e.what());
    }
}

std::string clip_name(std::int64_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "c%02lld", static_cast<long long>(k));
    return buf;
}

}  // namespace

// ---------------------------------------------------------------- inventory

const InventoryScene& RirInventory::scene(const std::string& id) const {
    for (const auto& s : scenes) {
        if (s.id == id) return s;
    }
    throw ConfigError("inventory has no scene '" + id + "'");
}

fs::path RirInventory::resolve(const std::string& rel) const {
    const fs::path p(rel);
    return p.is_absolute() ? p : base_dir / p;
}

void RirInventory::validate() const {
    std::set<std::string> ids;
    for (const auto& s : scenes) {
        if (!ids.insert(s.id).second) throw ConfigError("duplicate inventory scene '" + s.id + "'");
        if (s.positions.empty()) throw ConfigError("inventory scene '" + s.id + "' has no RIR positions");
        std::set<std::string> pos;
        for (const auto& p : s.positions) {
            if (!pos.insert(p.id).second) throw ConfigError("duplicate position '" + p.id + "' in scene " + s.id);
            if (p.distance_m && (*p.distance_m < 1.0 || *p.distance_m > 8.0)) {
                throw ConfigError("position " + s.id + "/" + p.id + " lies outside the 1–8 m placement radius");
            }
        }
    }
}

RirInventory load_inventory(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("inventory not found: " + path.string());
    nlohmann::json j;
    try {
        std::ifstream f(path);
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    RirInventory inv;
    inv.base_dir = path.parent_path();
    int version = kManifestSchemaVersion;
    nlohmann::json scenes = nlohmann::json::array(), speech = nlohmann::json::array();
    JsonFields f(j, "inventory");
    f.get("schema_version", version).get("scenes", scenes).get("speech", speech).get("noise", inv.noise).get("music", inv.music);
    f.finish();
    if (version != kManifestSchemaVersion) throw ConfigError("unsupported inventory schema " + std::to_string(version));
    for (const auto& s : scenes) {
        InventoryScene sc;
        nlohmann::json positions = nlohmann::json::array();
        JsonFields g(s, "inventory.scene");
        g.get("id", sc.id).get("positions", positions);
        g.finish();
        for (const auto& p : positions) {
            RirPosition rp;
            JsonFields h(p, "inventory.position");
            h.get("id", rp.id).get("rir", rp.rir);
            if (const auto* d = h.sub("distance_m"); d && !d->is_null()) rp.distance_m = d->get<double>();
            h.finish();
            sc.positions.push_back(rp);
        }
        inv.scenes.push_back(std::move(sc));
    }
    for (const auto& s : speech) {
        SpeechItem it;
        JsonFields g(s, "inventory.speech");
        g.get("path", it.path).get("speaker", it.speaker);
        g.finish();
        inv.speech.push_back(it);
    }
    inv.validate();
    return inv;
}

void save_inventory(const fs::path& path, const RirInventory& inv) {
    nlohmann::json scenes = nlohmann::json::array(), speech = nlohmann::json::array();
    for (const auto& s : inv.scenes) {
        nlohmann::json pos = nlohmann::json::array();
        for (const auto& p : s.positions) {
            nlohmann::json e = {{"id", p.id}, {"rir", p.rir}};
            e["distance_m"] = p.distance_m ? nlohmann::json(*p.distance_m) : nlohmann::json(nullptr);
            pos.push_back(e);
        }
        scenes.push_back({{"id", s.id}, {"positions", pos}});
    }
    for (const auto& s : inv.speech) speech.push_back({{"path", s.path}, {"speaker", s.speaker}});
    nlohmann::json j = {{"schema_version", kManifestSchemaVersion},
                        {"scenes", scenes},
                        {"speech", speech},
                        {"noise", inv.noise},
                        {"music", inv.music}};
    write_text_atomic(path, j.dump(2) + "\n");
}

std::vector<std::int64_t> discretize_positions(std::int64_t track_len, std::int64_t count) {
    if (track_len < 1) throw ContractError("RIR track is empty");
    if (count < 1 || count > track_len) {
        throw ContractError("cannot pick " + std::to_string(count) + " positions from a track of " +
                            std::to_string(track_len));
    }
    if (count == 1) return {0};
    std::vector<std::int64_t> idx;
    for (std::int64_t i = 0; i < count; ++i) {
        idx.push_back(static_cast<std::int64_t>(std::llround(double(i) * double(track_len - 1) / double(count - 1))));
    }
    return idx;
}

// ---------------------------------------------------------------- scenes

BuiltScene build_scene(const SceneManifest& m, const RirInventory& inv) {
    const auto& scene = inv.scene(m.scene_id);
    auto rir_of = [&](const std::string& pos) -> Waveform {
        for (const auto& p : scene.positions) {
            if (p.id == pos) return load_source(inv.resolve(p.rir));
        }
        throw ConfigError("position '" + pos + "' does not belong to scene " + m.scene_id);
    };
    // Mixture length = max(offset + length) over sources (and the declared length).
    std::int64_t len = m.length;
    for (const auto& s : m.sources) {
        if (s.length >= 0) len = std::max(len, s.offset + s.length);
    }
    struct Placed {
        const SourceEntry* src;
        Waveform dry, wet;
        std::int64_t delay;
    };
    std::vector<Placed> placed;
    for (const auto& s : m.sources) {
        if (s.role != "speech" && s.role != "noise" && s.role != "music") {
            throw ConfigError("unknown source role '" + s.role + "'");
        }
        auto audio = load_source(inv.resolve(s.path));
        if (audio.size() == 0) throw IngestionError("empty audio file " + s.path);
        const auto n = s.length >= 0 ? s.length : len - s.offset;
        if (s.role == "speech" && s.begin + n > static_cast<std::int64_t>(audio.size())) {
            throw ContractError("speech segment of " + s.path + " runs past the end of the file");
        }
        Waveform seg{std::vector<float>(static_cast<std::size_t>(std::max<std::int64_t>(n, 0))), audio.sample_rate};
        for (std::int64_t i = 0; i < n; ++i) seg.samples[i] = audio.samples[(s.begin + i) % audio.size()];
        auto rir = rir_of(s.position);
        std::int64_t delay = 0;
        for (std::size_t i = 1; i < rir.size(); ++i) {
            if (std::abs(rir.samples[i]) > std::abs(rir.samples[delay])) delay = static_cast<std::int64_t>(i);
        }
        // Pad to the end of the clip so the reverberant tail rings into it.
        auto padded = seg;
        padded.samples.resize(static_cast<std::size_t>(std::max(n, len - s.offset)), 0.0f);
        auto wet = convolve_rir(padded, rir);
        placed.push_back({&s, std::move(seg), std::move(wet), delay});
    }

    auto place = [&](std::vector<float>& dst, const std::vector<float>& src, std::int64_t at, double g) {
        for (std::size_t i = 0; i < src.size(); ++i) {
            const auto k = at + static_cast<std::int64_t>(i);
            if (k >= 0 && k < len) dst[k] = static_cast<float>(dst[k] + g * src[i]);
        }
    };
    BuiltScene out;
    std::vector<float> speech(static_cast<std::size_t>(len), 0.0f), rest(static_cast<std::size_t>(len), 0.0f);
    out.clean.samples.assign(static_cast<std::size_t>(len), 0.0f);
    for (const auto& p : placed) {
        if (p.src->role != "speech") continue;
        place(speech, p.wet.samples, p.src->offset, 1.0);
        Waveform ref{std::vector<float>(static_cast<std::size_t>(len), 0.0f), kSampleRate};
        place(ref.samples, p.dry.samples, p.src->offset + p.delay, 1.0);
        place(out.clean.samples, ref.samples, 0, 1.0);
        out.references.push_back(std::move(ref));
    }
    double ps = 0;
    for (float v : speech) ps += double(v) * v;
    for (const auto& p : placed) {
        if (p.src->role == "speech") continue;
        std::vector<float> full(static_cast<std::size_t>(len), 0.0f);
        place(full, p.wet.samples, p.src->offset, 1.0);
        double pn = 0;
        for (float v : full) pn += double(v) * v;
        if (ps <= 0) throw SignalError("clip " + m.clip_id + " has silent speech; cannot set a noise level");
        if (pn <= 0) throw SignalError("clip " + m.clip_id + ": noise source " + p.src->path + " is silent");
        place(rest, full, 0, std::sqrt(ps / (pn * std::pow(10.0, p.src->snr_db / 10.0))));
    }
    Waveform mix{std::vector<float>(static_cast<std::size_t>(len)), kSampleRate};
    for (std::int64_t i = 0; i < len; ++i) mix.samples[i] = speech[i] + rest[i];
    out.mixture = apply_chain(mix, m.post, [&](const std::string& rel) { return load_source(inv.resolve(rel)); });
    out.clean.sample_rate = kSampleRate;
    return out;
}

// ---------------------------------------------------------------- config / json

void CorpusConfig::validate() const {
    if (train_scenes < 0 || val_scenes < 0 || test_scenes < 0 || train_scenes + val_scenes + test_scenes == 0) {
        throw ConfigError("data scene counts must be >= 0 and not all zero");
    }
    if (clips_per_scene < 1) throw ConfigError("data.clips_per_scene must be >= 1");
    if (!(clip_seconds > 0)) throw ConfigError("data.clip_seconds must be positive");
    if (speakers_per_clip < 1) throw ConfigError("data.speakers_per_clip must be >= 1");
    if (noises_per_clip < 0) throw ConfigError("data.noises_per_clip must be >= 0");
    if (snr_min_db > snr_max_db) throw ConfigError("data.snr_min_db exceeds snr_max_db");
    for (double p : {music_prob, codec_prob, clip_prob, bandlimit_prob, packet_loss_prob}) {
        if (!(p >= 0 && p <= 1)) throw ConfigError("data probabilities must lie in [0, 1]");
    }
    if (codec_fallback != "auto" && codec_fallback != "force" && codec_fallback != "off") {
        throw ConfigError("data.codec_fallback must be auto, force or off");
    }
}

nlohmann::json to_json(const CorpusConfig& c) {
    return {{"train_scenes", c.train_scenes},
            {"val_scenes", c.val_scenes},
            {"test_scenes", c.test_scenes},
            {"clips_per_scene", c.clips_per_scene},
            {"clip_seconds", c.clip_seconds},
            {"speakers_per_clip", c.speakers_per_clip},
            {"noises_per_clip", c.noises_per_clip},
            {"music_prob", c.music_prob},
            {"snr_min_db", c.snr_min_db},
            {"snr_max_db", c.snr_max_db},
            {"codec_prob", c.codec_prob},
            {"codec_fallback", c.codec_fallback},
            {"clip_prob", c.clip_prob},
            {"bandlimit_prob", c.bandlimit_prob},
            {"packet_loss_prob", c.packet_loss_prob},
            {"workers", c.workers}};
}

CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
    CorpusConfig c;
    JsonFields f(j, "data");
    f.get("train_scenes", c.train_scenes)
        .get("val_scenes", c.val_scenes)
        .get("test_scenes", c.test_scenes)
        .get("clips_per_scene", c.clips_per_scene)
        .get("clip_seconds", c.clip_seconds)
        .get("speakers_per_clip", c.speakers_per_clip)
        .get("noises_per_clip", c.noises_per_clip)
        .get("music_prob", c.music_prob)
        .get("snr_min_db", c.snr_min_db)
        .get("snr_max_db", c.snr_max_db)
        .get("codec_prob", c.codec_prob)
        .get("codec_fallback", c.codec_fallback)
        .get("clip_prob", c.clip_prob)
        .get("bandlimit_prob", c.bandlimit_prob)
        .get("packet_loss_prob", c.packet_loss_prob)
        .get("workers", c.workers);
    f.finish();
    c.validate();
    return c;
}

nlohmann::json to_json(const SceneManifest& m) {
    auto sources = nlohmann::json::array();
    for (const auto& s : m.sources) {
        nlohmann::json e = {{"role", s.role},     {"path", s.path},     {"position", s.position},
                            {"offset", s.offset}, {"begin", s.begin},   {"length", s.length}};
        if (s.role == "speech") e["speaker"] = s.speaker;
        else e["snr_db"] = s.snr_db;
        sources.push_back(e);
    }
    return {{"scene_id", m.scene_id}, {"clip_id", m.clip_id}, {"split", m.split},
            {"seed", m.seed},         {"length", m.length},   {"sources", sources},
            {"post", to_json(m.post)}, {"noise_rir_policy", m.noise_rir_policy}};
}

SceneManifest scene_manifest_from_json(const nlohmann::json& j) {
    SceneManifest m;
    nlohmann::json sources = nlohmann::json::array(), post = {{"stages", nlohmann::json::array()}};
    JsonFields f(j, "manifest");
    f.get("scene_id", m.scene_id)
        .get("clip_id", m.clip_id)
        .get("split", m.split)
        .get("seed", m.seed)
        .get("length", m.length)
        .get("sources", sources)
        .get("post", post)
        .get("noise_rir_policy", m.noise_rir_policy);
    f.finish();
    for (const auto& s : sources) {
        SourceEntry e;
        JsonFields g(s, "manifest.source");
        g.get("role", e.role)
            .get("path", e.path)
            .get("position", e.position)
            .get("offset", e.offset)
            .get("begin", e.begin)
            .get("length", e.length)
            .get("snr_db", e.snr_db)
            .get("speaker", e.speaker);
        g.finish();
        m.sources.push_back(e);
    }
    m.post = distortion_spec_from_json(post);
    return m;
}

// ---------------------------------------------------------------- planning

std::vector<SceneManifest> plan_corpus(const CorpusConfig& cfg, const RirInventory& inv, std::uint64_t seed) {
    cfg.validate();
    inv.validate();
    const std::int64_t counts[3] = {cfg.train_scenes, cfg.val_scenes, cfg.test_scenes};
    const char* names[3] = {"train", "val", "test"};
    const auto needed = counts[0] + counts[1] + counts[2];
    if (static_cast<std::int64_t>(inv.scenes.size()) < needed) {
        throw ConfigError("inventory holds " + std::to_string(inv.scenes.size()) + " scenes but " +
                          std::to_string(needed) + " are needed across splits");
    }
    if (cfg.noises_per_clip > 0 && inv.noise.empty()) throw ConfigError("inventory has no noise files");
    if (cfg.music_prob > 0 && inv.music.empty()) throw ConfigError("inventory has no music files");

    Rng root(seed, fnv1a("corpus"));
    std::vector<std::size_t> scene_order(inv.scenes.size());
    for (std::size_t i = 0; i < scene_order.size(); ++i) scene_order[i] = i;
    auto rs = root.fork(1);
    shuffle(scene_order, rs);

    // Speakers, partitioned disjointly; val/test get a share proportional to
    // their scene count but never fewer than one clip needs.
    std::map<std::string, std::vector<std::size_t>> utts;
    for (std::size_t i = 0; i < inv.speech.size(); ++i) utts[inv.speech[i].speaker].push_back(i);
    std::vector<std::string> speakers;
    for (const auto& [spk, _] : utts) speakers.push_back(spk);
    auto rk = root.fork(2);
    shuffle(speakers, rk);
    std::vector<std::string> pools[3];
    {
        const auto n = static_cast<std::int64_t>(speakers.size());
        std::int64_t share[3] = {0, 0, 0};
        for (int s = 1; s < 3; ++s) {
            if (counts[s] > 0) share[s] = std::max(cfg.speakers_per_clip, n * counts[s] / needed);
        }
        share[0] = counts[0] > 0 ? n - share[1] - share[2] : 0;
        for (int s = 0; s < 3; ++s) {
            if (counts[s] > 0 && share[s] < cfg.speakers_per_clip) {
                throw ConfigError("not enough speakers (" + std::to_string(n) + ") for disjoint splits with " +
                                  std::to_string(cfg.speakers_per_clip) + " per clip");
            }
        }
        std::size_t at = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::int64_t k = 0; k < share[s]; ++k) pools[s].push_back(speakers[at++]);
        }
    }

    // Audio lengths are needed to choose segments.
    std::map<std::string, std::int64_t> lengths;
    auto length_of = [&](const std::string& rel) {
        auto it = lengths.find(rel);
        if (it != lengths.end()) return it->second;
        const auto n = static_cast<std::int64_t>(load_source(inv.resolve(rel)).size());
        if (n == 0) throw IngestionError("empty audio file " + rel);
        return lengths[rel] = n;
    };

    const auto clip_len = static_cast<std::int64_t>(std::llround(cfg.clip_seconds * kSampleRate));
    std::vector<SceneManifest> plan;
    std::size_t next_scene = 0;
    for (int s = 0; s < 3; ++s) {
        for (std::int64_t c = 0; c < counts[s]; ++c) {
            const auto& scene = inv.scenes[scene_order[next_scene++]];
            Rng srng = root.fork(fnv1a(scene.id));
            // Stationary speakers: one fixed position per speaker per scene.
            std::map<std::string, std::string> fixed;
            for (const auto& spk : pools[s]) fixed[spk] = scene.positions[srng.below(scene.positions.size())].id;
            for (std::int64_t k = 0; k < cfg.clips_per_scene; ++k) {
                Rng r = srng.fork(static_cast<std::uint64_t>(k) + 1);
                SceneManifest m;
                m.scene_id = scene.id;
                m.clip_id = scene.id + "_" + clip_name(k);
                m.split = names[s];
                m.seed = seed;
                m.length = clip_len;
                auto chosen = pools[s];
                shuffle(chosen, r);
                chosen.resize(static_cast<std::size_t>(cfg.speakers_per_clip));
                for (std::size_t q = 0; q < chosen.size(); ++q) {
                    const auto& pool = utts[chosen[q]];
                    const auto& item = inv.speech[pool[r.below(pool.size())]];
                    SourceEntry e;
                    e.role = "speech";
                    e.path = item.path;
                    e.speaker = item.speaker;
                    e.position = fixed[item.speaker];
                    e.offset = q == 0 ? 0 : static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(clip_len / 2)));
                    const auto room = clip_len - e.offset, n = length_of(item.path);
                    e.length = std::min(room, n);
                    e.begin = n > room ? static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(n - room + 1))) : 0;
                    m.sources.push_back(e);
                }
                auto add_background = [&](const std::string& role, const std::vector<std::string>& pool) {
                    SourceEntry e;
                    e.role = role;
                    e.path = pool[r.below(pool.size())];
                    e.position = scene.positions[r.below(scene.positions.size())].id;  // independent per clip
                    e.begin = static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(length_of(e.path))));
                    e.length = clip_len;
                    e.snr_db = r.uniform(cfg.snr_min_db, cfg.snr_max_db);
                    m.sources.push_back(e);
                };
                for (std::int64_t q = 0; q < cfg.noises_per_clip; ++q) add_background("noise", inv.noise);
                if (cfg.music_prob > 0 && r.bernoulli(cfg.music_prob)) add_background("music", inv.music);

                if (cfg.bandlimit_prob > 0 && r.bernoulli(cfg.bandlimit_prob)) {
                    m.post.stages.push_back({"bandlimit", {{"cutoff_hz", r.uniform(1000.0, 3000.0)}}, 0});
                }
                if (cfg.clip_prob > 0 && r.bernoulli(cfg.clip_prob)) {
                    m.post.stages.push_back({"clip", {{"threshold", r.uniform(0.3, 0.9)}}, 0});
                }
                if (cfg.codec_prob > 0 && r.bernoulli(cfg.codec_prob)) {
                    m.post.stages.push_back(
                        {"codec", {{"bitrate", draw_codec_bitrate(r)}, {"complexity", 10}, {"fallback", cfg.codec_fallback}}, 0});
                }
                if (cfg.packet_loss_prob > 0 && r.bernoulli(cfg.packet_loss_prob)) {
                    m.post.stages.push_back({"packet_loss", {{"frame_ms", 20.0}, {"loss_rate", r.uniform(0.02, 0.1)}},
                                             r.below(1ull << 62)});
                }
                plan.push_back(std::move(m));
            }
        }
    }
    return plan;
}

// ---------------------------------------------------------------- generation

std::vector<SceneManifest> generate_corpus(const CorpusConfig& cfg, const RirInventory& inv, std::uint64_t seed,
                                           const fs::path& out_dir) {
    auto plan = plan_corpus(cfg, inv, seed);
    // Group clips by scene, keeping plan order.
    std::vector<std::vector<std::size_t>> scenes;
    std::map<std::string, std::size_t> where;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        auto [it, fresh] = where.emplace(plan[i].scene_id, scenes.size());
        if (fresh) scenes.emplace_back();
        scenes[it->second].push_back(i);
    }
    fs::create_directories(out_dir);
    const std::string backend = opus_available() && cfg.codec_fallback != "force" ? "opus" : "simulated";

    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (std::size_t s; (s = next.fetch_add(1)) < scenes.size();) {
            try {
                const auto& first = plan[scenes[s].front()];
                const auto dir = out_dir / first.split / first.scene_id;
                fs::create_directories(dir);
                auto clips = nlohmann::json::array();
                for (auto i : scenes[s]) {
                    const auto& m = plan[i];
                    auto built = build_scene(m, inv);
                    write_wav(dir / (m.clip_id + "_mix.wav"), built.mixture);
                    write_wav(dir / (m.clip_id + "_clean.wav"), built.clean);
                    for (std::size_t k = 0; k < built.references.size(); ++k) {
                        write_wav(dir / (m.clip_id + "_ref" + std::to_string(k) + ".wav"), built.references[k]);
                    }
                    clips.push_back(to_json(m));
                }
                nlohmann::json doc = {{"schema_version", kManifestSchemaVersion},
                                      {"scene_id", first.scene_id},
                                      {"split", first.split},
                                      {"codec_backend", backend},
                                      {"clips", clips}};
                write_text_atomic(dir / "manifest.json", doc.dump(2) + "\n");
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    const auto hw = static_cast<std::int64_t>(std::max(1u, std::thread::hardware_concurrency()));
    const auto n = std::min<std::int64_t>(cfg.workers > 0 ? cfg.workers : hw, static_cast<std::int64_t>(scenes.size()));
    std::vector<std::thread> pool;
    for (std::int64_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);

    std::string index;
    for (const auto& group : scenes) {
        const auto& m = plan[group.front()];
        nlohmann::json line = {{"scene_id", m.scene_id},
                               {"split", m.split},
                               {"manifest", m.split + "/" + m.scene_id + "/manifest.json"},
                               {"clips", group.size()}};
        index += line.dump() + "\n";
    }
    write_text_atomic(out_dir / "index.jsonl", index);
    nlohmann::json corpus = {{"schema_version", kManifestSchemaVersion},
                             {"seed", seed},
                             {"version", LATFLOW_VERSION},
                             {"codec_backend", backend},
                             {"data", to_json(cfg)}};
    write_text_atomic(out_dir / "corpus.json", corpus.dump(2) + "\n");
    return plan;
}

std::vector<CorpusClip> list_corpus(const fs::path& corpus_dir, const std::string& split) {
    const auto index_path = corpus_dir / "index.jsonl";
    std::ifstream f(index_path);
    if (!f) throw IoError("corpus index not found: " + index_path.string());
    std::vector<CorpusClip> out;
    for (std::string line; std::getline(f, line);) {
        if (line.empty()) continue;
        auto e = nlohmann::json::parse(line);
        if (e.at("split").get<std::string>() != split) continue;
        const auto mpath = corpus_dir / e.at("manifest").get<std::string>();
        std::ifstream mf(mpath);
        if (!mf) throw IoError("scene manifest not found: " + mpath.string());
        auto doc = nlohmann::json::parse(mf);
        for (const auto& c : doc.at("clips")) {
            auto m = scene_manifest_from_json(c);
            const auto dir = mpath.parent_path();
            out.push_back({m.clip_id, m.scene_id, m.split, dir / (m.clip_id + "_mix.wav"), dir / (m.clip_id + "_clean.wav")});
        }
    }
    return out;
}

// ---------------------------------------------------------------- toy audio

// Tail level giving a direct-to-reverberant ratio of a few dB at 1 m for
// rt60 ≈ 0.3 s.
constexpr double kToyTailLevel = 0.06;

Waveform toy_rir(Rng& rng, double rt60_s, double length_s, int rate) {
    if (!(rt60_s > 0)) throw ContractError("rt60 must be positive");
    const auto n = std::max<std::int64_t>(1, std::llround(length_s * rate));
    Waveform h{std::vector<float>(static_cast<std::size_t>(n), 0.0f), rate};
    h.samples[0] = 1.0f;
    // Amplitude e^{−ln(1000)·t/rt60} is −60 dB at t = rt60.
    const double k = std::log(1000.0) / rt60_s;
    for (std::int64_t i = 1; i < n; ++i) {
        h.samples[i] = static_cast<float>(kToyTailLevel * rng.normal() * std::exp(-k * double(i) / rate));
    }
    return h;
}

Waveform toy_speech(Rng& rng, double seconds, double f0_hz, int rate) {
    const auto n = static_cast<std::int64_t>(std::llround(seconds * rate));
    Waveform w{std::vector<float>(static_cast<std::size_t>(n), 0.0f), rate};
    const double nyq = rate / 2.0;
    std::int64_t at = static_cast<std::int64_t>(rng.uniform(0.02, 0.1) * rate);
    while (at < n) {
        const auto dur = static_cast<std::int64_t>(rng.uniform(0.12, 0.30) * rate);
        const bool voiced = rng.bernoulli(0.8);
        const double f1 = rng.uniform(300, 900), f2 = rng.uniform(900, 2400), f3 = rng.uniform(2400, 3400);
        const double glide = rng.uniform(-0.15, 0.15), amp = rng.uniform(0.5, 1.0);
        std::vector<double> phase(64, 0.0);
        double lp = 0;
        for (std::int64_t i = 0; i < dur && at + i < n; ++i) {
            const double tau = double(i) / double(dur);
            const double env = amp * std::pow(std::sin(std::numbers::pi * tau), 0.7);
            double v = 0;
            if (voiced) {
                const double f0 = f0_hz * (1.0 + glide * tau);
                for (int h = 1; h < 64 && h * f0 < nyq - 100; ++h) {
                    const double f = h * f0;
                    auto bump = [&](double fc, double bw) { return std::exp(-0.5 * std::pow((f - fc) / bw, 2)); };
                    const double g = (bump(f1, 120) + 0.6 * bump(f2, 170) + 0.3 * bump(f3, 220) + 0.02) / std::sqrt(h);
                    phase[h] += 2 * std::numbers::pi * f / rate;
                    v += g * std::sin(phase[h]);
                }
                v *= 0.12;
            } else {
                const double white = rng.normal();
                v = 0.04 * (white - lp);  // first difference tilts the burst upward
                lp = white;
            }
            w.samples[at + i] = static_cast<float>(env * v);
        }
        at += dur + static_cast<std::int64_t>(rng.uniform(0.02, 0.12) * rate);
    }
    float peak = 0;
    for (float v : w.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0) {
        const auto g = static_cast<float>(rng.uniform(0.2, 0.35) / peak);
        for (auto& v : w.samples) v *= g;
    }
    // A recording floor 60 dB under full scale; real takes are never digitally silent.
    for (auto& v : w.samples) v += static_cast<float>(1e-3 * rng.normal());
    return w;
}

Waveform toy_noise(Rng& rng, double seconds, int rate) {
    const auto n = static_cast<std::int64_t>(std::llround(seconds * rate));
    Waveform w{std::vector<float>(static_cast<std::size_t>(n), 0.0f), rate};
    const double pole = rng.uniform(0.0, 0.97), white_mix = rng.uniform(0.1, 0.6);
    const double hum = rng.bernoulli(0.4) ? rng.uniform(0.1, 0.5) : 0.0, hum_f = rng.bernoulli(0.5) ? 50.0 : 60.0;
    double state = 0, energy = 0;
    std::vector<double> x(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double e = rng.normal();
        state = pole * state + (1 - pole) * e;
        x[i] = state * 3 + white_mix * e + hum * std::sin(2 * std::numbers::pi * hum_f * i / rate);
        energy += x[i] * x[i];
    }
    const double g = energy > 0 ? 0.05 / std::sqrt(energy / double(n)) : 0.0;
    for (std::int64_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(g * x[i]);
    return w;
}

RirInventory make_toy_inventory(const fs::path& dir, std::int64_t scenes, std::int64_t speakers,
                                std::int64_t utterances_per_speaker, std::uint64_t seed) {
    if (scenes < 1 || speakers < 1 || utterances_per_speaker < 1) throw ConfigError("toy inventory counts must be >= 1");
    fs::create_directories(dir / "rirs");
    fs::create_directories(dir / "speech");
    fs::create_directories(dir / "noise");
    RirInventory inv;
    inv.base_dir = dir;
    Rng root(seed, fnv1a("toy-inventory"));
    constexpr std::int64_t kTrack = 12, kFixed = 4;
    for (std::int64_t s = 0; s < scenes; ++s) {
        Rng r = root.fork(100 + s);
        char id[32];
        std::snprintf(id, sizeof id, "room%02lld", static_cast<long long>(s));
        InventoryScene sc{id, {}};
        const double rt60 = r.uniform(0.15, 0.45);
        // A source track receding from 1 m to 3 m, then fixed stops along it.
        for (auto t : discretize_positions(kTrack, kFixed)) {
            const double dist = 1.0 + 2.0 * double(t) / double(kTrack - 1);
            Rng pr = r.fork(static_cast<std::uint64_t>(t));
            auto h = toy_rir(pr, rt60, 0.25);
            h.samples[0] = static_cast<float>(1.0 / dist);  // direct path falls off, the diffuse tail does not
            const std::string rel = "rirs/" + sc.id + "_pos" + std::to_string(t) + ".wav";
            write_wav(dir / rel, h);
            sc.positions.push_back({"pos" + std::to_string(t), rel, dist});
        }
        inv.scenes.push_back(std::move(sc));
    }
    for (std::int64_t k = 0; k < speakers; ++k) {
        Rng r = root.fork(10000 + k);
        const double f0 = r.uniform(90.0, 240.0);
        char spk[32];
        std::snprintf(spk, sizeof spk, "spk%02lld", static_cast<long long>(k));
        for (std::int64_t u = 0; u < utterances_per_speaker; ++u) {
            const std::string rel = std::string("speech/") + spk + "_u" + std::to_string(u) + ".wav";
            write_wav(dir / rel, toy_speech(r, r.uniform(2.0, 3.0), f0));
            inv.speech.push_back({rel, spk});
        }
    }
    for (std::int64_t k = 0; k < std::max<std::int64_t>(4, scenes); ++k) {
        Rng r = root.fork(20000 + k);
        const std::string rel = "noise/n" + std::to_string(k) + ".wav";
        write_wav(dir / rel, toy_noise(r, 6.0));
        inv.noise.push_back(rel);
    }
    save_inventory(dir / "inventory.json", inv);
    return inv;
}

}  // namespace latflow
