// Copyright 2026 The latflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "latflow/core/error.hpp"
#include "latflow/data/datasetgen.hpp"

using namespace latflow;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Tiny hand-built inventory: one room, RIR positions "delta" and "late"
// (peak at sample 5), two speech files and one noise file.
RirInventory hand_inventory(const fs::path& dir) {
    Rng rng(7, 1);
    // PCM16 saturates at 1 − 2⁻¹⁵, so the unit taps are stored as 0.5.
    write_wav(dir / "delta.wav", Waveform{{0.5f}, kSampleRate});
    std::vector<float> late(40, 0.0f);
    late[5] = 0.5f;
    late[20] = 0.3f;
    write_wav(dir / "late.wav", Waveform{late, kSampleRate});
    write_wav(dir / "a.wav", toy_speech(rng, 1.0, 120.0));
    write_wav(dir / "b.wav", toy_speech(rng, 1.0, 200.0));
    write_wav(dir / "n.wav", toy_noise(rng, 2.0));
    RirInventory inv;
    inv.base_dir = dir;
    inv.scenes.push_back({"room", {{"delta", "delta.wav", 1.0}, {"late", "late.wav", 2.0}}});
    inv.speech = {{"a.wav", "s1"}, {"b.wav", "s2"}};
    inv.noise = {"n.wav"};
    return inv;
}

SourceEntry speech(const std::string& path, const std::string& pos, std::int64_t offset, std::int64_t len) {
    SourceEntry e;
    e.role = "speech";
    e.path = path;
    e.position = pos;
    e.offset = offset;
    e.length = len;
    return e;
}

SceneManifest manifest(std::vector<SourceEntry> sources, std::int64_t len = 8000) {
    SceneManifest m;
    m.scene_id = "room";
    m.clip_id = "room_c00";
    m.split = "train";
    m.length = len;
    m.sources = std::move(sources);
    return m;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    EXPECT_EQ(a.size(), b.size());
    double d = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) d = std::max(d, double(std::abs(a[i] - b[i])));
    return d;
}

}  // namespace

TEST(Positions, EvenlySpacedIncludingEnds) {
    EXPECT_EQ(discretize_positions(10, 1), (std::vector<std::int64_t>{0}));
    EXPECT_EQ(discretize_positions(10, 2), (std::vector<std::int64_t>{0, 9}));
    EXPECT_EQ(discretize_positions(9, 3), (std::vector<std::int64_t>{0, 4, 8}));
    EXPECT_THROW(discretize_positions(3, 4), ContractError);
    EXPECT_THROW(discretize_positions(3, 0), ContractError);
}

TEST(BuildScene, DeltaRirIsIdentity) {
    const auto dir = fresh_dir("latflow_scene_delta");
    auto inv = hand_inventory(dir);
    auto a = read_wav(dir / "a.wav").wave;
    auto out = build_scene(manifest({speech("a.wav", "delta", 0, 8000)}), inv);
    ASSERT_EQ(out.mixture.size(), 8000u);
    ASSERT_EQ(out.references.size(), 1u);
    auto half = a.samples;
    for (auto& v : half) v *= 0.5f;
    EXPECT_LT(max_abs_diff(out.mixture.samples, half), 1e-7);
    EXPECT_EQ(max_abs_diff(out.references[0].samples, a.samples), 0.0);
    EXPECT_EQ(max_abs_diff(out.clean.samples, a.samples), 0.0);
}

TEST(BuildScene, ReferenceAlignedToRirPeak) {
    const auto dir = fresh_dir("latflow_scene_peak");
    auto inv = hand_inventory(dir);
    auto a = read_wav(dir / "a.wav").wave;
    auto out = build_scene(manifest({speech("a.wav", "late", 100, 4000)}), inv);
    const auto& ref = out.references[0].samples;
    for (std::int64_t i = 0; i < 105; ++i) EXPECT_EQ(ref[i], 0.0f);
    for (std::int64_t i = 0; i < 4000; ++i) ASSERT_EQ(ref[105 + i], a.samples[i]) << i;
    // Wet path against a direct-form convolution with the stored taps.
    auto h = read_wav(dir / "late.wav").wave.samples;
    for (std::int64_t i = 0; i < 4100; ++i) {
        double y = 0;
        for (std::int64_t k = 0; k < static_cast<std::int64_t>(h.size()); ++k) {
            if (i - k >= 0 && i - k < 4000) y += double(h[k]) * a.samples[i - k];
        }
        ASSERT_NEAR(out.mixture.samples[100 + i], y, 1e-6) << i;
    }
}

TEST(BuildScene, SpeechSourcesSuperpose) {
    const auto dir = fresh_dir("latflow_scene_sum");
    auto inv = hand_inventory(dir);
    auto s1 = speech("a.wav", "late", 0, 6000), s2 = speech("b.wav", "delta", 1500, 6000);
    auto both = build_scene(manifest({s1, s2}), inv);
    auto one = build_scene(manifest({s1}), inv), two = build_scene(manifest({s2}), inv);
    double d = 0;
    for (std::size_t i = 0; i < both.mixture.size(); ++i) {
        d = std::max(d, double(std::abs(both.mixture.samples[i] - one.mixture.samples[i] - two.mixture.samples[i])));
    }
    EXPECT_LT(d, 1e-6);
    ASSERT_EQ(both.references.size(), 2u);
}

TEST(BuildScene, NoiseScaledToRequestedSnr) {
    const auto dir = fresh_dir("latflow_scene_snr");
    auto inv = hand_inventory(dir);
    SourceEntry n;
    n.role = "noise";
    n.path = "n.wav";
    n.position = "late";
    n.length = 8000;
    n.snr_db = 5.0;
    auto s = speech("a.wav", "delta", 0, 8000);
    auto clean = build_scene(manifest({s}), inv);
    auto noisy = build_scene(manifest({s, n}), inv);
    double ps = 0, pn = 0;
    for (std::size_t i = 0; i < 8000; ++i) {
        ps += double(clean.mixture.samples[i]) * clean.mixture.samples[i];
        const double e = noisy.mixture.samples[i] - clean.mixture.samples[i];
        pn += e * e;
    }
    EXPECT_NEAR(10 * std::log10(ps / pn), 5.0, 1e-3);
}

TEST(BuildScene, MissingAudioIsIngestionError) {
    const auto dir = fresh_dir("latflow_scene_missing");
    auto inv = hand_inventory(dir);
    try {
        build_scene(manifest({speech("nope.wav", "delta", 0, 100)}), inv);
        FAIL() << "expected IngestionError";
    } catch (const IngestionError& e) {
        EXPECT_NE(std::string(e.what()).find("nope.wav"), std::string::npos);
    }
}

TEST(BuildScene, SegmentPastEndOfFileIsContractError) {
    const auto dir = fresh_dir("latflow_scene_len");
    auto inv = hand_inventory(dir);
    EXPECT_THROW(build_scene(manifest({speech("a.wav", "delta", 0, 9000)}, 9000), inv), ContractError);
}

TEST(Inventory, RoundTripsAndRejectsUnknownKeys) {
    const auto dir = fresh_dir("latflow_inventory");
    auto inv = hand_inventory(dir);
    save_inventory(dir / "inventory.json", inv);
    auto back = load_inventory(dir / "inventory.json");
    ASSERT_EQ(back.scenes.size(), 1u);
    EXPECT_EQ(back.scenes[0].positions[1].rir, "late.wav");
    EXPECT_DOUBLE_EQ(*back.scenes[0].positions[1].distance_m, 2.0);
    EXPECT_EQ(back.speech[1].speaker, "s2");
    EXPECT_THROW(load_inventory(dir / "absent.json"), IoError);
    std::ofstream(dir / "bad.json") << R"({"schema_version":1,"scenes":[],"speech":[],"noise":[],"music":[],"extra":1})";
    EXPECT_THROW(load_inventory(dir / "bad.json"), ConfigError);
}

TEST(ToyRir, EnvelopeReachesMinus60DbAtRt60) {
    const double rt60 = 0.3;
    const std::int64_t w = 40, t0 = w + 1, t1 = static_cast<std::int64_t>(rt60 * kSampleRate);
    double e0 = 0, e1 = 0;
    for (int s = 0; s < 400; ++s) {
        Rng rng(s, 3);
        auto h = toy_rir(rng, rt60, 0.5);
        EXPECT_EQ(h.samples[0], 1.0f);
        for (std::int64_t i = -w; i <= w; ++i) {
            e0 += double(h.samples[t0 + i]) * h.samples[t0 + i];
            e1 += double(h.samples[t1 + i]) * h.samples[t1 + i];
        }
    }
    // Window-averaged exponentials keep their ratio; correct for t0 > 0.
    const double db = 10 * std::log10(e1 / e0) - 60.0 * double(t0) / double(t1);
    EXPECT_NEAR(db, -60.0, 1.0);
}

TEST(ToyRir, ShortDecayIsNearImpulseAndSeedsReproduce) {
    Rng a(1, 2), b(1, 2);
    auto h = toy_rir(a, 1e-4, 0.1);
    EXPECT_EQ(h.samples[0], 1.0f);
    for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LT(std::abs(h.samples[i]), 1e-6);
    Rng c(9, 2), d(9, 2);
    EXPECT_EQ(toy_rir(c, 0.3, 0.2).samples, toy_rir(d, 0.3, 0.2).samples);
    EXPECT_THROW(toy_rir(a, 0.0, 0.1), ContractError);
}

class Corpus : public ::testing::Test {
   protected:
    static void SetUpTestSuite() {
        root_ = fresh_dir("latflow_corpus");
        inv_ = make_toy_inventory(root_ / "inv", 10, 10, 2, 5);
        cfg_.clips_per_scene = 2;
        cfg_.clip_seconds = 1.0;
        cfg_.codec_fallback = "force";
        cfg_.clip_prob = cfg_.bandlimit_prob = cfg_.packet_loss_prob = 0.5;
    }
    static fs::path root_;
    static RirInventory inv_;
    static CorpusConfig cfg_;
};
fs::path Corpus::root_;
RirInventory Corpus::inv_;
CorpusConfig Corpus::cfg_;

TEST_F(Corpus, ToyInventoryLoadsWithFixedPositions) {
    auto inv = load_inventory(root_ / "inv" / "inventory.json");
    ASSERT_EQ(inv.scenes.size(), 10u);
    for (const auto& s : inv.scenes) {
        EXPECT_EQ(s.positions.size(), 4u);
        for (const auto& p : s.positions) {
            ASSERT_TRUE(p.distance_m.has_value());
            EXPECT_GE(*p.distance_m, 1.0);
            EXPECT_LE(*p.distance_m, 8.0);
        }
    }
    EXPECT_EQ(inv.speech.size(), 20u);
}

TEST_F(Corpus, SplitsAreDisjointInScenesAndSpeakers) {
    auto plan = plan_corpus(cfg_, inv_, 11);
    EXPECT_EQ(plan.size(), 20u);
    std::map<std::string, std::set<std::string>> scenes, speakers;
    for (const auto& m : plan) {
        scenes[m.split].insert(m.scene_id);
        for (const auto& s : m.sources) {
            if (s.role == "speech") speakers[m.split].insert(s.speaker);
        }
    }
    EXPECT_EQ(scenes["train"].size(), 6u);
    EXPECT_EQ(scenes["val"].size(), 2u);
    EXPECT_EQ(scenes["test"].size(), 2u);
    for (const char* a : {"train", "val", "test"}) {
        for (const char* b : {"train", "val", "test"}) {
            if (std::string(a) >= b) continue;
            for (const auto& s : scenes[a]) EXPECT_FALSE(scenes[b].count(s)) << s;
            for (const auto& s : speakers[a]) EXPECT_FALSE(speakers[b].count(s)) << s;
        }
    }
}

TEST_F(Corpus, SpeakerPositionFixedWithinScene) {
    std::map<std::pair<std::string, std::string>, std::set<std::string>> pos;
    auto cfg = cfg_;
    cfg.clips_per_scene = 6;
    for (const auto& m : plan_corpus(cfg, inv_, 3)) {
        for (const auto& s : m.sources) {
            if (s.role == "speech") pos[{m.scene_id, s.speaker}].insert(s.position);
        }
    }
    for (const auto& [key, p] : pos) EXPECT_EQ(p.size(), 1u) << key.first << "/" << key.second;
}

TEST_F(Corpus, GenerationIsDeterministicAndSized) {
    auto a = generate_corpus(cfg_, inv_, 11, root_ / "a");
    auto cfg = cfg_;
    cfg.workers = 1;  // different thread count, same bytes
    generate_corpus(cfg, inv_, 11, root_ / "b");
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(root_ / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), root_ / "a");
        if (rel == "corpus.json") continue;  // echoes the worker count
        ASSERT_EQ(slurp(e.path()), slurp(root_ / "b" / rel)) << rel;
        ++files;
    }
    EXPECT_GT(files, 60u);
    for (const char* split : {"train", "val", "test"}) {
        for (const auto& c : list_corpus(root_ / "a", split)) {
            auto mix = read_wav(c.mix).wave;
            EXPECT_NEAR(double(mix.size()), cfg_.clip_seconds * kSampleRate, 0.05 * cfg_.clip_seconds * kSampleRate);
            EXPECT_EQ(read_wav(c.clean).wave.size(), mix.size());
        }
    }
    EXPECT_EQ(list_corpus(root_ / "a", "val").size(), 4u);
}

TEST_F(Corpus, InsufficientPoolsAreConfigErrors) {
    auto small = inv_;
    small.scenes.resize(5);
    EXPECT_THROW(plan_corpus(cfg_, small, 1), ConfigError);
    auto few = inv_;
    few.speech.resize(4);  // two speakers cannot cover three disjoint splits
    EXPECT_THROW(plan_corpus(cfg_, few, 1), ConfigError);
}

TEST(CorpusConfig, StrictKeys) {
    CorpusConfig c;
    c.snr_min_db = 3;
    auto back = corpus_config_from_json(to_json(c));
    EXPECT_EQ(back.snr_min_db, 3);
    auto j = to_json(c);
    j["bogus"] = 1;
    EXPECT_THROW(corpus_config_from_json(j), ConfigError);
}
