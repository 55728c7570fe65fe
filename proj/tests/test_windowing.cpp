// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "poscond/tensor_io.hpp"
#include "poscond/windowing.hpp"

namespace poscond {
namespace {

namespace fs = std::filesystem;

const LanguageModel& tiny() {
    static const LanguageModel model = LanguageModel::tiny_reference();
    return model;
}

CorpusText synthetic_text(std::size_t n, const std::string& id = "synthetic") {
    static const char* pool[] = {"we", "saw", "a", "red", "kite", "over", "the", "old", "mill", "and", "ran"};
    std::string raw;
    for (std::size_t i = 0; i < n; ++i) raw += std::string(i ? " " : "") + pool[(i * 5 + i / 4) % 11];
    static const LexiconTagger tagger;
    return ingest_text(raw, id, Genre::narrative, &tagger);
}

AttributionConfig fast_config() {
    AttributionConfig cfg;
    cfg.quadrature = {QuadratureRule::gauss_legendre, 8};
    return cfg;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("poscond_" + name); }

TEST(PlanWindows, WorkedExamples) {
    const auto a = plan_windows(20, 10);
    EXPECT_EQ(a.windows.size(), 11u);
    EXPECT_EQ(a.retained_words, (std::vector<std::size_t>{10, 11}));

    const auto b = plan_windows(10, 10);
    EXPECT_EQ(b.windows.size(), 1u);
    EXPECT_TRUE(b.retained_words.empty());

    const auto c = plan_windows(957, 10);
    EXPECT_EQ(c.windows.size(), 948u);
    EXPECT_EQ(c.retained_words.size(), 939u);
}

TEST(PlanWindows, MatchesEnumerationOracle) {
    for (std::size_t p = 2; p <= 12; ++p) {
        for (std::size_t n = p; n <= 4 * p + 3; ++n) {
            const auto plan = plan_windows(n, p);
            const auto e = oracle::enumerate_windows(n, p);
            ASSERT_EQ(plan.windows.size(), e.window_count) << n << "," << p;
            ASSERT_EQ(std::set<std::size_t>(plan.retained_words.begin(), plan.retained_words.end()), e.retained);
            const std::size_t W = n + 2 >= 2 * p ? n + 2 - 2 * p : 0;
            ASSERT_EQ(plan.retained_words.size(), W);
            for (std::size_t k = 0; k < plan.windows.size(); ++k) {
                ASSERT_EQ(plan.windows[k].window_id, k);
                ASSERT_EQ(plan.windows[k].start, k + 1);
            }
        }
    }
    const auto e = oracle::enumerate_windows(957, 10);
    EXPECT_EQ(e.window_count, 948u);
    EXPECT_EQ(e.retained.size(), 939u);
}

TEST(PlanWindows, Errors) {
    try {
        plan_windows(9, 10);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TextTooShort);
    }
    EXPECT_THROW(plan_windows(20, 10, 2), Error);
    EXPECT_THROW(plan_windows(20, 1), Error);
}

TEST(BuildTensor, ShapeForTwoP) {
    const std::size_t P = 5;
    const auto text = synthetic_text(2 * P);
    const auto plan = plan_windows(text, P);
    const auto t = build_tensor(plan, text, tiny(), fast_config());
    EXPECT_EQ(t.L, 2u);
    EXPECT_EQ(t.W, 2u);
    EXPECT_EQ(t.P, P);
    EXPECT_EQ(t.word_index_map, (std::vector<std::size_t>{5, 6}));
    for (double v : t.data) EXPECT_FALSE(std::isnan(v));
    EXPECT_EQ(t.manifest["window_count"], 6);
    EXPECT_TRUE(t.manifest["skipped_windows"].empty());
    EXPECT_EQ(t.manifest["model_id"], "tiny-reference");
}

TEST(BuildTensor, CellsEqualStandaloneWindowRuns) {
    const std::size_t P = 4;
    const auto text = synthetic_text(13);
    const auto plan = plan_windows(text, P);
    const auto cfg = fast_config();
    const auto t = build_tensor(plan, text, tiny(), cfg);
    const auto words = text.surfaces();
    for (std::size_t w = 0; w < t.W; ++w) {
        const std::size_t i = t.word_index_map[w];
        for (std::size_t p = 1; p <= P; ++p) {
            const std::size_t start = i - p + 1;  // the unique window with word i at position p
            const std::vector<std::string> win(words.begin() + static_cast<std::ptrdiff_t>(start - 1),
                                               words.begin() + static_cast<std::ptrdiff_t>(start - 1 + P));
            const auto a = attribute_window(tiny(), win, cfg);
            for (std::size_t l = 0; l < t.L; ++l) {
                ASSERT_EQ(t.at(l, w, p - 1), a.words.values(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(p - 1)));
            }
        }
    }
}

// When every word of a window is retained, its cells sum to 1 per layer.
TEST(BuildTensor, WindowCellsSumToOne) {
    const std::size_t P = 3;
    const auto text = synthetic_text(12);
    const auto plan = plan_windows(text, P);
    const auto t = build_tensor(plan, text, tiny(), fast_config());
    std::size_t checked = 0;
    for (const auto& win : plan.windows) {
        bool all_retained = true;
        for (std::size_t p = 0; p < P; ++p) all_retained = all_retained && plan.retained_slot(win.start + p).has_value();
        if (!all_retained) continue;
        ++checked;
        for (std::size_t l = 0; l < t.L; ++l) {
            double s = 0;
            for (std::size_t p = 0; p < P; ++p) s += t.at(l, *plan.retained_slot(win.start + p), p);
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
    EXPECT_GT(checked, 0u);
}

TEST(BuildTensor, WorkerCountDoesNotChangeBytes) {
    const auto text = synthetic_text(16);
    const auto plan = plan_windows(text, 4);
    BuildOptions one, four;
    four.workers = 4;
    const auto a = build_tensor(plan, text, tiny(), fast_config(), one);
    const auto b = build_tensor(plan, text, tiny(), fast_config(), four);
    EXPECT_EQ(serialize_tensor(a), serialize_tensor(b));
}

TEST(BuildTensor, FailedWindowsAreLoggedAndLeaveNaN) {
    // An input_copy baseline makes every raw sum zero, so every window fails.
    const auto text = synthetic_text(8);
    const auto plan = plan_windows(text, 3);
    auto cfg = fast_config();
    cfg.baseline = BaselinePolicy::input_copy;
    BuildOptions opts;
    opts.max_failure_rate = 1.0;
    const auto t = build_tensor(plan, text, tiny(), cfg, opts);
    EXPECT_EQ(t.manifest["skipped_windows"].size(), plan.windows.size());
    EXPECT_EQ(t.manifest["skipped_windows"][0]["error"], "DegenerateDenominator");
    for (double v : t.data) EXPECT_TRUE(std::isnan(v));

    try {
        build_tensor(plan, text, tiny(), cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooManyWindowFailures);
    }
}

TEST(BuildTensor, DebugDumpInWindowOrder) {
    const auto text = synthetic_text(7);
    const auto plan = plan_windows(text, 3);
    std::vector<nlohmann::json> debug;
    BuildOptions opts;
    opts.workers = 3;
    opts.debug = &debug;
    build_tensor(plan, text, tiny(), fast_config(), opts);
    ASSERT_EQ(debug.size(), plan.windows.size());
    for (std::size_t k = 0; k < debug.size(); ++k) EXPECT_EQ(debug[k][0]["window_id"], k);
}

ConductanceTensor sample_tensor() {
    auto t = ConductanceTensor::filled(3, 4, 5, 0.0);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = std::exp(-static_cast<double>(i)) * (i % 2 ? -1 : 1) / 7.0;
    t.data[3] = std::numeric_limits<double>::quiet_NaN();
    t.data[4] = -0.0;
    t.word_index_map = {10, 11, 12, 13};
    t.manifest = {{"model_id", "m"}, {"skipped_windows", {{{"window_id", 2}, {"start", 3}, {"error", "DegenerateDenominator"}}}}};
    return t;
}

TEST(TensorIo, RoundTripIsBitExact) {
    const auto t = sample_tensor();
    const auto path = temp_file("roundtrip.pct");
    save_tensor(t, path);
    const auto back = load_tensor(path);
    EXPECT_EQ(back.L, t.L);
    EXPECT_EQ(back.W, t.W);
    EXPECT_EQ(back.P, t.P);
    ASSERT_EQ(back.data.size(), t.data.size());
    EXPECT_EQ(std::memcmp(back.data.data(), t.data.data(), t.data.size() * sizeof(double)), 0);
    EXPECT_EQ(back.word_index_map, t.word_index_map);
    EXPECT_EQ(back.manifest, t.manifest);
    EXPECT_EQ(serialize_tensor(back), serialize_tensor(t));
    fs::remove(path);
}

TEST(TensorIo, LayoutIsDocumented) {
    const auto bytes = serialize_tensor(sample_tensor());
    EXPECT_EQ(bytes.substr(0, 8), "PCONDT01");
    const std::uint32_t n = static_cast<unsigned char>(bytes[8]) | static_cast<unsigned char>(bytes[9]) << 8 |
                            static_cast<unsigned char>(bytes[10]) << 16 | static_cast<unsigned char>(bytes[11]) << 24;
    const auto header = nlohmann::json::parse(bytes.substr(12, n));
    EXPECT_EQ(header["L"], 3);
    EXPECT_EQ(header["sha256"].get<std::string>().size(), 64u);
    EXPECT_EQ(bytes.size(), 12 + n + 3 * 4 * 5 * 8);
    // payload is little-endian f64 in [L, W, P] order
    double first;
    std::memcpy(&first, bytes.data() + 12 + n, 8);
    EXPECT_EQ(first, sample_tensor().data[0]);
}

TEST(TensorIo, TruncationIsAChecksumMismatch) {
    const auto bytes = serialize_tensor(sample_tensor());
    for (std::size_t cut : {bytes.size() - 1, bytes.size() - 8, bytes.size() / 2, std::size_t{10}, std::size_t{20}}) {
        try {
            deserialize_tensor(bytes.substr(0, cut));
            FAIL() << cut;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::ChecksumMismatch) << cut;
        }
    }
    auto flipped = bytes;
    flipped.back() ^= 0x01;
    try {
        deserialize_tensor(flipped);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ChecksumMismatch);
    }
}

TEST(TensorIo, VersionMismatch) {
    auto bytes = serialize_tensor(sample_tensor());
    bytes[7] = '2';
    try {
        deserialize_tensor(bytes);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::FormatVersionMismatch);
    }
    try {
        deserialize_tensor("GARBAGE!rest");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::FormatVersionMismatch);
    }
}

}  // namespace
}  // namespace poscond
