// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "poscond/pipeline.hpp"

namespace poscond {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("poscond_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// First `n` words of a data text, written to `dir/<id>.txt`.
std::string excerpt(const fs::path& dir, const std::string& source, const std::string& id, std::size_t n) {
    std::istringstream in(read_file(fs::path(POSCOND_SOURCE_DIR) / "data/texts" / source));
    std::string word, out;
    for (std::size_t i = 0; i < n && in >> word; ++i) out += (i ? " " : "") + word;
    const fs::path p = dir / (id + ".txt");
    write_file(p, out + "\n");
    return p.string();
}

RunConfig small_config(const fs::path& dir, const std::string& out) {
    RunConfig cfg;
    cfg.P = 5;
    cfg.quadrature = {QuadratureRule::gauss_legendre, 8};
    TextSource a{"alice", excerpt(dir, "alice_ch1.txt", "alice", 24), Genre::narrative, true, ""};
    TextSource b{"pride", excerpt(dir, "pride_ch1.txt", "pride", 20), Genre::narrative, false, ""};
    cfg.texts = {a, b};
    cfg.output_dir = (dir / out).string();
    return cfg;
}

/// Every artifact except run manifests, which carry timestamps.
std::map<std::string, std::string> artifacts(const fs::path& out) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(out)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), out).generic_string();
        if (rel.rfind("manifests/", 0) == 0) continue;
        files[rel] = read_file(e.path());
    }
    return files;
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
    std::istringstream in(read_file(p));
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string c;
        while (std::getline(ls, c, ',')) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

TEST(Config, HashIgnoresOutputLocationOnly) {
    RunConfig a;
    a.texts = {{"t", "t.txt", Genre::narrative, false, ""}};
    RunConfig b = a;
    b.output_dir = "elsewhere";
    b.model_path = "/some/dir";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.P = 11;
    EXPECT_NE(config_hash(a), config_hash(b));
    b = a;
    b.quadrature.steps = 51;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(Config, JsonRoundTripAndRelativePaths) {
    const auto j = nlohmann::json::parse(R"({"P": 20, "texts": [{"path": "a/x.txt", "scramble": true}],
                                            "quadrature": {"rule": "riemann_trapezoid", "steps": 64},
                                            "baseline": "zero_embedding", "output_dir": "out"})");
    const auto c = config_from_json(j, "/base");
    EXPECT_EQ(c.P, 20u);
    EXPECT_EQ(c.texts.at(0).path, "/base/a/x.txt");
    EXPECT_EQ(c.texts[0].id, "x");
    EXPECT_TRUE(c.texts[0].scramble);
    EXPECT_EQ(c.quadrature.rule, QuadratureRule::riemann_trapezoid);
    EXPECT_EQ(c.baseline, BaselinePolicy::zero_embedding);
    EXPECT_EQ(c.output_dir, "/base/out");
    EXPECT_EQ(config_hash(config_from_json(to_json(c))), config_hash(c));
}

TEST(Config, RejectsBadInput) {
    for (const char* bad : {R"({"P": 1})", R"({"stride": 2})", R"({"colour": "red"})", R"({"quadrature": {"steps": 1}})",
                            R"({"normalization": "max"})", R"({"edge_fraction": 0.7})", R"([1, 2])",
                            R"({"texts": [{"path": "a.txt"}, {"path": "b/a.txt"}]})"}) {
        try {
            config_from_json(nlohmann::json::parse(bad));
            FAIL() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::ConfigError) << bad;
        }
    }
}

TEST(Config, ShippedConfigsLoad) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(fs::path(POSCOND_SOURCE_DIR) / "configs")) {
        if (e.path().extension() != ".json") continue;
        const auto c = load_config(e.path());
        for (const auto& t : c.texts) EXPECT_TRUE(fs::exists(t.path)) << t.path;
        ++n;
    }
    EXPECT_GE(n, 3u);
}

TEST(Pipeline, RunAllWritesEveryArtifact) {
    const auto dir = scratch("all");
    const auto cfg = small_config(dir, "out");
    const auto results = run_all(cfg);
    ASSERT_EQ(results.size(), stages().size());
    const fs::path out = cfg.output_dir;
    for (const char* rel : {"corpus/alice.json", "corpus/alice_scrambled.json", "corpus/pride.json", "tensors/alice.pct",
                            "tensors/alice_scrambled.pct", "profiles.csv", "metrics.csv", "metrics_pooled.csv",
                            "consistency.csv", "consistency_scrambled.csv", "pos_importance.csv",
                            "dominance_by_position.csv", "dominance_by_pos.csv", "dominance_consistency.csv",
                            "figures/fig2_positional_profiles.svg", "manifests/report.json"}) {
        EXPECT_TRUE(fs::exists(out / rel)) << rel;
    }
    const auto hash = config_hash(cfg);
    EXPECT_EQ(csv_config_hash(read_file(out / "profiles.csv")), hash);
    const auto t = load_tensor(out / "tensors/alice.pct");
    EXPECT_EQ(t.manifest["config_hash"], hash);
    EXPECT_EQ(t.W, 24u - 2 * 5 + 2);
    const auto stamp = nlohmann::json::parse(read_file(out / "manifests/attribute.json"));
    EXPECT_EQ(stamp["config_hash"], hash);
    EXPECT_TRUE(stamp.contains("started") && stamp.contains("finished") && stamp.contains("inputs_digest"));
}

// The last block only feeds the target logit through the last position, so the
// final layer puts all of its mass on the final window slot.
TEST(Pipeline, FinalLayerRecencyOnTinyModel) {
    const auto dir = scratch("recency");
    const auto cfg = small_config(dir, "out");
    stage_ingest(cfg);
    stage_attribute(cfg);
    stage_metrics(cfg);
    const auto rows = csv_rows(fs::path(cfg.output_dir) / "metrics.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows.back()[0], "2");
    EXPECT_NEAR(std::stod(rows.back()[2]), 1.0, 1e-12);
    EXPECT_NEAR(std::stod(rows.back()[1]), 0.0, 1e-12);
}

TEST(Pipeline, TwoRunsAreByteIdentical) {
    const auto dir = scratch("determinism");
    auto a = small_config(dir, "run_a");
    auto b = small_config(dir, "run_b");
    StageOptions many;
    many.workers = 3;
    run_all(a);
    run_all(b, many);
    const auto fa = artifacts(a.output_dir), fb = artifacts(b.output_dir);
    ASSERT_FALSE(fa.empty());
    EXPECT_EQ(fa, fb);
}

TEST(Pipeline, UpToDateStagesAreSkipped) {
    const auto dir = scratch("idempotent");
    const auto cfg = small_config(dir, "out");
    for (const auto& r : run_all(cfg)) EXPECT_FALSE(r.up_to_date) << r.stage;
    const auto before = artifacts(cfg.output_dir);
    for (const auto& r : run_all(cfg)) EXPECT_TRUE(r.up_to_date) << r.stage;
    EXPECT_EQ(artifacts(cfg.output_dir), before);

    // A damaged output brings its stage back.
    write_file(fs::path(cfg.output_dir) / "metrics.csv", "junk\n");
    EXPECT_FALSE(stage_metrics(cfg).up_to_date);
    EXPECT_EQ(artifacts(cfg.output_dir), before);

    StageOptions force;
    force.force = true;
    EXPECT_FALSE(stage_profile(cfg, force).up_to_date);
}

TEST(Pipeline, ArtifactsFromAnotherConfigAreStale) {
    const auto dir = scratch("stale");
    auto cfg = small_config(dir, "out");
    stage_ingest(cfg);
    stage_attribute(cfg);
    cfg.quadrature.steps = 9;
    try {
        stage_profile(cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::StaleArtifact);
    }
}

TEST(Pipeline, MissingModelIsAConfigError) {
    RunConfig cfg;
    cfg.model_id = "no-such-model";
    try {
        load_model(cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ConfigError);
    }
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(POSCOND_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, VerifyPasses) { EXPECT_EQ(run_cli("verify"), 0); }

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    const auto text = excerpt(dir, "alice_ch1.txt", "alice", 14);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("run --no-such-flag"), 1);
    EXPECT_EQ(run_cli("run --text " + text + " -P 1 -o " + (dir / "o").string()), 2);
    EXPECT_EQ(run_cli("run --model nope --text " + text + " -o " + (dir / "o").string()), 2);
    EXPECT_EQ(run_cli("ingest --text " + (dir / "missing.txt").string() + " -o " + (dir / "o").string()), 3);
    EXPECT_EQ(run_cli("run -q --text " + text + " -P 5 --steps 8 -o " + (dir / "ok").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "ok/figures/fig4_primacy_recency.svg"));
}

TEST(Cli, ConfigFileRun) {
    const auto dir = scratch("cli_config");
    excerpt(dir, "pride_ch1.txt", "pride", 12);
    write_file(dir / "run.json", R"({"P": 5, "quadrature": {"steps": 6}, "texts": [{"path": "pride.txt", "scramble": true}],
                                    "output_dir": "out"})");
    EXPECT_EQ(run_cli("run -q -c " + (dir / "run.json").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "out/tensors/pride_scrambled.pct"));
    write_file(dir / "bad.json", R"({"P": 4, "windw": 3})");
    EXPECT_EQ(run_cli("run -c " + (dir / "bad.json").string()), 2);
}

}  // namespace
}  // namespace poscond
