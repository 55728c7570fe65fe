// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "poscond/pipeline.hpp"
#include "poscond/verify.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kConfig = 2;
constexpr int kPipeline = 3;

struct Overrides {
    std::string config_path;
    std::optional<std::string> model_id, model_path, rule, baseline, normalization, out;
    std::optional<std::size_t> P;
    std::optional<int> steps;
    std::optional<std::uint64_t> scramble_seed;
    std::optional<double> edge_fraction;
    std::vector<std::string> texts;
    bool scramble = false;
    bool bos = false;
};

poscond::RunConfig resolve_config(const Overrides& o) {
    using namespace poscond;
    RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    if (o.model_id) cfg.model_id = *o.model_id;
    if (o.model_path) cfg.model_path = *o.model_path;
    if (o.P) cfg.P = *o.P;
    if (o.steps) cfg.quadrature.steps = *o.steps;
    if (o.rule) cfg.quadrature.rule = quadrature_rule_from_string(*o.rule);
    if (o.baseline) cfg.baseline = *o.baseline == "default" ? std::nullopt : std::optional(baseline_policy_from_string(*o.baseline));
    if (o.normalization) cfg.normalization = normalization_mode_from_string(*o.normalization);
    if (o.scramble_seed) cfg.scramble_seed = *o.scramble_seed;
    if (o.edge_fraction) cfg.edge_fraction = *o.edge_fraction;
    if (o.out) cfg.output_dir = *o.out;
    if (o.bos) cfg.prepend_bos = true;
    if (!o.texts.empty()) {
        cfg.texts.clear();
        for (const auto& spec : o.texts) {
            TextSource t;
            const auto colon = spec.rfind(':');
            t.path = colon == std::string::npos ? spec : spec.substr(0, colon);
            if (colon != std::string::npos) t.genre = genre_from_string(spec.substr(colon + 1));
            t.id = std::filesystem::path(t.path).stem().string();
            cfg.texts.push_back(std::move(t));
        }
    }
    if (o.scramble)
        for (auto& t : cfg.texts) t.scramble = true;
    validate(cfg);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Positional conductance analysis of causal language models"};
    app.set_version_flag("--version", std::string(poscond::kToolVersion));
    app.require_subcommand(1, 1);

    Overrides o;
    unsigned workers = std::max(1u, std::thread::hardware_concurrency());
    bool force = false, dump_windows = false, quiet = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
        sub->add_option("--model", o.model_id, "model id (tiny-reference, gpt2, ...)");
        sub->add_option("--model-path", o.model_path, "checkpoint directory");
        sub->add_option("--text", o.texts, "text file, optionally PATH:GENRE; replaces config texts");
        sub->add_flag("--scramble", o.scramble, "also analyse a scrambled copy of every text");
        sub->add_option("--scramble-seed", o.scramble_seed, "seed for scrambled controls");
        sub->add_option("-P,--window", o.P, "window length in words");
        sub->add_option("--steps", o.steps, "quadrature steps");
        sub->add_option("--rule", o.rule, "riemann_left | riemann_trapezoid | gauss_legendre");
        sub->add_option("--baseline", o.baseline, "default | zero_embedding | pad_token_embedding");
        sub->add_option("--normalization", o.normalization, "signed_sum | absolute_sum");
        sub->add_option("--edge-fraction", o.edge_fraction, "share of positions counted as primacy / recency");
        sub->add_flag("--bos", o.bos, "prepend a beginning-of-sequence token to every window");
        sub->add_option("-o,--out", o.out, "output directory");
        sub->add_option("-j,--workers", workers, "worker threads (default: logical cores)")->check(CLI::PositiveNumber);
        sub->add_flag("--force", force, "recompute even if outputs are up to date");
        sub->add_flag("--dump-windows", dump_windows, "write per-window conductance JSON during attribute");
        sub->add_flag("-q,--quiet", quiet, "no progress messages");
    };

    std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
    for (const auto& [name, fn] : poscond::stages()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " stage");
        add_common(sub);
        stage_cmds.emplace_back(name, sub);
    }
    auto* run = app.add_subcommand("run", "run every stage in order");
    add_common(run);
    auto* verify = app.add_subcommand("verify", "check the numerics on the built-in tiny model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return e.get_exit_code() == 0 ? code : kUsage;
    }

    if (verify->parsed()) {
        bool ok = true;
        for (const auto& c : poscond::run_verification()) {
            std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
            ok = ok && c.passed;
        }
        return ok ? 0 : kPipeline;
    }

    try {
        const auto cfg = resolve_config(o);
        poscond::StageOptions opts;
        opts.workers = workers;
        opts.force = force;
        opts.dump_windows = dump_windows;
        opts.log = quiet ? nullptr : &std::cerr;
        if (run->parsed()) {
            poscond::run_all(cfg, opts);
        } else {
            for (const auto& [name, sub] : stage_cmds) {
                if (!sub->parsed()) continue;
                for (const auto& [sname, fn] : poscond::stages())
                    if (sname == name) fn(cfg, opts);
            }
        }
    } catch (const poscond::Error& e) {
        std::cerr << "poscond: " << e.what() << '\n';
        return e.kind() == poscond::ErrorKind::ConfigError ? kConfig : kPipeline;
    } catch (const std::exception& e) {
        std::cerr << "poscond: " << e.what() << '\n';
        return kPipeline;
    }
    return 0;
}
