// Command-line front end: train, eval, gen-tasks, export-curves, export-embeddings.
//
// Exit codes: 0 success, 1 other failure, 2 invalid configuration or arguments,
// 3 non-finite training loss, 4 unusable or mismatched checkpoint.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ctxmeta/checkpoint.hpp"
#include "ctxmeta/config.hpp"
#include "ctxmeta/error.hpp"
#include "ctxmeta/eval.hpp"
#include "ctxmeta/experiment.hpp"
#include "ctxmeta/random.hpp"
#include "ctxmeta/taskgen.hpp"

namespace fs = std::filesystem;
using namespace ctxmeta;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;
constexpr int kExitCheckpoint = 4;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trials;
    std::optional<std::string> out;
    std::string checkpoint;
    std::size_t count = 10;
};

/// Config file plus overrides. The output directory comes from --out, then CTXMETA_OUT_DIR,
/// then the file.
ExperimentConfig resolve(const Options& o) {
    auto c = load_config(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.trials) c.trials = *o.trials;
    if (const char* env = std::getenv("CTXMETA_OUT_DIR"); env && *env) c.out_dir = env;
    if (o.out) c.out_dir = *o.out;
    validate(c);
    return c;
}

fs::path prepare_out(const ExperimentConfig& c) {
    const fs::path dir(c.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + c.out_dir + ": " + ec.message());
    return dir;
}

void write_json(const fs::path& path, nlohmann::ordered_json body) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << body.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

/// Metrics with the config hash as their first field.
nlohmann::ordered_json with_hash(const std::string& hash, const nlohmann::json& body) {
    nlohmann::ordered_json out;
    out["config_hash"] = hash;
    for (const auto& [k, v] : body.items()) {
        if (k != "config_hash") out[k] = v;
    }
    return out;
}

TrainedModel load_model(const ExperimentConfig& c, const std::string& path) {
    TrainedModel m;
    if (uses_flat_classifier(c)) m.flat = load_flat_checkpoint(path);
    else m.model = load_checkpoint(path, model_config(c));
    return m;
}

void save_model(const fs::path& path, const TrainedModel& m, const std::string& hash) {
    if (m.flat) save_checkpoint(path.string(), *m.flat, hash);
    else save_checkpoint(path.string(), *m.model, hash);
}

void write_curves(const ExperimentConfig& c, const ModelParams& m, const fs::path& dir) {
    export_curves(m, uniform_grid(kInputLow, kInputHigh, 101), (dir / "curves.csv").string(), config_hash(c));
}

int cmd_train(const Options& o) {
    const auto c = resolve(o);
    const auto hash = config_hash(c);
    const auto dir = prepare_out(c);
    {
        std::ofstream cfg(dir / "config.ini");
        cfg << "; config-hash: " << hash << '\n' << to_ini(c);
    }
    std::cerr << "training " << experiment_name(c.kind) << " / " << method_name(c.method) << " for " << c.episodes
              << " episodes (config " << hash << ")\n";
    const auto run = run_training(c, [&](const ModelParams& m, std::size_t step) {
        save_checkpoint((dir / ("checkpoint-" + std::to_string(step) + ".bin")).string(), m, hash);
    });
    save_model(dir / "checkpoint.bin", run.model, hash);
    auto report = run.report.to_json();
    report["validation_metric_name"] = validation_metric_name(c);
    write_json(dir / "train_report.json", with_hash(hash, report));
    if (c.kind == ExperimentKind::confusing_regression && run.model.model) write_curves(c, *run.model.model, dir);
    const auto& last = run.report.validation.back();
    std::cout << experiment_name(c.kind) << " " << method_name(c.method) << ": " << validation_metric_name(c) << " "
              << last.second << " after " << last.first << " episodes (" << run.report.wall_seconds << " s)\n";
    return 0;
}

int cmd_eval(const Options& o) {
    const auto c = resolve(o);
    // Load before touching the output directory so a bad checkpoint leaves nothing behind.
    const auto model = load_model(c, o.checkpoint);
    const auto metrics = evaluate(c, model);
    const auto dir = prepare_out(c);
    auto body = metrics;
    body["checkpoint"] = o.checkpoint;
    write_json(dir / "metrics.json", with_hash(config_hash(c), body));
    std::cout << metrics["summary"].get<std::string>() << '\n';
    return 0;
}

int cmd_gen_tasks(const Options& o) {
    const auto c = resolve(o);
    const auto dir = prepare_out(c);
    std::ofstream out(dir / "tasks.jsonl");
    if (!out) throw IoError("cannot write tasks.jsonl");
    out << nlohmann::json{{"config_hash", config_hash(c)}, {"experiment", experiment_name(c.kind)}}.dump() << '\n';
    for (std::size_t i = 0; i < o.count; ++i) {
        const auto seed = derive_seed(derive_seed(c.seed, stream::export_tasks), i);
        LabeledEpisode ep;
        switch (c.kind) {
            case ExperimentKind::family_regression: ep = sample_family_task(c.shots, seed, c.query_size); break;
            case ExperimentKind::confusing_regression: {
                ep.episode.kind = TaskKind::regression;
                ep.episode.ways = 1;
                ep.episode.seed = seed;
                for (const auto& p : sample_confusing_batch(c.query_size, seed)) {
                    ep.episode.query.push_back({{p.x}, 0, p.y});
                    ep.truth.query_concepts.push_back(p.concept_id);
                }
                break;
            }
            default: {
                auto g = glyph_config(c);
                if (c.kind == ExperimentKind::glyph_ood) {
                    g.mode = GlyphMode::ood;
                    g.plan = c.plan;
                    g.noise_std = c.noise_std;
                    g.palette = Palette::novel;
                    g.palette_seed = derive_seed(c.seed, stream::palette);
                }
                ep = sample_glyph_episode(g, seed);
            }
        }
        export_jsonl(out, ep, i);
    }
    if (!out) throw IoError("failed writing tasks.jsonl");
    std::cout << "wrote " << o.count << " episodes to " << (dir / "tasks.jsonl").string() << '\n';
    return 0;
}

int cmd_export_curves(const Options& o) {
    const auto c = resolve(o);
    if (c.kind != ExperimentKind::confusing_regression && c.kind != ExperimentKind::family_regression) {
        throw ConfigError({"experiment.kind: export-curves needs a regression experiment"});
    }
    const auto model = load_model(c, o.checkpoint);
    const auto dir = prepare_out(c);
    write_curves(c, *model.model, dir);
    std::cout << "wrote " << (dir / "curves.csv").string() << '\n';
    return 0;
}

int cmd_export_embeddings(const Options& o) {
    const auto c = resolve(o);
    if (uses_flat_classifier(c)) throw ConfigError({"experiment.method: the flat classifier has no concept spaces"});
    const auto model = load_model(c, o.checkpoint);
    std::vector<ExportInstance> items;
    const auto seed = derive_seed(c.seed, stream::export_tasks);
    if (c.kind == ExperimentKind::confusing_regression || c.kind == ExperimentKind::family_regression) {
        for (const auto& p : sample_confusing_batch(o.count * 10, seed)) items.push_back({{p.x}, p.concept_id, 0});
    } else {
        for (std::size_t i = 0; i < o.count; ++i) {
            const auto lep = sample_glyph_episode(glyph_config(c), derive_seed(seed, i));
            const auto& ep = lep.episode;
            for (std::size_t q = 0; q < ep.query.size(); ++q) {
                const auto concept_id = lep.truth.task_concept ? *lep.truth.task_concept : lep.truth.query_concepts[q];
                const auto label = ep.class_ids.empty() ? ep.query[q].label : ep.class_ids[ep.query[q].label];
                items.push_back({ep.query[q].features, concept_id, label});
            }
        }
    }
    const auto dir = prepare_out(c);
    export_embeddings(*model.model, items, (dir / "embeddings.csv").string(), config_hash(c));
    std::cout << "wrote " << items.size() << " rows to " << (dir / "embeddings.csv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-concept meta-learning experiments"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
        sub->add_option("--config", o.config, "Experiment INI file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Override experiment.seed");
        sub->add_option("--trials", o.trials, "Override eval.trials");
        sub->add_option("--out", o.out, "Output directory (overrides CTXMETA_OUT_DIR and output.dir)");
        auto* ck = sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
        if (needs_checkpoint) ck->required();
    };
    auto* train = app.add_subcommand("train", "Meta-train and write checkpoints and a training report");
    add_common(train, false);
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and write metrics.json");
    add_common(eval, true);
    auto* gen = app.add_subcommand("gen-tasks", "Dump sampled episodes as JSON lines");
    add_common(gen, false);
    gen->add_option("--count", o.count, "Number of episodes")->check(CLI::PositiveNumber);
    auto* curves = app.add_subcommand("export-curves", "Write per-head regression curves as CSV");
    add_common(curves, true);
    auto* emb = app.add_subcommand("export-embeddings", "Write per-concept embeddings as CSV");
    add_common(emb, true);
    emb->add_option("--count", o.count, "Number of episodes to draw instances from")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*gen) return cmd_gen_tasks(o);
        if (*curves) return cmd_export_curves(o);
        if (*emb) return cmd_export_embeddings(o);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << '\n';
        return kExitConfig;
    } catch (const NonFiniteLossError& e) {
        std::cerr << "training aborted: " << e.what() << '\n';
        return kExitNonFinite;
    } catch (const FormatError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const CheckpointMismatchError& e) {
        std::cerr << "checkpoint does not match the configuration: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
