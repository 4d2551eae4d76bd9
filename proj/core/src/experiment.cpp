#include "ctxmeta/experiment.hpp"

#include <numeric>

#include "ctxmeta/error.hpp"
#include "ctxmeta/mct.hpp"
#include "ctxmeta/random.hpp"
#include "ctxmeta/taskgen.hpp"

namespace ctxmeta {

namespace {

constexpr std::size_t kGlyphInput = 3 * kGlyphSide * kGlyphSide;
constexpr std::size_t kIdentificationEpisodes = 500;

bool regression_kind(ExperimentKind kind) {
    return kind == ExperimentKind::confusing_regression || kind == ExperimentKind::family_regression;
}

std::uint64_t stream_seed(const ExperimentConfig& c, std::uint64_t stream, std::size_t index) {
    return derive_seed(derive_seed(c.seed, stream), index);
}

GlyphEpisodeConfig ood_config(const ExperimentConfig& c, Palette palette) {
    GlyphEpisodeConfig g;
    g.mode = GlyphMode::ood;
    g.ways = c.ways;
    g.shots = c.shots;
    g.queries_per_class = c.query_size;
    g.plan = c.plan;
    g.noise_std = c.noise_std;
    g.pixel_flip = c.pixel_flip;
    g.palette = palette;
    g.palette_seed = derive_seed(c.seed, stream::palette);
    return g;
}

/// Episodes a classification model is scored on, drawn from `stream`.
EpisodeFactory scoring_episodes(const ExperimentConfig& c, std::uint64_t stream, Palette palette = Palette::novel) {
    const auto g = c.kind == ExperimentKind::glyph_ood ? ood_config(c, palette) : glyph_config(c);
    return [g, c, stream](std::size_t i) { return sample_glyph_episode(g, stream_seed(c, stream, i)).episode; };
}

std::vector<double> flat_concept_accuracy(const FlatClassifier& f, const std::vector<MultiLabelInstance>& test) {
    return accuracy_matrix([&](std::size_t, const std::vector<double>& x) { return f.predict(x); }, 1, test).front();
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double validation_of(const ExperimentConfig& c, const ModelParams& m) {
    switch (c.kind) {
        case ExperimentKind::confusing_regression:
            return mean(per_concept_mse(m, uniform_grid(kInputLow, kInputHigh, c.validation_trials)).match.matched);
        case ExperimentKind::family_regression:
            return mse_over_trials(m, c.method, c.validation_trials, 5, derive_seed(c.seed, stream::validation),
                                   c.threads)
                .mean;
        case ExperimentKind::glyph_sct:
        case ExperimentKind::glyph_ood:
            return episode_accuracy(m, c.method, scoring_episodes(c, stream::validation), c.validation_trials,
                                    c.threads)
                .mean;
        case ExperimentKind::glyph_mct: {
            const auto test =
                glyph_concept_test_set(c.validation_trials, derive_seed(c.seed, stream::validation), c.pixel_flip);
            return mean(per_concept_accuracy(m, test).match.matched);
        }
    }
    throw ContractError("unknown experiment");
}

double validation_of(const ExperimentConfig& c, const FlatClassifier& f) {
    const auto test = glyph_concept_test_set(c.validation_trials, derive_seed(c.seed, stream::validation), c.pixel_flip);
    return mean(flat_concept_accuracy(f, test));
}

nlohmann::json interval(const MeanCi& ci) {
    return {{"mean", ci.mean}, {"ci95", ci.half_width}, {"count", ci.count}};
}

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

bool uses_flat_classifier(const ExperimentConfig& c) {
    return c.kind == ExperimentKind::glyph_mct && c.method == Method::baseline;
}

ModelConfig model_config(const ExperimentConfig& c) {
    ModelConfig m;
    m.phi_hidden = c.hidden;
    m.embed_dim = c.embed_dim;
    m.concept_dim = c.concept_dim;
    m.num_concepts = c.method == Method::baseline ? 1 : c.concepts;
    m.logit_scale = c.logit_scale;
    if (regression_kind(c.kind)) {
        m.input_dim = 1;
        m.regression = true;
        m.label_dim = 1;
    } else {
        m.input_dim = kGlyphInput;
        m.label_dim = c.kind == ExperimentKind::glyph_mct ? kGlyphVocab : c.ways;
    }
    return m;
}

TrainConfig train_config(const ExperimentConfig& c) {
    TrainConfig t;
    t.method = c.method;
    t.episodes = c.episodes;
    t.adam.learning_rate = c.learning_rate;
    t.loss.omega = {c.omega, c.lambda};
    t.loss.mixture_width = c.mixture_width;
    t.validate_every = c.validate_every;
    t.checkpoint_every = c.checkpoint_every;
    t.warmup_steps = c.warmup_steps;
    t.anchor_weight = c.anchor_weight;
    return t;
}

GlyphEpisodeConfig glyph_config(const ExperimentConfig& c) {
    GlyphEpisodeConfig g;
    // OOD runs are meta-trained on attribute-labeled base-palette episodes.
    g.mode = c.kind == ExperimentKind::glyph_mct ? GlyphMode::mct_mixed : GlyphMode::sct_attr;
    g.ways = c.ways;
    g.shots = c.shots;
    g.queries_per_class = c.query_size;
    g.pixel_flip = c.pixel_flip;
    if (c.kind != ExperimentKind::glyph_ood) g.noise_std = c.noise_std;
    return g;
}

Episode training_episode(const ExperimentConfig& c, std::size_t step) {
    const auto seed = stream_seed(c, stream::train_episodes, step);
    switch (c.kind) {
        case ExperimentKind::confusing_regression: {
            Episode ep;
            ep.kind = TaskKind::regression;
            ep.ways = 1;
            ep.seed = seed;
            for (const auto& p : sample_confusing_batch(c.query_size, seed)) ep.query.push_back({{p.x}, 0, p.y});
            return ep;
        }
        case ExperimentKind::family_regression:
            return sample_family_task(c.train_shots[step % c.train_shots.size()], seed, c.query_size).episode;
        case ExperimentKind::glyph_sct:
        case ExperimentKind::glyph_mct:
        case ExperimentKind::glyph_ood: return sample_glyph_episode(glyph_config(c), seed).episode;
    }
    throw ContractError("unknown experiment");
}

std::optional<WarmupSet> warmup_set(const ExperimentConfig& c) {
    if (c.kind != ExperimentKind::confusing_regression || c.method != Method::mct) return std::nullopt;
    WarmupSet w;
    for (const auto& p : sample_confusing_seed_set(10, derive_seed(c.seed, stream::warmup))) {
        w.x.push_back(p.x);
        w.y.push_back(p.y);
        w.concepts.push_back(p.concept_id);
    }
    return w;
}

TrainedModel initial_model(const ExperimentConfig& c) {
    TrainedModel out;
    const auto seed = derive_seed(c.seed, stream::model_init);
    if (uses_flat_classifier(c)) out.flat.emplace(kGlyphInput, c.hidden, c.embed_dim, kGlyphVocab, seed);
    else out.model.emplace(model_config(c), seed);
    return out;
}

std::vector<MultiLabelInstance> glyph_concept_test_set(std::size_t count, std::uint64_t seed, double pixel_flip) {
    Rng rng(derive_seed(seed, 1));
    std::vector<MultiLabelInstance> out;
    for (auto spec : sample_glyph_specs(count, seed)) {
        spec.pixel_flip = pixel_flip;
        out.push_back({render(spec, rng), {spec.shape_id, kGlyphShapes + spec.color_id}});
    }
    return out;
}

double validation_metric(const ExperimentConfig& c, const TrainedModel& model) {
    if (model.flat) return validation_of(c, *model.flat);
    if (!model.model) throw ContractError("validation_metric: empty model");
    return validation_of(c, *model.model);
}

std::string validation_metric_name(const ExperimentConfig& c) {
    switch (c.kind) {
        case ExperimentKind::confusing_regression: return "mean matched per-concept mse";
        case ExperimentKind::family_regression: return "5-shot mse";
        case ExperimentKind::glyph_sct: return "episode accuracy";
        case ExperimentKind::glyph_ood: return "novel-palette episode accuracy";
        case ExperimentKind::glyph_mct: return "mean concept accuracy";
    }
    return "metric";
}

ExperimentRun run_training(const ExperimentConfig& c, const CheckpointHook& checkpoint) {
    validate(c);
    ExperimentRun run;
    run.model = initial_model(c);
    const auto tc = train_config(c);
    if (run.model.flat) {
        auto& f = *run.model.flat;
        run.report = train_flat(f, tc, [&](std::size_t t) {
            const auto ep = training_episode(c, t);
            std::vector<Instance> batch;
            for (const auto* set : {&ep.support, &ep.query})
                for (auto inst : *set) {
                    inst.label = ep.class_ids[inst.label];
                    batch.push_back(std::move(inst));
                }
            return batch;
        });
        run.report.validation.emplace_back(c.episodes, validation_of(c, f));
        return run;
    }
    auto& m = *run.model.model;
    TrainHooks hooks;
    hooks.warmup = warmup_set(c);
    hooks.checkpoint = checkpoint;
    hooks.validate = [&](const ModelParams& p) { return validation_of(c, p); };
    run.report = meta_train(tc, m, [&](std::size_t t) { return training_episode(c, t); }, hooks);
    if (run.report.validation.empty() || run.report.validation.back().first != c.episodes) {
        run.report.validation.emplace_back(c.episodes, validation_of(c, m));
    }
    return run;
}

nlohmann::json evaluate(const ExperimentConfig& c, const TrainedModel& model) {
    nlohmann::json out;
    out["experiment"] = experiment_name(c.kind);
    out["method"] = method_name(c.method);
    out["config_hash"] = config_hash(c);
    out["seed"] = c.seed;
    out["trials"] = c.trials;
    out["validation_metric_name"] = validation_metric_name(c);
    out["validation_metric"] = validation_metric(c, model);
    std::string summary = experiment_name(c.kind) + " " + method_name(c.method);
    const auto eval_seed = derive_seed(c.seed, stream::evaluation);

    if (model.flat) {
        const auto acc = flat_concept_accuracy(*model.flat, glyph_concept_test_set(c.trials, eval_seed, c.pixel_flip));
        out["concept_accuracy"] = {{"shape", acc[0]}, {"color", acc[1]}};
        out["summary"] = summary + ": shape " + fixed(acc[0]) + " color " + fixed(acc[1]);
        return out;
    }
    const auto& m = *model.model;
    switch (c.kind) {
        case ExperimentKind::confusing_regression: {
            const auto r = per_concept_mse(m, uniform_grid(kInputLow, kInputHigh, c.trials));
            out["per_concept_mse"] = {{"matched", r.match.matched}, {"head_for", r.match.head_for}, {"matrix", r.matrix}};
            const double worst = *std::max_element(r.match.matched.begin(), r.match.matched.end());
            out["worst_matched_mse"] = worst;
            summary += ": matched mse";
            for (double v : r.match.matched) summary += " " + fixed(v);
            break;
        }
        case ExperimentKind::family_regression: {
            const auto five = mse_over_trials(m, c.method, c.trials, 5, eval_seed, c.threads);
            const auto ten = mse_over_trials(m, c.method, c.trials, 10, eval_seed, c.threads);
            out["mse_5shot"] = interval(five);
            out["mse_10shot"] = interval(ten);
            summary += ": 5-shot mse " + fixed(five.mean) + " +- " + fixed(five.half_width) + ", 10-shot mse " +
                       fixed(ten.mean) + " +- " + fixed(ten.half_width);
            break;
        }
        case ExperimentKind::glyph_sct: {
            const auto acc = episode_accuracy(m, c.method, scoring_episodes(c, stream::evaluation), c.trials, c.threads);
            out["accuracy"] = interval(acc);
            summary += ": accuracy " + fixed(acc.mean) + " +- " + fixed(acc.half_width);
            if (c.method == Method::sct && m.config.num_concepts > 1) {
                std::vector<LabeledEpisode> eps;
                const auto g = glyph_config(c);
                for (std::size_t i = 0; i < std::min(c.trials, kIdentificationEpisodes); ++i) {
                    eps.push_back(sample_glyph_episode(g, stream_seed(c, stream::evaluation, c.trials + i)));
                }
                const auto id = sct_identification(m, eps);
                out["identification"] = {{"rate", id.rate}, {"counts", id.counts}, {"episodes", eps.size()}};
                summary += ", concept identification " + fixed(id.rate);
            }
            break;
        }
        case ExperimentKind::glyph_ood: {
            const auto novel = episode_accuracy(m, c.method, scoring_episodes(c, stream::evaluation), c.trials, c.threads);
            const auto base = episode_accuracy(m, c.method, scoring_episodes(c, stream::evaluation, Palette::base),
                                               c.trials, c.threads);
            out["novel_accuracy"] = interval(novel);
            out["base_accuracy"] = interval(base);
            summary += ": novel-palette accuracy " + fixed(novel.mean) + " +- " + fixed(novel.half_width) +
                       ", base-palette accuracy " + fixed(base.mean);
            break;
        }
        case ExperimentKind::glyph_mct: {
            const auto r = per_concept_accuracy(m, glyph_concept_test_set(c.trials, eval_seed, c.pixel_flip));
            out["concept_accuracy"] = {{"shape", r.match.matched[0]},
                                       {"color", r.match.matched[1]},
                                       {"head_for", r.match.head_for},
                                       {"matrix", r.matrix}};
            summary += ": shape " + fixed(r.match.matched[0]) + " color " + fixed(r.match.matched[1]);
            break;
        }
    }
    out["summary"] = summary;
    return out;
}

}  // namespace ctxmeta
