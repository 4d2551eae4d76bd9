#include <sstream>

#include "ctxmeta/config.hpp"
#include "ctxmeta/error.hpp"
#include "helpers.hpp"

using namespace ctxmeta;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::vector<std::string> problems_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.problems();
    }
    return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& field) {
    for (const auto& p : problems)
        if (p.rfind(field, 0) == 0) return true;
    return false;
}

}  // namespace

TEST(Config, MinimalFileTakesExperimentDefaults) {
    const auto c = parse("[experiment]\nkind = family-regression\nseed = 9\n");
    EXPECT_EQ(c.kind, ExperimentKind::family_regression);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.method, Method::sct);
    EXPECT_EQ(c.concepts, 4u);
    EXPECT_EQ(c.trials, 4000u);
    EXPECT_EQ(c.train_shots, (std::vector<std::size_t>{5, 10}));
}

TEST(Config, OverridesAndInlineComments) {
    const auto c = parse(
        "[experiment]\nkind = glyph-ood ; comment\nseed = 3\nmethod = BASELINE\n"
        "[model]\nhidden = 64, 32\nlogit_scale = 12.5\n[task]\nplan = draw-task\nnoise_std = 0.1\n"
        "[train]\nomega = none\nlambda = 0.02\n[output]\ndir = runs/a\n");
    EXPECT_EQ(c.method, Method::baseline);
    EXPECT_EQ(c.hidden, (std::vector<std::size_t>{64, 32}));
    EXPECT_EQ(c.logit_scale, 12.5);
    EXPECT_EQ(c.plan, DrawPlan::draw_task);
    EXPECT_EQ(c.omega, OmegaForm::none);
    EXPECT_EQ(c.lambda, 0.02);
    EXPECT_EQ(c.out_dir, "runs/a");
}

TEST(Config, MissingRequiredFieldsAreNamed) {
    const auto p = problems_of("[experiment]\nmethod = sct\n");
    EXPECT_TRUE(mentions(p, "experiment.kind"));
    EXPECT_TRUE(mentions(p, "experiment.seed"));
}

TEST(Config, EveryProblemIsReportedAtOnce) {
    const auto p = problems_of(
        "[experiment]\nkind = glyph-sct\nseed = x\n[model]\nconcepts = two\nembdim = 3\n"
        "[train]\nlearning_rate = -1\n");
    EXPECT_TRUE(mentions(p, "experiment.seed"));
    EXPECT_TRUE(mentions(p, "model.concepts"));
    EXPECT_TRUE(mentions(p, "model.embdim: unknown field"));
    EXPECT_GE(p.size(), 3u);
    // Range problems surface together once the values parse.
    const auto r = problems_of(
        "[experiment]\nkind = glyph-sct\nseed = 1\n[model]\nconcepts = 9\n[task]\npixel_flip = 0.7\nways = 1\n"
        "[train]\nlearning_rate = -1\n[eval]\ntrials = 1\n");
    for (const auto* field : {"model.concepts", "task.pixel_flip", "task.ways", "train.learning_rate", "eval.trials"})
        EXPECT_TRUE(mentions(r, field)) << field;
}

TEST(Config, ConsistencyRules) {
    EXPECT_TRUE(mentions(problems_of("[experiment]\nkind = glyph-ood\nseed = 1\n[task]\nplan = none\n"), "task.plan"));
    EXPECT_TRUE(mentions(problems_of("[experiment]\nkind = glyph-sct\nseed = 1\n[task]\nplan = draw-class\n"),
                         "task.plan"));
    EXPECT_TRUE(mentions(problems_of("[experiment]\nkind = family-regression\nseed = 1\nmethod = mct\n"),
                         "experiment.method"));
    EXPECT_TRUE(mentions(problems_of("[experiment]\nkind = glyph-sct\nseed = 1\n[train]\nwarmup_steps = 5\n"),
                         "train.warmup_steps"));
    EXPECT_TRUE(mentions(problems_of("[experiment]\nkind = nope\nseed = 1\n"), "experiment.kind"));
}

TEST(Config, CanonicalTextRoundTripsAndHashes) {
    for (auto kind : {ExperimentKind::confusing_regression, ExperimentKind::family_regression, ExperimentKind::glyph_sct,
                      ExperimentKind::glyph_mct, ExperimentKind::glyph_ood}) {
        auto c = defaults_for(kind);
        c.seed = 17;
        c.logit_scale = 0.1 + 0.2;
        const auto back = parse(to_ini(c));
        EXPECT_EQ(to_ini(back), to_ini(c)) << experiment_name(kind);
        EXPECT_EQ(config_hash(back), config_hash(c));
        EXPECT_EQ(back.logit_scale, c.logit_scale);
        EXPECT_EQ(config_hash(c).size(), 16u);
    }
    auto a = defaults_for(ExperimentKind::glyph_sct);
    auto b = a;
    b.out_dir = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed = 1;
    EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ShippedExamplesAreValid) {
    for (const auto* name : {"confusing-regression", "family-regression", "glyph-sct", "glyph-mct", "glyph-ood"}) {
        const auto c = load_config(std::string(CTXMETA_CONFIG_DIR) + "/" + name + ".ini");
        EXPECT_EQ(experiment_name(c.kind), name);
    }
    EXPECT_THROW(load_config("/nonexistent/config.ini"), ConfigError);
}
