#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctxmeta/config.hpp"
#include "ctxmeta/eval.hpp"
#include "ctxmeta/trainer.hpp"

namespace ctxmeta {

/// A trained predictor: a concept model, or the flat 16-way classifier that serves as the
/// glyph-mct baseline.
struct TrainedModel {
    std::optional<ModelParams> model;
    std::optional<FlatClassifier> flat;
};

/// True when the run trains the flat supervised classifier instead of a concept model.
bool uses_flat_classifier(const ExperimentConfig& config);

ModelConfig model_config(const ExperimentConfig& config);
TrainConfig train_config(const ExperimentConfig& config);
/// Episode for training step t; randomness derives from the config seed only.
Episode training_episode(const ExperimentConfig& config, std::size_t step);
/// Labeled seed points for the confusing-regression warm-up.
std::optional<WarmupSet> warmup_set(const ExperimentConfig& config);
GlyphEpisodeConfig glyph_config(const ExperimentConfig& config);

/// Fresh untrained predictor seeded from the config.
TrainedModel initial_model(const ExperimentConfig& config);

/// Metric tracked during training: mean matched per-concept MSE (confusing), 5-shot MSE
/// (family), episode accuracy (glyph-sct, glyph-ood) or mean matched concept accuracy (glyph-mct).
/// Uses its own seed stream, so the same model always scores the same.
double validation_metric(const ExperimentConfig& config, const TrainedModel& model);
std::string validation_metric_name(const ExperimentConfig& config);

struct ExperimentRun {
    TrainedModel model;
    TrainReport report;
};

/// Trains from initial_model(config). Validation runs every validate_every episodes and once
/// more at the end; `checkpoint` is called every checkpoint_every episodes (concept models only).
ExperimentRun run_training(const ExperimentConfig& config, const CheckpointHook& checkpoint = {});

/// Full evaluation protocol of the experiment. The result always holds "experiment",
/// "method", "config_hash", "trials", "validation_metric" and a one-line "summary".
nlohmann::json evaluate(const ExperimentConfig& config, const TrainedModel& model);

/// Glyph test instances with {shape, color} labels in the 16-label vocabulary.
std::vector<MultiLabelInstance> glyph_concept_test_set(std::size_t count, std::uint64_t seed, double pixel_flip);

}  // namespace ctxmeta
