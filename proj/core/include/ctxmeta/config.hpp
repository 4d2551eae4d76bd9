#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ctxmeta/taskgen.hpp"
#include "ctxmeta/trainer.hpp"

namespace ctxmeta {

enum class ExperimentKind { confusing_regression, family_regression, glyph_sct, glyph_mct, glyph_ood };

std::string experiment_name(ExperimentKind kind);
/// Throws ConfigError on an unknown name.
ExperimentKind parse_experiment(const std::string& name);

/// Everything a run needs. Values not present in the file come from defaults_for(kind).
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::glyph_sct;
    Method method = Method::sct;
    std::uint64_t seed = 0;

    // [model]
    std::size_t concepts = 2;                  // C
    std::vector<std::size_t> hidden{128, 128};
    std::size_t embed_dim = 40;                // d
    std::size_t concept_dim = 40;              // d'
    double logit_scale = 20.0;

    // [task]
    std::size_t ways = 5;                      // N
    std::size_t shots = 1;                     // K
    /// Queries per class for glyph episodes; batch size for confusing regression; query points
    /// per family task.
    std::size_t query_size = 15;
    /// Family regression trains with these shot counts in rotation.
    std::vector<std::size_t> train_shots{5, 10};
    DrawPlan plan = DrawPlan::none;
    double noise_std = 0.0;
    double pixel_flip = 0.0;

    // [train]
    double learning_rate = 1e-3;
    std::size_t episodes = 5000;
    OmegaForm omega = OmegaForm::entropy;
    double lambda = 0.0;
    std::size_t validate_every = 0;
    std::size_t checkpoint_every = 0;
    std::size_t warmup_steps = 0;
    double anchor_weight = 0.0;
    double mixture_width = 0.1;

    // [eval]
    std::size_t trials = 2000;
    std::size_t validation_trials = 200;
    std::size_t threads = 1;

    // [output]
    std::string out_dir = "out";
};

ExperimentConfig defaults_for(ExperimentKind kind);

/// Reads an INI file: sections experiment, model, task, train, eval, output. `experiment.kind`
/// and `experiment.seed` are required; unknown keys are rejected. Every problem found is
/// reported in one ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(std::istream& in);

/// Range and consistency checks; throws a ConfigError listing every offending field.
void validate(const ExperimentConfig& config);

/// Canonical INI text of every field, in a fixed order.
std::string to_ini(const ExperimentConfig& config);
/// 16 hex digits identifying the canonical text; written into every output file header.
std::string config_hash(const ExperimentConfig& config);

}  // namespace ctxmeta
