#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ctxmeta/episode.hpp"
#include "ctxmeta/model.hpp"
#include "ctxmeta/trainer.hpp"

namespace ctxmeta {

/// Mean with a normal-approximation 95% interval (mean +- 1.96 SE).
struct MeanCi {
    double mean = 0.0;
    double half_width = 0.0;
    std::size_t count = 0;

    double low() const { return mean - half_width; }
    double high() const { return mean + half_width; }
};

/// Throws ConfigError for fewer than two values.
MeanCi mean_ci(const std::vector<double>& values);

/// Predictions for the queries of a regression episode.
using RegressionPredictor = std::function<std::vector<double>(const Episode&)>;

/// Trial t uses a family task drawn from derive_seed(seed, t). Trials run on `threads` workers and
/// are reduced in trial order. Throws ConfigError when trials < 2.
MeanCi mse_over_trials(const RegressionPredictor& predictor, std::size_t trials, std::size_t shots,
                       std::uint64_t seed, std::size_t threads = 1);
/// Model version: every worker gets its own frozen copy of m.
MeanCi mse_over_trials(const ModelParams& m, Method method, std::size_t trials, std::size_t shots,
                       std::uint64_t seed, std::size_t threads = 1);

/// Mean query accuracy over episodes, each evaluated on a frozen copy of the model.
using EpisodeFactory = std::function<Episode(std::size_t index)>;
MeanCi episode_accuracy(const ModelParams& m, Method method, const EpisodeFactory& episodes, std::size_t count,
                        std::size_t threads = 1);

/// Injective assignment of true concepts to learned heads. score[h][t] is the quality of head h
/// for concept t; the assignment maximizes the total. Exhaustive; throws UnsupportedSizeError
/// when there are more than six heads.
struct ConceptMatch {
    /// head_for[t] is the head matched to true concept t.
    std::vector<std::size_t> head_for;
    /// score of the matched pair for every true concept.
    std::vector<double> matched;
};
ConceptMatch match_concepts(const std::vector<std::vector<double>>& score);
/// Same search, minimizing the total (for error scores).
ConceptMatch match_concepts_min(const std::vector<std::vector<double>>& score);

/// A test instance with one label per true concept.
struct MultiLabelInstance {
    std::vector<double> features;
    std::vector<std::size_t> labels;
};

/// Accuracy matrix [heads x concepts] of an arbitrary per-head predictor.
using HeadPredictor = std::function<std::size_t(std::size_t head, const std::vector<double>& features)>;
std::vector<std::vector<double>> accuracy_matrix(const HeadPredictor& predict, std::size_t heads,
                                                 const std::vector<MultiLabelInstance>& instances);

struct ConceptAccuracy {
    std::vector<std::vector<double>> matrix;
    ConceptMatch match;
};
/// Deployment accuracy of every concept space against every true concept, then matched.
ConceptAccuracy per_concept_accuracy(const ModelParams& m, const std::vector<MultiLabelInstance>& instances);

/// Per-curve MSE of each regression head on a grid, matched to the three true curves.
struct ConceptMse {
    std::vector<std::vector<double>> matrix;
    ConceptMatch match;
};
ConceptMse per_concept_mse(const ModelParams& m, const std::vector<double>& grid);
/// Same table for an arbitrary per-head predictor.
ConceptMse per_concept_mse(const std::function<double(std::size_t head, double x)>& predict, std::size_t heads,
                           const std::vector<double>& grid);

/// Evenly spaced grid [low, high] with `count` points.
std::vector<double> uniform_grid(double low, double high, std::size_t count);

/// How often argmax upsilon(S) agrees with the true episode concept after matching selector
/// outputs to concepts.
struct Identification {
    double rate = 0.0;
    std::vector<std::vector<double>> counts;  // [selector output x true concept]
    ConceptMatch match;
};
Identification sct_identification(const ModelParams& m, const std::vector<LabeledEpisode>& episodes);

/// Columns: x, pred_1..pred_C, truth_1..truth_3. The first line is "# config-hash: <hash>".
void export_curves(const ModelParams& m, const std::vector<double>& grid, const std::string& path,
                   const std::string& config_hash);

/// An instance for embedding export.
struct ExportInstance {
    std::vector<double> features;
    std::size_t concept_id = 0;
    std::size_t label = 0;
};
/// Columns: id, concept, label, then c<k>_<j> for every concept k and coordinate j of phi(x) L_k.
void export_embeddings(const ModelParams& m, const std::vector<ExportInstance>& instances, const std::string& path,
                       const std::string& config_hash);

/// Stable hash of every parameter value; used to show evaluation leaves the model untouched.
std::uint64_t parameter_hash(const ModelParams& m);

}  // namespace ctxmeta
