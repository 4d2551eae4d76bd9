#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ctxmeta/autodiff.hpp"

namespace ctxmeta {

enum class TaskKind { classification, regression };

/// One observation handed to the learner. Carries no hidden concept information;
/// that lives in EpisodeTruth, which the trainer never receives.
struct Instance {
    std::vector<double> features;
    /// Episode-local class index (classification).
    std::size_t label = 0;
    /// Real-valued label (regression).
    double target = 0.0;
};

/// Pixel layout of image features, stored channel-major.
struct ImageLayout {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
};

struct Episode {
    TaskKind kind = TaskKind::classification;
    std::vector<Instance> support;
    std::vector<Instance> query;
    std::size_t ways = 0;   // N
    std::size_t shots = 0;  // K
    /// Global label id of each local class (size N). Used for label encodings
    /// and deployment prototypes; identity for episode-relative labels.
    std::vector<std::size_t> class_ids;
    /// Width of the one-hot label encoding.
    std::size_t label_vocab = 0;
    std::optional<ImageLayout> image;
    /// Episode-scoped seed for augmentation noise and triplet subsampling.
    std::uint64_t seed = 0;
};

/// Evaluation-only metadata emitted by generators alongside an Episode.
struct EpisodeTruth {
    /// Concept that labels the whole episode (SCT), if any.
    std::optional<std::size_t> task_concept;
    std::vector<std::size_t> support_concepts;
    std::vector<std::size_t> query_concepts;
    /// Per-instance attribute values (e.g. glyph shape id, color id).
    std::vector<std::vector<std::size_t>> support_attributes;
    std::vector<std::vector<std::size_t>> query_attributes;
};

struct LabeledEpisode {
    Episode episode;
    EpisodeTruth truth;
};

/// Throws EpisodeStructureError when a classification episode breaks the N-way/K-shot
/// layout or a query label is missing from the support set.
void validate_episode(const Episode& ep);

/// Stacks instance features into an [n x dim] constant tensor.
ad::Tensor feature_matrix(std::span<const Instance> instances);
ad::Tensor target_column(std::span<const Instance> instances);

/// Global label id of a local class, honoring class_ids when present.
std::size_t global_label(const Episode& ep, std::size_t local);

}  // namespace ctxmeta
