#pragma once

#include <cstddef>
#include <vector>

#include "ctxmeta/episode.hpp"
#include "ctxmeta/model.hpp"
#include "ctxmeta/posterior.hpp"

namespace ctxmeta {

/// Indices into the extended support (support rows, then augmented views).
struct Triplet {
    std::size_t anchor = 0;
    std::size_t target = 0;    // same class as the anchor
    std::size_t impostor = 0;  // different class
};

struct TripletSet {
    std::vector<Triplet> triplets;
    /// Augmented anchor copies serving as target neighbors when K = 1.
    std::vector<Instance> augmented;
};

inline constexpr std::size_t kTripletCap = 64;

/// K = 1 target neighbors: a one-pixel shift for image episodes, otherwise Gaussian noise with
/// sigma = 0.01 * per-feature std of the support. Empty when K > 1.
std::vector<Instance> augment_support(const Episode& ep);

/// Shift an image one pixel to the right (zero fill), per channel.
std::vector<double> shift_image(std::span<const double> pixels, const ImageLayout& layout);

/// Semi-hard impostor mining on the given embeddings: for every ordered same-class pair
/// (anchor, target), the impostor with the smallest distance exceeding dist(anchor, target);
/// when none exists, the impostor with the largest distance. Pairs are put in a content-based
/// canonical order and capped at kTripletCap by a seeded subsample.
std::vector<Triplet> mine_triplets(const Episode& ep, const Tensor& extended_embedding);

/// Convenience: augments, embeds with the current backbone and mines.
TripletSet mine_triplets(const Episode& ep, const ModelParams& m);

/// upsilon(S) = softmax(FC(sum over triplets of ReLU(FC([e_i, e_j, e_l])))), shape [1 x C].
Tensor task_concept_prob(const ModelParams& m, const EpisodeEmbedding& emb, std::span<const Triplet> triplets);
Tensor task_concept_prob(const ModelParams& m, const Episode& ep);

/// Regression analog: the support (x, y) pairs form the set; each element is [phi(x_i), y_i].
Tensor regression_task_concept_prob(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb);

/// Pr(y | x, S) = sum_c upsilon_c * (class-y addends of concept c), renormalized over classes.
ConceptPosterior sct_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb,
                               const Tensor& upsilon);
ConceptPosterior sct_posterior(const ModelParams& m, const Episode& ep);
ConceptPosterior sct_posterior(const ModelParams& m, const Episode& ep, const Instance& x);

/// Mixture of regression heads weighted by upsilon: [Q x 1].
Tensor mix_heads(const ModelParams& m, const Tensor& query_emb, const Tensor& weights);

}  // namespace ctxmeta
