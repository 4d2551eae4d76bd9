#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ctxmeta/episode.hpp"
#include "ctxmeta/model.hpp"

namespace ctxmeta {

/// Class posterior for a batch of queries.
struct ConceptPosterior {
    /// [Q x N], each row on the simplex.
    Tensor probs;
    /// [Q x C*N], column c*N + n holds sum over class-n references of Pr^c (concept-major).
    std::optional<Tensor> per_concept;
};

/// Embeddings of one episode, computed in a single backbone pass.
struct EpisodeEmbedding {
    Tensor support;    // [S x d]
    Tensor query;      // [Q x d]
    Tensor augmented;  // [A x d] extra support views (K = 1 triplet targets); undefined when A = 0
    /// Support rows followed by augmented rows: [(S + A) x d]. Triplet indices point here.
    Tensor extended;
    std::vector<Instance> augmented_instances;
};

/// Embeds support, optional augmented views, and queries with one phi pass.
EpisodeEmbedding embed_episode(const ModelParams& m, const Episode& ep,
                               std::span<const Instance> augmented = {});

/// Embeds support with the given queries instead of ep.query.
EpisodeEmbedding embed_episode(const ModelParams& m, const Episode& ep, std::span<const Instance> queries,
                               std::span<const Instance> augmented);

/// Negative-distance softmax over class representatives in phi space. For K > 1 the
/// representative is the class mean embedding.
ConceptPosterior proto_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb);
ConceptPosterior proto_posterior(const ModelParams& m, const Episode& ep);
ConceptPosterior proto_posterior(const ModelParams& m, const Episode& ep, const Instance& x);

/// Multi-concept posterior with kappa-scaled per-concept cosine distances and a denominator
/// shared across all (reference, concept) pairs. For K > 1 each concept space compares against
/// per-class means of projected support embeddings, paired with the class-mean kappa.
ConceptPosterior multi_concept_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb);
ConceptPosterior multi_concept_posterior(const ModelParams& m, const Episode& ep);
ConceptPosterior multi_concept_posterior(const ModelParams& m, const Episode& ep, const Instance& x);

/// Mean negative log-likelihood of the query labels under a [Q x N] probability table.
Tensor nll(const Tensor& probs, std::span<const Instance> queries);

/// Row-wise argmax of a probability table.
std::vector<std::size_t> argmax_rows(const Tensor& probs);

namespace detail {

/// Support-side references for the concept posteriors: either every support instance or per-class
/// means. ref_class[r] is the local class of reference r.
struct References {
    bool use_means = false;
    std::vector<std::size_t> ref_class;
    std::size_t count() const { return ref_class.size(); }
};

References make_references(const Episode& ep);
/// One reference per support instance regardless of K.
References instance_references(const Episode& ep);

/// Per-concept blocks [Q x R] of concept_logits.
std::vector<Tensor> concept_logit_blocks(const ModelParams& m, const Episode& ep, const Tensor& query_emb,
                                         const Tensor& support_emb, const References& refs);

/// kappa-scaled cosine logits z_c = kappa_q^c kappa_r^c cos(q L_c, r L_c), concatenated
/// concept-major into [Q x C*R].
Tensor concept_logits(const ModelParams& m, const Episode& ep, const Tensor& query_emb, const Tensor& support_emb,
                      const References& refs);

/// Constant [C*R x C*N] matrix summing references of the same class within each concept.
Tensor class_aggregator(std::size_t concepts, const References& refs, std::size_t ways);

/// Averages support rows per class: [S x w] -> [N x w] (identity order when K = 1).
Tensor class_means(const Tensor& rows, const Episode& ep);

}  // namespace detail

}  // namespace ctxmeta
