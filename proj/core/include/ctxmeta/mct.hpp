#pragma once

#include <cstddef>
#include <optional>
#include <variant>
#include <vector>

#include "ctxmeta/episode.hpp"
#include "ctxmeta/model.hpp"
#include "ctxmeta/posterior.hpp"

namespace ctxmeta {

/// A query paired with a hypothesized episode-local label.
struct LabelHypothesis {
    std::size_t query = 0;
    std::size_t label = 0;
};

/// Label-conditioned quantities for a list of (query, label) hypotheses.
struct MctTerms {
    Tensor upsilon;  // [P x C] instance concept probability per hypothesis
    Tensor mask;     // [P x S] comparison mask tau per hypothesis and support instance
    Tensor score;    // [P x 1] unnormalized sum_{x_i in y} sum_c upsilon_c Pr^c
};

/// One-hot encoding [1 x vocab] of a local label through ep.class_ids.
Tensor label_encoding(const Episode& ep, std::size_t local_label);

/// Computes upsilon, tau and the masked posterior score for each hypothesis. The mask multiplies
/// the denominator logits only: Pr^c = exp(z^c_i) / sum_j sum_c' exp(tau_j z^c'_j), with
/// z^c = kappa^c_x kappa^c_i cos(x L_c, x_i L_c).
MctTerms mct_terms(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb,
                   std::span<const LabelHypothesis> hypotheses);

/// upsilon(S, x, y) for one instance and label: [C].
Tensor instance_concept_prob(const ModelParams& m, const Episode& ep, const Instance& x, std::size_t label);

/// tau = sigmoid(FC([phi(x), phi(x_j), y, y_j])) as a scalar tensor.
Tensor comparison_mask(const ModelParams& m, const Episode& ep, const Instance& x, std::size_t label,
                       const Instance& other, std::size_t other_label);

/// Training-time posterior over every class for every query; each class score uses its own
/// label in upsilon and tau, then rows are renormalized over classes.
ConceptPosterior mct_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb);
ConceptPosterior mct_posterior(const ModelParams& m, const Episode& ep);
/// Posterior of one instance for the class `label` (before class renormalization), with the
/// full renormalized row in probs.
ConceptPosterior mct_posterior(const ModelParams& m, const Episode& ep, const Instance& x);

/// Regression selector upsilon(x, y) = softmax(FC(ReLU(FC([phi(x), y])))): [Q x C].
Tensor regression_instance_concept_prob(const ModelParams& m, const Tensor& emb, const Tensor& targets);

/// Folds one episode into the deployment prototypes: for each class, the normalized mean of
/// its projected support embeddings in every concept space, weighted by the mean upsilon of
/// that class's true-label hypotheses (upsilon_true is [N x C] of detached values).
void update_prototypes(ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb, const Tensor& upsilon_true);

/// Labels whose accumulated prototype weight is largest in `concept`.
std::vector<std::size_t> owned_labels(const ModelParams& m, std::size_t concept_index);

/// Deployment prediction from one concept space; never sees a label.
///  classification: global label of the nearest prototype among the labels owned by the concept
///  regression: regress(phi(x), concept)
using DeployPrediction = std::variant<std::size_t, double>;
DeployPrediction deploy_predict(const ModelParams& m, std::span<const double> features, std::size_t concept_index);
std::size_t deploy_label(const ModelParams& m, std::span<const double> features, std::size_t concept_index);
double deploy_value(const ModelParams& m, std::span<const double> features, std::size_t concept_index);

}  // namespace ctxmeta
