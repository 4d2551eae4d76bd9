#include "ctxmeta/mct.hpp"

#include <algorithm>
#include <cmath>

#include "ctxmeta/error.hpp"

namespace ctxmeta {

namespace {

void require_classification(const ModelParams& m, const Episode& ep) {
    if (m.config.regression || ep.kind != TaskKind::classification) {
        throw ModeError("label-conditioned posterior needs a classification model and episode");
    }
}

/// [N x vocab] one-hot rows of the episode's classes.
Tensor encoding_table(const ModelParams& m, const Episode& ep) {
    const auto V = m.config.label_dim;
    std::vector<double> data(ep.ways * V, 0.0);
    for (std::size_t n = 0; n < ep.ways; ++n) {
        const auto g = global_label(ep, n);
        if (g >= V) throw IndexError("label " + std::to_string(g) + " exceeds the label encoding width");
        data[n * V + g] = 1.0;
    }
    return Tensor::from({ep.ways, V}, std::move(data));
}

Tensor column(const Tensor& t, std::size_t c) {
    const std::vector<std::size_t> cols(t.rows(), c);
    return ad::pick(t, cols);
}

std::vector<double> normalized(std::vector<double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    if (sq == 0.0) throw DegenerateInputError("zero-norm embedding");
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& x : v) x *= inv;
    return v;
}

}  // namespace

Tensor label_encoding(const Episode& ep, std::size_t local_label) {
    const auto g = global_label(ep, local_label);
    const auto V = ep.label_vocab == 0 ? ep.ways : ep.label_vocab;
    if (g >= V) throw IndexError("label outside the label vocabulary");
    std::vector<double> data(V, 0.0);
    data[g] = 1.0;
    return Tensor::from({1, V}, std::move(data));
}

MctTerms mct_terms(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb,
                   std::span<const LabelHypothesis> hypotheses) {
    require_classification(m, ep);
    if (hypotheses.empty()) throw ContractError("mct_terms: no hypotheses");
    const auto S = ep.support.size();
    const auto P = hypotheses.size();
    const auto C = m.config.num_concepts;
    const Tensor enc = encoding_table(m, ep);

    // Selector: one row per (hypothesis, same-label support instance).
    std::vector<std::size_t> sel_support, sel_query, sel_label, sel_segment;
    // Mask: one row per (hypothesis, support instance).
    std::vector<std::size_t> mask_query, mask_support, mask_label, mask_other;
    std::vector<double> same_label(P * S, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
        const auto& h = hypotheses[p];
        if (h.query >= emb.query.rows()) throw IndexError("hypothesis query index out of range");
        bool found = false;
        for (std::size_t i = 0; i < S; ++i) {
            const auto yi = ep.support[i].label;
            if (yi == h.label) {
                found = true;
                sel_support.push_back(i);
                sel_query.push_back(h.query);
                sel_label.push_back(h.label);
                sel_segment.push_back(p);
                same_label[p * S + i] = 1.0;
            }
            mask_query.push_back(h.query);
            mask_support.push_back(i);
            mask_label.push_back(h.label);
            mask_other.push_back(yi);
        }
        if (!found) throw EpisodeStructureError("label " + std::to_string(h.label) + " absent from the support set");
    }

    const Tensor sel_in = ad::concat({ad::gather_rows(emb.support, sel_support), ad::gather_rows(emb.query, sel_query),
                                      ad::gather_rows(enc, sel_label)});
    const Tensor pooled = ad::segment_sum(ad::relu(m.mct_selector.inner(sel_in)), sel_segment, P);
    const Tensor upsilon = ad::softmax(m.mct_selector.outer(pooled));

    const Tensor mask_in = ad::concat({ad::gather_rows(emb.query, mask_query), ad::gather_rows(emb.support, mask_support),
                                       ad::gather_rows(enc, mask_label), ad::gather_rows(enc, mask_other)});
    const Tensor tau = ad::reshape(ad::sigmoid(m.mask_net(mask_in)), {P, S});

    std::vector<std::size_t> rows_of_query;
    rows_of_query.reserve(P);
    for (const auto& h : hypotheses) rows_of_query.push_back(h.query);
    const auto refs = detail::instance_references(ep);
    const auto blocks = detail::concept_logit_blocks(m, ep, emb.query, emb.support, refs);
    const Tensor same = Tensor::from({P, S}, std::move(same_label));

    Tensor numerator, denominator;
    for (std::size_t c = 0; c < C; ++c) {
        const Tensor z = ad::gather_rows(blocks[c], rows_of_query);
        const Tensor den_c = ad::sum_cols(ad::exp(ad::mul(tau, z)));
        const Tensor num_c = ad::mul(column(upsilon, c), ad::sum_cols(ad::mul(ad::exp(z), same)));
        denominator = c == 0 ? den_c : ad::add(denominator, den_c);
        numerator = c == 0 ? num_c : ad::add(numerator, num_c);
    }
    return {upsilon, tau, ad::div(numerator, denominator)};
}

Tensor instance_concept_prob(const ModelParams& m, const Episode& ep, const Instance& x, std::size_t label) {
    validate_episode(ep);
    const auto emb = embed_episode(m, ep, std::span(&x, 1), {});
    const LabelHypothesis h{0, label};
    return ad::reshape(mct_terms(m, ep, emb, std::span(&h, 1)).upsilon, {m.config.num_concepts});
}

Tensor comparison_mask(const ModelParams& m, const Episode& ep, const Instance& x, std::size_t label,
                       const Instance& other, std::size_t other_label) {
    require_classification(m, ep);
    const std::vector<Instance> pair{x, other};
    const Tensor e = embed(m, feature_matrix(pair));
    const Tensor enc = encoding_table(m, ep);
    const std::vector<std::size_t> first{0}, second{1}, y{label}, yj{other_label};
    const Tensor input = ad::concat({ad::gather_rows(e, first), ad::gather_rows(e, second), ad::gather_rows(enc, y),
                                     ad::gather_rows(enc, yj)});
    return ad::reshape(ad::sigmoid(m.mask_net(input)), {});
}

ConceptPosterior mct_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb) {
    const auto Q = emb.query.rows();
    const auto N = ep.ways;
    std::vector<LabelHypothesis> hyps;
    hyps.reserve(Q * N);
    for (std::size_t q = 0; q < Q; ++q)
        for (std::size_t n = 0; n < N; ++n) hyps.push_back({q, n});
    const auto terms = mct_terms(m, ep, emb, hyps);
    const Tensor scores = ad::reshape(terms.score, {Q, N});
    ConceptPosterior out;
    out.probs = ad::div(scores, ad::sum_cols(scores));
    return out;
}

ConceptPosterior mct_posterior(const ModelParams& m, const Episode& ep) {
    validate_episode(ep);
    return mct_posterior(m, ep, embed_episode(m, ep));
}

ConceptPosterior mct_posterior(const ModelParams& m, const Episode& ep, const Instance& x) {
    validate_episode(ep);
    return mct_posterior(m, ep, embed_episode(m, ep, std::span(&x, 1), {}));
}

Tensor regression_instance_concept_prob(const ModelParams& m, const Tensor& emb, const Tensor& targets) {
    if (!m.config.regression) throw ModeError("regression selector on a classification model");
    const Tensor joined = ad::concat({emb, targets});
    return ad::softmax(m.mct_selector.outer(ad::relu(m.mct_selector.inner(joined))));
}

void update_prototypes(ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb, const Tensor& upsilon_true) {
    require_classification(m, ep);
    auto& bank = m.prototypes;
    const auto C = m.config.num_concepts;
    if (upsilon_true.rows() != ep.ways || upsilon_true.cols() != C) {
        throw DimensionError("update_prototypes: upsilon must be [N x C]");
    }
    const double decay = m.config.prototype_decay;
    const Tensor support = emb.support.detach();
    for (std::size_t c = 0; c < C; ++c) {
        const Tensor proj = ad::normalize_rows(concept_project(m, support, c).detach());
        const auto dp = proj.cols();
        std::vector<std::vector<double>> means(ep.ways, std::vector<double>(dp, 0.0));
        for (std::size_t i = 0; i < ep.support.size(); ++i) {
            const auto row = proj.data().subspan(i * dp, dp);
            auto& acc = means[ep.support[i].label];
            for (std::size_t k = 0; k < dp; ++k) acc[k] += row[k];
        }
        for (std::size_t n = 0; n < ep.ways; ++n) {
            const auto g = global_label(ep, n);
            if (g >= bank.vocab) throw IndexError("prototype label outside the vocabulary");
            const auto dir = normalized(means[n]);
            const double w = upsilon_true.at(n, c);
            double* sums = bank.sums.data() + (c * bank.vocab + g) * bank.dim;
            for (std::size_t k = 0; k < dp; ++k) sums[k] = decay * sums[k] + (1.0 - decay) * w * dir[k];
            auto& weight = bank.weights[c * bank.vocab + g];
            weight = decay * weight + (1.0 - decay) * w;
        }
    }
}

std::vector<std::size_t> owned_labels(const ModelParams& m, std::size_t concept_index) {
    const auto& bank = m.prototypes;
    if (concept_index >= bank.num_concepts) throw IndexError("concept index out of range");
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < bank.vocab; ++g) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < bank.num_concepts; ++c) {
            if (bank.weight(c, g) > bank.weight(best, g)) best = c;
        }
        if (best == concept_index && bank.weight(best, g) > 0.0) out.push_back(g);
    }
    return out;
}

std::size_t deploy_label(const ModelParams& m, std::span<const double> features, std::size_t concept_index) {
    if (m.config.regression) throw ModeError("deploy_label on a regression model");
    if (concept_index >= m.config.num_concepts) throw IndexError("concept index out of range");
    auto candidates = owned_labels(m, concept_index);
    if (candidates.empty()) {
        for (std::size_t g = 0; g < m.prototypes.vocab; ++g)
            if (m.prototypes.weight(concept_index, g) > 0.0) candidates.push_back(g);
    }
    if (candidates.empty()) throw ContractError("deploy_label: no class representatives have been learned");

    const Tensor p = concept_project(m, embed(m, features), concept_index);
    const auto query = normalized({p.data().begin(), p.data().end()});
    std::size_t best = candidates.front();
    double best_score = -2.0;
    for (auto g : candidates) {
        const auto rep = m.prototypes.sum(concept_index, g);
        double dot = 0.0, sq = 0.0;
        for (std::size_t k = 0; k < rep.size(); ++k) {
            dot += query[k] * rep[k];
            sq += rep[k] * rep[k];
        }
        const double score = sq > 0.0 ? dot / std::sqrt(sq) : -2.0;
        if (score > best_score) best = g, best_score = score;
    }
    return best;
}

double deploy_value(const ModelParams& m, std::span<const double> features, std::size_t concept_index) {
    return regress(m, ad::reshape(embed(m, features), {1, m.config.embed_dim}), concept_index).item();
}

DeployPrediction deploy_predict(const ModelParams& m, std::span<const double> features, std::size_t concept_index) {
    if (m.config.regression) return deploy_value(m, features, concept_index);
    return deploy_label(m, features, concept_index);
}

}  // namespace ctxmeta
