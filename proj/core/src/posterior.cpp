#include "ctxmeta/posterior.hpp"

#include <algorithm>
#include <numeric>

#include "ctxmeta/error.hpp"

namespace ctxmeta {

namespace {

std::vector<std::size_t> iota(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> out(end - begin);
    std::iota(out.begin(), out.end(), begin);
    return out;
}

void require_classification(const Episode& ep) {
    if (ep.kind != TaskKind::classification) throw ModeError("classification posterior on a regression episode");
}

/// Constant [R x N] class-membership matrix.
Tensor membership(const std::vector<std::size_t>& ref_class, std::size_t ways) {
    std::vector<double> data(ref_class.size() * ways, 0.0);
    for (std::size_t r = 0; r < ref_class.size(); ++r) data[r * ways + ref_class[r]] = 1.0;
    return Tensor::from({ref_class.size(), ways}, std::move(data));
}

/// Constant [C*N x N] matrix summing the concept blocks of a concept-major table.
Tensor concept_collapser(std::size_t concepts, std::size_t ways) {
    std::vector<double> data(concepts * ways * ways, 0.0);
    for (std::size_t c = 0; c < concepts; ++c)
        for (std::size_t n = 0; n < ways; ++n) data[(c * ways + n) * ways + n] = 1.0;
    return Tensor::from({concepts * ways, ways}, std::move(data));
}

Tensor column(const Tensor& t, std::size_t c) {
    const std::vector<std::size_t> cols(t.rows(), c);
    return ad::pick(t, cols);
}

}  // namespace

EpisodeEmbedding embed_episode(const ModelParams& m, const Episode& ep, std::span<const Instance> queries,
                               std::span<const Instance> augmented) {
    std::vector<Instance> all;
    all.reserve(ep.support.size() + augmented.size() + queries.size());
    all.insert(all.end(), ep.support.begin(), ep.support.end());
    all.insert(all.end(), augmented.begin(), augmented.end());
    all.insert(all.end(), queries.begin(), queries.end());
    const Tensor e = embed(m, feature_matrix(all));

    const auto S = ep.support.size();
    const auto A = augmented.size();
    const auto Q = queries.size();
    EpisodeEmbedding out;
    const auto s_idx = iota(0, S);
    out.support = ad::gather_rows(e, s_idx);
    out.extended = A > 0 ? ad::gather_rows(e, iota(0, S + A)) : out.support;
    if (A > 0) {
        const auto a_idx = iota(S, S + A);
        out.augmented = ad::gather_rows(e, a_idx);
        out.augmented_instances.assign(augmented.begin(), augmented.end());
    }
    if (Q > 0) {
        const auto q_idx = iota(S + A, S + A + Q);
        out.query = ad::gather_rows(e, q_idx);
    }
    return out;
}

EpisodeEmbedding embed_episode(const ModelParams& m, const Episode& ep, std::span<const Instance> augmented) {
    return embed_episode(m, ep, ep.query, augmented);
}

namespace detail {

References make_references(const Episode& ep) {
    References refs;
    refs.use_means = ep.shots > 1;
    if (refs.use_means) {
        refs.ref_class = iota(0, ep.ways);
    } else {
        for (const auto& inst : ep.support) refs.ref_class.push_back(inst.label);
    }
    return refs;
}

References instance_references(const Episode& ep) {
    References refs;
    for (const auto& inst : ep.support) refs.ref_class.push_back(inst.label);
    return refs;
}

Tensor class_means(const Tensor& rows, const Episode& ep) {
    std::vector<std::size_t> seg;
    seg.reserve(ep.support.size());
    for (const auto& inst : ep.support) seg.push_back(inst.label);
    return ad::scale(ad::segment_sum(rows, seg, ep.ways), 1.0 / static_cast<double>(ep.shots));
}

std::vector<Tensor> concept_logit_blocks(const ModelParams& m, const Episode& ep, const Tensor& query_emb,
                                         const Tensor& support_emb, const References& refs) {
    const Tensor kappa_q = concept_weights(m, query_emb);
    Tensor kappa_r = concept_weights(m, support_emb);
    if (refs.use_means) kappa_r = class_means(kappa_r, ep);

    std::vector<Tensor> blocks;
    for (std::size_t c = 0; c < m.config.num_concepts; ++c) {
        const Tensor pq = ad::normalize_rows(concept_project(m, query_emb, c));
        Tensor pr = concept_project(m, support_emb, c);
        if (refs.use_means) pr = class_means(pr, ep);
        pr = ad::normalize_rows(pr);
        const Tensor cosine = ad::matmul(pq, ad::transpose(pr));
        const Tensor weight = ad::mul(column(kappa_q, c), ad::transpose(column(kappa_r, c)));
        const Tensor block = ad::mul(weight, cosine);
        blocks.push_back(m.config.logit_scale == 1.0 ? block : ad::scale(block, m.config.logit_scale));
    }
    return blocks;
}

Tensor concept_logits(const ModelParams& m, const Episode& ep, const Tensor& query_emb, const Tensor& support_emb,
                      const References& refs) {
    auto blocks = concept_logit_blocks(m, ep, query_emb, support_emb, refs);
    return blocks.size() == 1 ? blocks.front() : ad::concat(blocks);
}

Tensor class_aggregator(std::size_t concepts, const References& refs, std::size_t ways) {
    const auto R = refs.count();
    std::vector<double> data(concepts * R * concepts * ways, 0.0);
    const auto width = concepts * ways;
    for (std::size_t c = 0; c < concepts; ++c)
        for (std::size_t r = 0; r < R; ++r) data[(c * R + r) * width + c * ways + refs.ref_class[r]] = 1.0;
    return Tensor::from({concepts * R, width}, std::move(data));
}

}  // namespace detail

// ---------------------------------------------------------------------------

ConceptPosterior proto_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb) {
    require_classification(ep);
    const auto refs = detail::make_references(ep);
    const Tensor reps = refs.use_means ? detail::class_means(emb.support, ep) : emb.support;
    Tensor cosine = ad::matmul(ad::normalize_rows(emb.query), ad::transpose(ad::normalize_rows(reps)));
    if (m.config.logit_scale != 1.0) cosine = ad::scale(cosine, m.config.logit_scale);
    // -Dist = cosine
    const Tensor weights = ad::softmax(cosine);
    ConceptPosterior out;
    out.probs = refs.use_means ? weights : ad::matmul(weights, membership(refs.ref_class, ep.ways));
    return out;
}

ConceptPosterior proto_posterior(const ModelParams& m, const Episode& ep) {
    validate_episode(ep);
    return proto_posterior(m, ep, embed_episode(m, ep));
}

ConceptPosterior proto_posterior(const ModelParams& m, const Episode& ep, const Instance& x) {
    validate_episode(ep);
    return proto_posterior(m, ep, embed_episode(m, ep, std::span(&x, 1), {}));
}

ConceptPosterior multi_concept_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb) {
    require_classification(ep);
    const auto C = m.config.num_concepts;
    const auto refs = detail::make_references(ep);
    const Tensor logits = detail::concept_logits(m, ep, emb.query, emb.support, refs);
    const Tensor addends = ad::softmax(logits);
    ConceptPosterior out;
    out.per_concept = ad::matmul(addends, detail::class_aggregator(C, refs, ep.ways));
    out.probs = C == 1 ? *out.per_concept : ad::matmul(*out.per_concept, concept_collapser(C, ep.ways));
    return out;
}

ConceptPosterior multi_concept_posterior(const ModelParams& m, const Episode& ep) {
    validate_episode(ep);
    return multi_concept_posterior(m, ep, embed_episode(m, ep));
}

ConceptPosterior multi_concept_posterior(const ModelParams& m, const Episode& ep, const Instance& x) {
    validate_episode(ep);
    return multi_concept_posterior(m, ep, embed_episode(m, ep, std::span(&x, 1), {}));
}

Tensor nll(const Tensor& probs, std::span<const Instance> queries) {
    if (probs.rows() != queries.size()) throw DimensionError("nll: one probability row per query required");
    std::vector<std::size_t> labels;
    labels.reserve(queries.size());
    for (const auto& q : queries) labels.push_back(q.label);
    return ad::neg(ad::mean(ad::log(ad::pick(probs, labels))));
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
    std::vector<std::size_t> out;
    const auto cols = probs.cols();
    const auto data = probs.data();
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = data.subspan(r * cols, cols);
        out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return out;
}

}  // namespace ctxmeta
