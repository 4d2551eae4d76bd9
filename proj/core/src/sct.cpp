#include "ctxmeta/sct.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "ctxmeta/error.hpp"
#include "ctxmeta/random.hpp"

namespace ctxmeta {

namespace {

std::vector<double> row_values(const Tensor& t, std::size_t r) {
    const auto c = t.cols();
    const auto d = t.data().subspan(r * c, c);
    return {d.begin(), d.end()};
}

double neg_cos(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw DegenerateInputError("triplet mining: zero-norm embedding");
    return -dot / std::sqrt(na * nb);
}

void require_ways(const Episode& ep) {
    if (ep.kind != TaskKind::classification) throw ModeError("triplet mining needs a classification episode");
    if (ep.ways < 2) throw EpisodeStructureError("triplet mining needs N >= 2 classes");
}

}  // namespace

std::vector<double> shift_image(std::span<const double> pixels, const ImageLayout& layout) {
    if (pixels.size() != layout.channels * layout.height * layout.width) {
        throw DimensionError("shift_image: feature length does not match the image layout");
    }
    std::vector<double> out(pixels.size(), 0.0);
    for (std::size_t ch = 0; ch < layout.channels; ++ch)
        for (std::size_t y = 0; y < layout.height; ++y)
            for (std::size_t x = 1; x < layout.width; ++x) {
                const auto base = (ch * layout.height + y) * layout.width;
                out[base + x] = pixels[base + x - 1];
            }
    return out;
}

std::vector<Instance> augment_support(const Episode& ep) {
    if (ep.shots != 1) return {};
    std::vector<Instance> out;
    out.reserve(ep.support.size());
    if (ep.image) {
        for (const auto& inst : ep.support) {
            Instance copy = inst;
            copy.features = shift_image(inst.features, *ep.image);
            out.push_back(std::move(copy));
        }
        return out;
    }
    const auto dim = ep.support.front().features.size();
    std::vector<double> stddev(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
        double mu = 0.0;
        for (const auto& inst : ep.support) mu += inst.features[j];
        mu /= static_cast<double>(ep.support.size());
        double var = 0.0;
        for (const auto& inst : ep.support) var += (inst.features[j] - mu) * (inst.features[j] - mu);
        stddev[j] = std::sqrt(var / static_cast<double>(ep.support.size()));
        if (stddev[j] == 0.0) stddev[j] = 1.0;
    }
    for (const auto& inst : ep.support) {
        // Seeded by content so the augmentation does not depend on support order.
        Rng rng(derive_seed(ep.seed, content_hash(inst.features)));
        std::normal_distribution<double> noise(0.0, 1.0);
        Instance copy = inst;
        for (std::size_t j = 0; j < dim; ++j) copy.features[j] += 0.01 * stddev[j] * noise(rng);
        out.push_back(std::move(copy));
    }
    return out;
}

std::vector<Triplet> mine_triplets(const Episode& ep, const Tensor& extended) {
    require_ways(ep);
    const auto S = ep.support.size();
    const bool augmented = ep.shots == 1;
    if (extended.rows() != (augmented ? 2 * S : S)) {
        throw DimensionError("mine_triplets: embedding rows do not match the extended support");
    }

    std::vector<std::vector<double>> emb(extended.rows());
    for (std::size_t r = 0; r < extended.rows(); ++r) emb[r] = row_values(extended, r);
    std::vector<std::uint64_t> key(S);
    for (std::size_t i = 0; i < S; ++i) key[i] = content_hash(ep.support[i].features);

    // (anchor, target) candidates; an augmented target is S + anchor.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < S; ++a) {
        if (augmented) {
            pairs.emplace_back(a, S + a);
            continue;
        }
        for (std::size_t j = 0; j < S; ++j) {
            if (j != a && ep.support[j].label == ep.support[a].label) pairs.emplace_back(a, j);
        }
    }
    auto pair_key = [&](const std::pair<std::size_t, std::size_t>& p) {
        const std::uint64_t tk = p.second >= S ? mix64(key[p.second - S]) : key[p.second];
        return std::make_tuple(key[p.first], tk, p.first, p.second);
    };
    std::sort(pairs.begin(), pairs.end(), [&](const auto& x, const auto& y) { return pair_key(x) < pair_key(y); });
    if (pairs.size() > kTripletCap) {
        std::vector<std::pair<std::size_t, std::size_t>> kept;
        Rng rng(derive_seed(ep.seed, 0x7219));
        std::sample(pairs.begin(), pairs.end(), std::back_inserter(kept), kTripletCap, rng);
        pairs = std::move(kept);
    }

    std::vector<Triplet> out;
    out.reserve(pairs.size());
    for (const auto& [a, j] : pairs) {
        const double d_target = neg_cos(emb[a], emb[j]);
        std::size_t semi = S, fallback = S;
        double semi_d = 0.0, fallback_d = 0.0;
        auto better = [&](double d, std::size_t l, double best_d, std::size_t best, bool smaller) {
            if (best == S) return true;
            if (d != best_d) return smaller ? d < best_d : d > best_d;
            return key[l] < key[best];
        };
        for (std::size_t l = 0; l < S; ++l) {
            if (ep.support[l].label == ep.support[a].label) continue;
            const double d = neg_cos(emb[a], emb[l]);
            if (d > d_target) {
                if (better(d, l, semi_d, semi, true)) semi = l, semi_d = d;
            } else if (better(d, l, fallback_d, fallback, false)) {
                fallback = l, fallback_d = d;
            }
        }
        out.push_back({a, j, semi != S ? semi : fallback});
    }
    return out;
}

TripletSet mine_triplets(const Episode& ep, const ModelParams& m) {
    validate_episode(ep);
    require_ways(ep);
    TripletSet out;
    out.augmented = augment_support(ep);
    const auto emb = embed_episode(m, ep, std::span<const Instance>{}, out.augmented);
    out.triplets = mine_triplets(ep, emb.extended);
    return out;
}

Tensor task_concept_prob(const ModelParams& m, const EpisodeEmbedding& emb, std::span<const Triplet> triplets) {
    if (triplets.empty()) throw EpisodeStructureError("task_concept_prob: no triplets");
    std::vector<std::size_t> ia, ij, il;
    for (const auto& t : triplets) {
        ia.push_back(t.anchor);
        ij.push_back(t.target);
        il.push_back(t.impostor);
    }
    const Tensor joined = ad::concat({ad::gather_rows(emb.extended, ia), ad::gather_rows(emb.extended, ij),
                                      ad::gather_rows(emb.extended, il)});
    const Tensor pooled = ad::sum_rows(ad::relu(m.sct_selector.inner(joined)));
    return ad::softmax(m.sct_selector.outer(pooled));
}

Tensor task_concept_prob(const ModelParams& m, const Episode& ep) {
    validate_episode(ep);
    require_ways(ep);
    const auto augmented = augment_support(ep);
    const auto emb = embed_episode(m, ep, std::span<const Instance>{}, augmented);
    const auto triplets = mine_triplets(ep, emb.extended);
    return task_concept_prob(m, emb, triplets);
}

Tensor regression_task_concept_prob(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb) {
    if (!m.config.regression) throw ModeError("regression selector on a classification model");
    if (ep.support.empty()) throw EpisodeStructureError("regression selector needs a non-empty support set");
    const Tensor joined = ad::concat({emb.support, target_column(ep.support)});
    const Tensor pooled = ad::sum_rows(ad::relu(m.sct_selector.inner(joined)));
    return ad::softmax(m.sct_selector.outer(pooled));
}

ConceptPosterior sct_posterior(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb,
                               const Tensor& upsilon) {
    const auto C = m.config.num_concepts;
    const auto N = ep.ways;
    if (upsilon.size() != C) throw DimensionError("sct_posterior: upsilon must have C entries");
    auto base = multi_concept_posterior(m, ep, emb);

    // Spread upsilon [1 x C] over the concept-major [Q x C*N] addend table.
    std::vector<double> spread(C * C * N, 0.0), collapse(C * N * N, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t n = 0; n < N; ++n) {
            spread[c * C * N + c * N + n] = 1.0;
            collapse[(c * N + n) * N + n] = 1.0;
        }
    const Tensor ups_row = ad::reshape(upsilon, {1, C});
    const Tensor weights = ad::matmul(ups_row, Tensor::from({C, C * N}, std::move(spread)));
    const Tensor weighted = ad::mul(*base.per_concept, weights);
    const Tensor scores = ad::matmul(weighted, Tensor::from({C * N, N}, std::move(collapse)));

    ConceptPosterior out;
    out.probs = ad::div(scores, ad::sum_cols(scores));
    out.per_concept = base.per_concept;
    return out;
}

ConceptPosterior sct_posterior(const ModelParams& m, const Episode& ep) {
    validate_episode(ep);
    require_ways(ep);
    const auto augmented = augment_support(ep);
    const auto emb = embed_episode(m, ep, augmented);
    const auto triplets = mine_triplets(ep, emb.extended);
    return sct_posterior(m, ep, emb, task_concept_prob(m, emb, triplets));
}

ConceptPosterior sct_posterior(const ModelParams& m, const Episode& ep, const Instance& x) {
    validate_episode(ep);
    require_ways(ep);
    const auto augmented = augment_support(ep);
    const auto emb = embed_episode(m, ep, std::span(&x, 1), augmented);
    const auto triplets = mine_triplets(ep, emb.extended);
    return sct_posterior(m, ep, emb, task_concept_prob(m, emb, triplets));
}

Tensor mix_heads(const ModelParams& m, const Tensor& query_emb, const Tensor& weights) {
    const Tensor heads = regress_all(m, query_emb);
    if (weights.cols() != heads.cols()) throw DimensionError("mix_heads: one weight per concept required");
    return ad::sum_cols(ad::mul(heads, weights));
}

}  // namespace ctxmeta
