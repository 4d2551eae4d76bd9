#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctxmeta/error.hpp"
#include "ctxmeta/posterior.hpp"
#include "helpers.hpp"

using namespace ctxmeta;
using namespace ctxmeta::testing;

namespace {

std::vector<double> row(const Tensor& t, std::size_t r) {
    const auto d = t.data().subspan(r * t.cols(), t.cols());
    return {d.begin(), d.end()};
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

std::vector<double> project(const ModelParams& m, const std::vector<double>& e, std::size_t c) {
    const auto L = m.concept_maps[c].data();
    const auto out = m.concept_maps[c].cols();
    std::vector<double> p(out, 0.0);
    for (std::size_t j = 0; j < out; ++j)
        for (std::size_t i = 0; i < e.size(); ++i) p[j] += e[i] * L[i * out + j];
    return p;
}

/// Scalar evaluation of the multi-concept posterior written from its definition, reading only
/// phi(x) and kappa from the model.
std::vector<std::vector<double>> oracle_posterior(const ModelParams& m, const Episode& ep) {
    const auto C = m.config.num_concepts;
    const auto N = ep.ways;
    std::vector<std::vector<double>> emb_s, emb_q, kap_s, kap_q;
    for (const auto& s : ep.support) {
        const auto e = embed(m, s.features);
        emb_s.push_back({e.data().begin(), e.data().end()});
        kap_s.push_back(row(concept_weights(m, ad::reshape(e, {1, e.size()})), 0));
    }
    for (const auto& q : ep.query) {
        const auto e = embed(m, q.features);
        emb_q.push_back({e.data().begin(), e.data().end()});
        kap_q.push_back(row(concept_weights(m, ad::reshape(e, {1, e.size()})), 0));
    }
    // References: per instance (K = 1) or per class mean (K > 1) of projections and kappa.
    struct Ref {
        std::size_t cls;
        std::vector<std::vector<double>> proj;  // per concept
        std::vector<double> kappa;
    };
    std::vector<Ref> refs;
    if (ep.shots == 1) {
        for (std::size_t i = 0; i < ep.support.size(); ++i) {
            Ref r{ep.support[i].label, {}, kap_s[i]};
            for (std::size_t c = 0; c < C; ++c) r.proj.push_back(project(m, emb_s[i], c));
            refs.push_back(r);
        }
    } else {
        for (std::size_t n = 0; n < N; ++n) {
            Ref r{n, std::vector<std::vector<double>>(C), std::vector<double>(C, 0.0)};
            for (std::size_t i = 0; i < ep.support.size(); ++i) {
                if (ep.support[i].label != n) continue;
                for (std::size_t c = 0; c < C; ++c) {
                    const auto p = project(m, emb_s[i], c);
                    if (r.proj[c].empty()) r.proj[c].assign(p.size(), 0.0);
                    for (std::size_t j = 0; j < p.size(); ++j) r.proj[c][j] += p[j] / ep.shots;
                    r.kappa[c] += kap_s[i][c] / ep.shots;
                }
            }
            refs.push_back(r);
        }
    }
    std::vector<std::vector<double>> out;
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
        std::vector<double> num(N, 0.0);
        double den = 0.0;
        for (const auto& r : refs)
            for (std::size_t c = 0; c < C; ++c) {
                const double z = m.config.logit_scale * kap_q[q][c] * r.kappa[c] *
                                 cosine(project(m, emb_q[q], c), r.proj[c]);
                num[r.cls] += std::exp(z);
                den += std::exp(z);
            }
        for (auto& v : num) v /= den;
        out.push_back(num);
    }
    return out;
}

void set_identity_map(ModelParams& m) {
    auto L = m.concept_maps[0].mutable_data();
    const auto d = m.config.embed_dim;
    std::fill(L.begin(), L.end(), 0.0);
    for (std::size_t i = 0; i < d; ++i) L[i * d + i] = 1.0;
}

}  // namespace

TEST(ProtoPosterior, HandSetTwoWayOneShot) {
    ModelConfig c;
    c.input_dim = c.embed_dim = c.concept_dim = 2;
    c.phi_hidden = {};
    c.identity_backbone = true;
    c.num_concepts = 1;
    ModelParams m(c, 1);
    Episode ep;
    ep.ways = 2;
    ep.shots = 1;
    ep.support = {{{1.0, 0.0}, 0, 0.0}, {{0.0, 1.0}, 1, 0.0}};
    ep.query = {{{1.0, 0.0}, 0, 0.0}};
    const auto p = proto_posterior(m, ep).probs;
    const double e = std::exp(1.0);
    EXPECT_NEAR(p.at(0, 0), e / (e + 1.0), 1e-15);
    EXPECT_NEAR(p.at(0, 1), 1.0 / (e + 1.0), 1e-15);
}

TEST(ProtoPosterior, UsesClassMeansForSeveralShots) {
    ModelConfig c;
    c.input_dim = c.embed_dim = c.concept_dim = 2;
    c.phi_hidden = {};
    c.identity_backbone = true;
    c.num_concepts = 1;
    ModelParams m(c, 1);
    Episode ep;
    ep.ways = 2;
    ep.shots = 2;
    // Class 0 mean is [1, 1] (cos 1/sqrt2 with the query), class 1 mean is [0, 1] (cos 0).
    ep.support = {{{2.0, 0.0}, 0, 0.0}, {{0.0, 2.0}, 0, 0.0}, {{0.0, 1.0}, 1, 0.0}, {{0.0, 1.0}, 1, 0.0}};
    ep.query = {{{1.0, 0.0}, 1, 0.0}};
    const auto p = proto_posterior(m, ep).probs;
    const double a = std::exp(1.0 / std::sqrt(2.0));
    EXPECT_NEAR(p.at(0, 0), a / (a + 1.0), 1e-14);
}

TEST(MultiConceptPosterior, DegeneratesToProtoPosteriorWithOneIdentityConcept) {
    Rng rng(21);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t ways = 2 + rng() % 4, shots = 1 + rng() % 3, dim = 3 + rng() % 4;
        ModelConfig c;
        c.input_dim = dim;
        c.phi_hidden = {7};
        c.embed_dim = c.concept_dim = 5;
        c.num_concepts = 1;
        ModelParams m(c, rng());
        set_identity_map(m);
        const auto ep = random_episode(ways, shots, 3, dim, rng);
        const auto a = multi_concept_posterior(m, ep).probs;
        const auto b = proto_posterior(m, ep).probs;
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a.data()[k], b.data()[k], 1e-10) << "episode " << i;
    }
}

TEST(MultiConceptPosterior, MatchesScalarOracle) {
    Rng rng(22);
    for (int i = 0; i < 60; ++i) {
        const std::size_t ways = 2 + rng() % 3, shots = 1 + rng() % 3, C = 1 + rng() % 3;
        auto cfg = small_config(4, C, ways);
        cfg.logit_scale = i % 2 ? 1.0 : 7.5;
        ModelParams m(cfg, rng());
        const auto ep = random_episode(ways, shots, 2, 4, rng);
        const auto p = multi_concept_posterior(m, ep).probs;
        const auto want = oracle_posterior(m, ep);
        for (std::size_t q = 0; q < want.size(); ++q)
            for (std::size_t n = 0; n < ways; ++n) ASSERT_NEAR(p.at(q, n), want[q][n], 1e-12);
    }
}

TEST(MultiConceptPosterior, HandSetUniformKappaTwoConcepts) {
    // Identity backbone on R^2, L_1 = I, L_2 swaps the axes and flips one of them, head zeroed so
    // kappa = [0.5, 0.5] and every logit is cos / 4.
    ModelConfig c;
    c.input_dim = c.embed_dim = c.concept_dim = 2;
    c.phi_hidden = {};
    c.identity_backbone = true;
    c.num_concepts = 2;
    ModelParams m(c, 3);
    fill(m.concept_maps[0], {1.0, 0.0, 0.0, 1.0});
    fill(m.concept_maps[1], {0.0, -1.0, 1.0, 0.0});
    for (auto& l : m.concept_head.layers) {
        fill_constant(l.weight, 0.0);
        fill_constant(l.bias, 0.0);
    }
    Episode ep;
    ep.ways = 2;
    ep.shots = 1;
    ep.support = {{{1.0, 0.0}, 0, 0.0}, {{0.6, 0.8}, 1, 0.0}};
    ep.query = {{{0.8, 0.6}, 0, 0.0}};
    // L_2 is a rotation, so cosines agree in both spaces: cos(q, s1) = 0.8, cos(q, s2) = 0.96.
    const double a = std::exp(0.8 / 4.0), b = std::exp(0.96 / 4.0);
    const auto p = multi_concept_posterior(m, ep).probs;
    EXPECT_NEAR(p.at(0, 0), (2 * a) / (2 * a + 2 * b), 1e-15);
    EXPECT_NEAR(p.at(0, 1), (2 * b) / (2 * a + 2 * b), 1e-15);
}

TEST(MultiConceptPosterior, RowsAreProbabilityVectors) {
    Rng rng(23);
    for (int i = 0; i < 200; ++i) {
        const std::size_t ways = 2 + rng() % 4, shots = 1 + rng() % 3, C = 1 + rng() % 4;
        ModelParams m(small_config(3, C, ways), rng());
        const auto ep = random_episode(ways, shots, 4, 3, rng, 2.0);
        const auto post = multi_concept_posterior(m, ep);
        for (std::size_t q = 0; q < post.probs.rows(); ++q) {
            double total = 0.0;
            for (std::size_t n = 0; n < ways; ++n) {
                EXPECT_GT(post.probs.at(q, n), 0.0);
                total += post.probs.at(q, n);
            }
            ASSERT_NEAR(total, 1.0, 1e-9);
        }
        ASSERT_TRUE(post.per_concept.has_value());
        EXPECT_EQ(post.per_concept->cols(), C * ways);
    }
}

TEST(MultiConceptPosterior, InvariantToSupportOrder) {
    Rng rng(24);
    for (int i = 0; i < 50; ++i) {
        ModelParams m(small_config(3, 3, 4), rng());
        auto ep = random_episode(4, 2, 3, 3, rng);
        const auto before = multi_concept_posterior(m, ep).probs;
        std::shuffle(ep.support.begin(), ep.support.end(), rng);
        const auto after = multi_concept_posterior(m, ep).probs;
        for (std::size_t k = 0; k < before.size(); ++k) ASSERT_NEAR(before.data()[k], after.data()[k], 1e-12);
    }
}

TEST(MultiConceptPosterior, SingleQueryOverloadMatchesBatch) {
    Rng rng(25);
    ModelParams m(small_config(3, 2, 3), 4);
    const auto ep = random_episode(3, 1, 2, 3, rng);
    const auto batch = multi_concept_posterior(m, ep).probs;
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
        const auto one = multi_concept_posterior(m, ep, ep.query[q]).probs;
        for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(one.at(0, n), batch.at(q, n), 1e-14);
    }
}

TEST(Posterior, StructuralErrors) {
    Rng rng(26);
    ModelParams m(small_config(3, 2, 3), 4);
    auto ep = random_episode(3, 1, 1, 3, rng);
    auto missing = ep;
    missing.query[0].label = 7;
    EXPECT_THROW(multi_concept_posterior(m, missing), EpisodeStructureError);
    EXPECT_THROW(proto_posterior(m, missing), EpisodeStructureError);
    auto uneven = ep;
    uneven.support.pop_back();
    EXPECT_THROW(multi_concept_posterior(m, uneven), EpisodeStructureError);
    auto reg = ep;
    reg.kind = TaskKind::regression;
    EXPECT_THROW(multi_concept_posterior(m, reg), ModeError);
}

TEST(Nll, ExampleAndArgmax) {
    const auto probs = Tensor::matrix({{0.25, 0.75}, {0.5, 0.5}, {0.9, 0.1}});
    const std::vector<Instance> q{{{}, 1, 0.0}, {{}, 0, 0.0}, {{}, 0, 0.0}};
    EXPECT_NEAR(nll(probs, q).item(), -(std::log(0.75) + std::log(0.5) + std::log(0.9)) / 3.0, 1e-15);
    EXPECT_EQ(argmax_rows(probs), (std::vector<std::size_t>{1, 0, 0}));
    EXPECT_THROW(nll(probs, std::span(q).first(2)), DimensionError);
}
