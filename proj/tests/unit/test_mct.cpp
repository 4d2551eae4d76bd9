#include <algorithm>
#include <cmath>

#include "ctxmeta/error.hpp"
#include "ctxmeta/mct.hpp"
#include "ctxmeta/trainer.hpp"
#include "helpers.hpp"

using namespace ctxmeta;
using namespace ctxmeta::testing;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

std::vector<double> projected(const ModelParams& m, const Instance& x, std::size_t c) {
    const auto e = embed(m, x.features);
    return values(concept_project(m, ad::reshape(e, {1, e.size()}), c));
}

std::vector<double> kappa(const ModelParams& m, const Instance& x) {
    const auto e = embed(m, x.features);
    return values(concept_weights(m, ad::reshape(e, {1, e.size()})));
}

/// The masked score for one (query, label) hypothesis evaluated term by term from the printed
/// formula, using the separately tested selector and mask.
double oracle_score(const ModelParams& m, const Episode& ep, const Instance& x, std::size_t y) {
    const auto C = m.config.num_concepts;
    const auto ups = values(instance_concept_prob(m, ep, x, y));
    const auto kx = kappa(m, x);
    double num = 0.0, den = 0.0;
    for (const auto& s : ep.support) {
        const auto ks = kappa(m, s);
        const double tau = comparison_mask(m, ep, x, y, s, s.label).item();
        for (std::size_t c = 0; c < C; ++c) {
            const double z = m.config.logit_scale * kx[c] * ks[c] * cosine(projected(m, x, c), projected(m, s, c));
            if (s.label == y) num += ups[c] * std::exp(z);
            den += std::exp(tau * z);
        }
    }
    return num / den;
}

ModelConfig scalar_identity(std::size_t concepts, std::size_t vocab) {
    ModelConfig c;
    c.input_dim = c.embed_dim = c.concept_dim = 1;
    c.phi_hidden = {};
    c.identity_backbone = true;
    c.num_concepts = concepts;
    c.label_dim = vocab;
    return c;
}

}  // namespace

TEST(LabelEncoding, OneHotThroughClassIds) {
    Episode ep;
    ep.ways = 2;
    ep.label_vocab = 5;
    ep.class_ids = {3, 1};
    EXPECT_EQ(values(label_encoding(ep, 0)), (std::vector<double>{0, 0, 0, 1, 0}));
    EXPECT_EQ(values(label_encoding(ep, 1)), (std::vector<double>{0, 1, 0, 0, 0}));
    ep.class_ids = {7, 1};
    EXPECT_THROW(label_encoding(ep, 0), IndexError);
}

TEST(InstanceConceptProb, HandSetSinglePair) {
    ModelParams m(scalar_identity(2, 2), 1);
    // inner input is [phi(x_i), phi(x), onehot(y)]
    fill(m.mct_selector.inner.weight, {1.0, -0.5, 0.2, 0.4});
    fill(m.mct_selector.inner.bias, {0.0});
    fill(m.mct_selector.outer.weight, {1.0, 3.0});
    fill(m.mct_selector.outer.bias, {0.0, -1.0});
    Episode ep;
    ep.ways = 2;
    ep.shots = 1;
    ep.label_vocab = 2;
    ep.support = {{{2.0}, 0, 0.0}, {{-4.0}, 1, 0.0}};
    const Instance x{{1.0}, 0, 0.0};
    // label 1: relu(-4 - 0.5 + 0.4) = 0 -> logits [0, -1]
    // label 0: relu(2 - 0.5 + 0.2) = 1.7 -> logits [1.7, 4.1]
    const auto u0 = instance_concept_prob(m, ep, x, 0);
    const auto u1 = instance_concept_prob(m, ep, x, 1);
    EXPECT_NEAR(u0.data()[0], 1.0 / (1.0 + std::exp(2.4)), 1e-15);
    EXPECT_NEAR(u1.data()[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
    EXPECT_THROW(instance_concept_prob(m, ep, x, 2), EpisodeStructureError);
}

TEST(InstanceConceptProb, SupportOrderAndSingleConcept) {
    Rng rng(51);
    for (int i = 0; i < 30; ++i) {
        ModelParams m(small_config(3, 3, 4), rng());
        auto ep = random_episode(4, 3, 1, 3, rng);
        const auto x = ep.query[0];
        const auto a = instance_concept_prob(m, ep, x, 2);
        std::shuffle(ep.support.begin(), ep.support.end(), rng);
        const auto b = instance_concept_prob(m, ep, x, 2);
        for (std::size_t c = 0; c < 3; ++c) ASSERT_NEAR(a.data()[c], b.data()[c], 1e-12);
    }
    ModelParams one(small_config(3, 1, 2), 3);
    const auto ep = random_episode(2, 1, 1, 3, rng);
    EXPECT_EQ(instance_concept_prob(one, ep, ep.query[0], 1).item(), 1.0);
}

TEST(ComparisonMask, ZeroNetHandSetAndRange) {
    Rng rng(52);
    ModelParams m(scalar_identity(2, 2), 1);
    Episode ep;
    ep.ways = 2;
    ep.shots = 1;
    ep.label_vocab = 2;
    ep.support = {{{1.0}, 0, 0.0}, {{2.0}, 1, 0.0}};
    fill_constant(m.mask_net.weight, 0.0);
    fill_constant(m.mask_net.bias, 0.0);
    EXPECT_EQ(comparison_mask(m, ep, ep.support[0], 0, ep.support[1], 1).item(), 0.5);
    // input [phi(x), phi(x_j), onehot(y), onehot(y_j)] = [0.5, 2, 1, 0, 0, 1]
    fill(m.mask_net.weight, {1.0, -0.25, 0.3, 0.0, 0.0, -0.7});
    fill(m.mask_net.bias, {0.1});
    const double z = 0.5 - 0.5 + 0.3 - 0.7 + 0.1;
    EXPECT_NEAR(comparison_mask(m, ep, {{0.5}, 0, 0.0}, 0, ep.support[1], 1).item(), 1.0 / (1.0 + std::exp(-z)), 1e-15);

    ModelParams r(small_config(3, 2, 3), 4);
    const auto big = random_episode(3, 1, 1, 3, rng);
    std::normal_distribution<double> wide(0.0, 10.0);
    for (int i = 0; i < 10000; ++i) {
        Instance a{{wide(rng), wide(rng), wide(rng)}, 0, 0.0}, b{{wide(rng), wide(rng), wide(rng)}, 0, 0.0};
        const double tau = comparison_mask(r, big, a, i % 3, b, (i / 3) % 3).item();
        ASSERT_GT(tau, 0.0);
        ASSERT_LT(tau, 1.0);
    }
}

TEST(MctPosterior, MaskOffSingleConceptEqualsMultiConcept) {
    Rng rng(53);
    for (int i = 0; i < 30; ++i) {
        ModelParams m(small_config(3, 1, 4), rng());
        fill_constant(m.mask_net.weight, 0.0);
        fill_constant(m.mask_net.bias, 60.0);
        const auto ep = random_episode(2 + i % 3, 1, 3, 3, rng);
        const auto a = mct_posterior(m, ep).probs;
        const auto b = multi_concept_posterior(m, ep).probs;
        for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a.data()[k], b.data()[k], 1e-10);
    }
}

TEST(MctPosterior, MaskedImpostorNoLongerInfluencesOtherLabels) {
    Rng rng(54);
    ModelParams m(small_config(3, 2, 3), 6);
    // tau depends only on y_j: the comparison with any class-2 support instance is switched off.
    auto w = m.mask_net.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    const auto d = m.config.embed_dim;
    w[2 * d + 3 + 2] = -80.0;
    fill_constant(m.mask_net.bias, 0.0);
    auto ep = random_episode(3, 1, 2, 3, rng);
    const std::vector<LabelHypothesis> hyps{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    const auto before = values(mct_terms(m, ep, embed_episode(m, ep), hyps).score);
    for (auto& v : ep.support[2].features) v += 1.7;
    const auto after = values(mct_terms(m, ep, embed_episode(m, ep), hyps).score);
    for (std::size_t p = 0; p < hyps.size(); ++p) EXPECT_NEAR(before[p], after[p], 1e-6);
}

TEST(MctPosterior, MatchesScalarOracle) {
    Rng rng(55);
    for (int i = 0; i < 25; ++i) {
        const std::size_t ways = 2 + i % 3, shots = 1 + i % 2;
        auto cfg = small_config(3, 1 + i % 3, 6);
        cfg.logit_scale = i % 2 ? 1.0 : 4.0;
        ModelParams m(cfg, rng());
        auto ep = random_episode(ways, shots, 1, 3, rng);
        ep.label_vocab = 6;
        for (std::size_t n = 0; n < ways; ++n) ep.class_ids.push_back(5 - n);
        const auto emb = embed_episode(m, ep);
        std::vector<LabelHypothesis> hyps;
        for (std::size_t q = 0; q < ep.query.size(); ++q)
            for (std::size_t n = 0; n < ways; ++n) hyps.push_back({q, n});
        const auto score = values(mct_terms(m, ep, emb, hyps).score);
        for (std::size_t p = 0; p < hyps.size(); ++p)
            ASSERT_NEAR(score[p], oracle_score(m, ep, ep.query[hyps[p].query], hyps[p].label), 1e-12);
    }
}

TEST(MctPosterior, NormalizedAndSupportOrderInvariant) {
    Rng rng(56);
    for (int i = 0; i < 50; ++i) {
        ModelParams m(small_config(3, 1 + i % 3, 5), rng());
        auto ep = random_episode(2 + i % 4, 1 + i % 3, 2, 3, rng, 1.5);
        ep.label_vocab = 5;
        const auto a = mct_posterior(m, ep).probs;
        for (std::size_t q = 0; q < a.rows(); ++q) {
            double total = 0.0;
            for (std::size_t n = 0; n < a.cols(); ++n) total += a.at(q, n);
            ASSERT_NEAR(total, 1.0, 1e-9);
        }
        std::shuffle(ep.support.begin(), ep.support.end(), rng);
        const auto b = mct_posterior(m, ep).probs;
        for (std::size_t k = 0; k < a.size(); ++k) ASSERT_NEAR(a.data()[k], b.data()[k], 1e-12);
    }
}

TEST(MctPosterior, GradientsReachSelectorAndMask) {
    Rng rng(57);
    ModelParams m(small_config(3, 2, 4), 8);
    const auto ep = random_episode(4, 2, 3, 3, rng);
    const auto loss = episode_loss(m, Method::mct, ep, {}).loss;
    ad::backward(loss);
    auto nonzero = [](const Tensor& t) {
        const auto g = t.grad();
        return std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
    };
    EXPECT_TRUE(nonzero(m.mask_net.weight));
    EXPECT_TRUE(nonzero(m.mct_selector.inner.weight));
    EXPECT_TRUE(nonzero(m.mct_selector.outer.weight));
    EXPECT_TRUE(nonzero(m.concept_maps[1]));
}

TEST(Deploy, NearestStoredRepresentativeAndOwnership) {
    Rng rng(58);
    auto cfg = small_config(3, 2, 8);
    ModelParams m(cfg, 9);
    EXPECT_THROW(deploy_label(m, std::vector<double>{1, 2, 3}, 0), ContractError);

    auto ep = random_episode(4, 1, 1, 3, rng, 0.1);
    ep.label_vocab = 8;
    ep.class_ids = {6, 2, 4, 0};
    const auto emb = embed_episode(m, ep);
    // Concept 0 owns labels 6 and 2, concept 1 owns 4 and 0.
    update_prototypes(m, ep, emb, Tensor::matrix({{0.9, 0.1}, {0.8, 0.2}, {0.3, 0.7}, {0.0, 1.0}}));
    EXPECT_EQ(owned_labels(m, 0), (std::vector<std::size_t>{2, 6}));
    EXPECT_EQ(owned_labels(m, 1), (std::vector<std::size_t>{0, 4}));
    EXPECT_EQ(deploy_label(m, ep.support[0].features, 0), 6u);
    EXPECT_EQ(deploy_label(m, ep.support[1].features, 0), 2u);
    EXPECT_EQ(deploy_label(m, ep.support[2].features, 1), 4u);
    EXPECT_EQ(deploy_label(m, ep.support[3].features, 1), 0u);
    EXPECT_EQ(std::get<std::size_t>(deploy_predict(m, ep.support[0].features, 0)), 6u);
    EXPECT_THROW(deploy_label(m, ep.support[0].features, 2), IndexError);
    EXPECT_THROW(update_prototypes(m, ep, emb, Tensor::matrix({{1.0, 0.0}})), DimensionError);
}

TEST(Deploy, RegressionUsesTheConceptHead) {
    auto cfg = scalar_identity(2, 1);
    cfg.regression = true;
    ModelParams m(cfg, 2);
    fill(m.concept_maps[1], {1.0});
    fill(m.regress_heads[1].weight, {3.0});
    fill(m.regress_heads[1].bias, {-1.0});
    EXPECT_DOUBLE_EQ(std::get<double>(deploy_predict(m, std::vector<double>{2.0}, 1)), 5.0);
    EXPECT_THROW(deploy_label(m, std::vector<double>{2.0}, 0), ModeError);
}

TEST(RegressionSelector, RowsOnSimplex) {
    Rng rng(59);
    auto cfg = small_config(1, 3, 1);
    cfg.regression = true;
    ModelParams m(cfg, 3);
    const auto x = random_tensor({20, 1}, rng, 3.0, false);
    const auto y = random_tensor({20, 1}, rng, 3.0, false);
    const auto u = regression_instance_concept_prob(m, embed(m, x), y);
    ASSERT_EQ(u.rows(), 20u);
    for (std::size_t r = 0; r < 20; ++r) EXPECT_NEAR(u.at(r, 0) + u.at(r, 1) + u.at(r, 2), 1.0, 1e-12);
}
