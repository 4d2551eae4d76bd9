#include <cmath>

#include "ctxmeta/error.hpp"
#include "ctxmeta/model.hpp"
#include "helpers.hpp"

using namespace ctxmeta;
using namespace ctxmeta::testing;

namespace {

ModelConfig identity_config(std::size_t dim, std::size_t concepts) {
    ModelConfig c;
    c.input_dim = dim;
    c.embed_dim = dim;
    c.concept_dim = dim;
    c.phi_hidden = {};
    c.identity_backbone = true;
    c.num_concepts = concepts;
    c.concept_map_noise = 0.0;
    return c;
}

}  // namespace

TEST(Embed, IdentityBackboneIsPassThrough) {
    ModelParams m(identity_config(3, 1), 1);
    const std::vector<double> x{0.5, -2.0, 7.0};
    const auto e = embed(m, x);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(e.data()[i], x[i]);
}

TEST(Embed, DeterministicForFixedSeed) {
    ModelConfig c;
    c.input_dim = 4;
    ModelParams a(c, 99), b(c, 99);
    const std::vector<double> x{0.1, 0.2, -0.3, 0.4};
    const auto ea = embed(a, x), eb = embed(b, x), ea2 = embed(a, x);
    for (std::size_t i = 0; i < ea.size(); ++i) {
        EXPECT_EQ(ea.data()[i], eb.data()[i]);
        EXPECT_EQ(ea.data()[i], ea2.data()[i]);
    }
}

TEST(Embed, HandSetHiddenLayer) {
    ModelConfig c;
    c.input_dim = 2;
    c.phi_hidden = {2};
    c.embed_dim = 1;
    c.concept_dim = 1;
    c.num_concepts = 1;
    ModelParams m(c, 1);
    // h = relu([x1 - x2, x1 + x2] + [0, -1]); out = 2 h1 - h2 + 0.5
    fill(m.phi.layers[0].weight, {1.0, 1.0, -1.0, 1.0});
    fill(m.phi.layers[0].bias, {0.0, -1.0});
    fill(m.phi.layers[1].weight, {2.0, -1.0});
    fill(m.phi.layers[1].bias, {0.5});
    // x = [3, 1]: h = relu([2, 3]) = [2, 3]; out = 4 - 3 + 0.5
    EXPECT_DOUBLE_EQ(embed(m, std::vector<double>{3.0, 1.0}).item(), 1.5);
    // x = [-1, 0.5]: h = relu([-1.5, -1.5]) = 0; out = 0.5
    EXPECT_DOUBLE_EQ(embed(m, std::vector<double>{-1.0, 0.5}).item(), 0.5);
}

TEST(Embed, WrongInputWidthIsDimensionError) {
    ModelConfig c;
    c.input_dim = 3;
    ModelParams m(c, 1);
    EXPECT_THROW(embed(m, std::vector<double>{1.0, 2.0}), DimensionError);
}

TEST(ConceptProject, IdentityZeroAndOracle) {
    ModelParams m(identity_config(3, 2), 1);
    const auto e = Tensor::matrix({{1.0, -2.0, 0.5}});
    const auto p = concept_project(m, e, 1);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p.data()[i], e.data()[i]);

    fill_constant(m.concept_maps[0], 0.0);
    const auto z = concept_project(m, e, 0);
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(ad::neg_cosine_dist(ad::reshape(z, {3}), ad::reshape(p, {3})), DegenerateInputError);

    Rng rng(2);
    ModelConfig c;
    c.input_dim = 2;
    c.embed_dim = 4;
    c.concept_dim = 3;
    ModelParams r(c, 5);
    const auto x = random_tensor({1, 4}, rng, 1.0, false);
    const auto out = concept_project(r, x, 2);
    const auto L = r.concept_maps[2].data();
    for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 4; ++i) acc += x.data()[i] * L[i * 3 + j];
        EXPECT_NEAR(out.data()[j], acc, 1e-14);
    }
    EXPECT_THROW(concept_project(r, x, 3), IndexError);
}

TEST(ConceptWeights, SingleConceptZeroHeadAndHandSet) {
    ModelParams one(identity_config(2, 1), 3);
    const auto k1 = concept_weights(one, Tensor::matrix({{0.3, -0.8}}));
    EXPECT_EQ(k1.data()[0], 1.0);

    ModelParams four(identity_config(2, 4), 3);
    for (auto& l : four.concept_head.layers) {
        fill_constant(l.weight, 0.0);
        fill_constant(l.bias, 0.0);
    }
    const auto uniform = concept_weights(four, Tensor::matrix({{5.0, 1.0}}));
    for (double v : uniform.data()) EXPECT_DOUBLE_EQ(v, 0.25);

    ModelParams two(identity_config(2, 2), 3);
    // d/2 = 1 hidden unit: h = relu(e1)
    fill(two.concept_head.layers[0].weight, {1.0, 0.0});
    fill(two.concept_head.layers[0].bias, {0.0});
    fill(two.concept_head.layers[1].weight, {2.0, -1.0});
    fill(two.concept_head.layers[1].bias, {0.0, 0.5});
    // e = [1.5, 9]: h = 1.5, logits = [3, -1]
    const auto k = concept_weights(two, Tensor::matrix({{1.5, 9.0}}));
    const double z = std::exp(3.0) + std::exp(-1.0);
    EXPECT_NEAR(k.data()[0], std::exp(3.0) / z, 1e-15);
    EXPECT_NEAR(k.data()[1], std::exp(-1.0) / z, 1e-15);
}

TEST(ConceptWeights, AlwaysOnSimplex) {
    ModelConfig c;
    c.input_dim = 3;
    c.embed_dim = 6;
    c.concept_dim = 6;
    c.num_concepts = 4;
    ModelParams m(c, 8);
    Rng rng(9);
    const auto e = random_tensor({10000, 6}, rng, 5.0, false);
    const auto k = concept_weights(m, e);
    for (std::size_t r = 0; r < 10000; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            const double v = k.at(r, j);
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
            total += v;
        }
        ASSERT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Regress, ExamplesAndModeError) {
    auto cfg = identity_config(1, 2);
    cfg.regression = true;
    ModelParams m(cfg, 4);
    const auto x = Tensor::matrix({{2.5}});
    fill(m.regress_heads[0].bias, {0.75});
    EXPECT_EQ(regress(m, x, 0).item(), 0.75);
    fill(m.regress_heads[1].weight, {1.0});
    EXPECT_EQ(regress(m, x, 1).item(), 2.5);
    fill(m.regress_heads[1].weight, {-2.0});
    fill(m.regress_heads[1].bias, {0.25});
    fill(m.concept_maps[1], {3.0});
    EXPECT_DOUBLE_EQ(regress(m, x, 1).item(), -2.0 * 3.0 * 2.5 + 0.25);
    EXPECT_THROW(regress(m, x, 2), IndexError);

    ModelParams cls(identity_config(1, 2), 4);
    EXPECT_THROW(regress(cls, x, 0), ModeError);
}

TEST(ModelParams, ParameterCountMatchesClosedForm) {
    for (bool regression : {false, true})
        for (std::size_t C : {1, 2, 5}) {
            ModelConfig c;
            c.input_dim = 7;
            c.phi_hidden = {9, 4};
            c.embed_dim = 6;
            c.concept_dim = 5;
            c.num_concepts = C;
            c.regression = regression;
            c.label_dim = regression ? 1 : 16;
            ModelParams m(c, 1);
            EXPECT_EQ(m.parameter_count(), expected_parameter_count(c));
            EXPECT_EQ(m.concept_maps.size(), C);
            EXPECT_EQ(m.concept_head.layers.back().out(), C);
        }
}

TEST(ModelParams, SingleSquareFullRankConceptHasUnitKappa) {
    ModelConfig c;
    c.input_dim = 3;
    c.embed_dim = 4;
    c.concept_dim = 4;
    c.num_concepts = 1;
    ModelParams m(c, 2);
    Rng rng(3);
    const auto k = concept_weights(m, random_tensor({50, 4}, rng, 3.0, false));
    for (double v : k.data()) EXPECT_EQ(v, 1.0);
}

TEST(ModelParams, CloneIsDeepAndFrozenDoesNotTrack) {
    ModelConfig c;
    c.input_dim = 2;
    ModelParams m(c, 2);
    auto copy = m.clone();
    fill_constant(copy.concept_maps[0], 0.0);
    EXPECT_NE(m.concept_maps[0].data()[0], 0.0);
    const auto frozen = m.frozen();
    for (const auto& [name, t] : frozen.named_parameters()) EXPECT_FALSE(t.requires_grad()) << name;
    EXPECT_EQ(frozen.parameter_count(), m.parameter_count());
}

TEST(ModelConfig, ValidationAggregatesProblems) {
    ModelConfig c;
    c.input_dim = 0;
    c.num_concepts = 0;
    c.prototype_decay = 1.5;
    try {
        validate(c);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.problems().size(), 3u);
    }
}
