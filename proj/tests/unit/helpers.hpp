#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ctxmeta/autodiff.hpp"
#include "ctxmeta/episode.hpp"
#include "ctxmeta/model.hpp"
#include "ctxmeta/random.hpp"

namespace ctxmeta::testing {

using ad::Tensor;

inline Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> data(n);
    for (auto& v : data) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

/// Largest violation of |analytic - numeric| <= rtol * max(|analytic|, |numeric|, floor), as a
/// ratio against that bound (so a value <= 1 passes).
struct GradCheck {
    double worst_ratio = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Central finite differences of f with respect to every entry of every input.
inline GradCheck check_gradients(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double step = 1e-5,
                                 double rtol = 1e-4, double floor = 1e-3) {
    for (auto& in : inputs) in.zero_grad();
    const Tensor loss = f();
    ad::backward(loss);
    std::vector<std::vector<double>> analytic;
    for (auto& in : inputs) {
        const auto g = in.grad();
        analytic.emplace_back(g.begin(), g.end());
    }
    GradCheck out;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto values = inputs[k].mutable_data();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double orig = values[j];
            values[j] = orig + step;
            const double up = f().item();
            values[j] = orig - step;
            const double down = f().item();
            values[j] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[k][j];
            const double bound = rtol * std::max({std::abs(a), std::abs(numeric), floor});
            const double ratio = std::abs(a - numeric) / bound;
            if (ratio > out.worst_ratio) out = {ratio, a, numeric};
        }
    }
    return out;
}

/// Classification episode with Gaussian class clusters in `dim` dimensions.
inline Episode random_episode(std::size_t ways, std::size_t shots, std::size_t queries_per_class, std::size_t dim,
                              Rng& rng, double spread = 0.5) {
    Episode ep;
    ep.ways = ways;
    ep.shots = shots;
    ep.label_vocab = ways;
    ep.seed = rng();
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<std::vector<double>> centers(ways, std::vector<double>(dim));
    for (auto& c : centers)
        for (auto& v : c) v = unit(rng);
    auto draw = [&](std::size_t n) {
        Instance inst;
        inst.label = n;
        for (std::size_t j = 0; j < dim; ++j) inst.features.push_back(centers[n][j] + spread * unit(rng));
        return inst;
    };
    for (std::size_t n = 0; n < ways; ++n)
        for (std::size_t k = 0; k < shots; ++k) ep.support.push_back(draw(n));
    for (std::size_t n = 0; n < ways; ++n)
        for (std::size_t k = 0; k < queries_per_class; ++k) ep.query.push_back(draw(n));
    return ep;
}

/// Small classification model for property and gradient tests.
inline ModelConfig small_config(std::size_t input_dim, std::size_t concepts, std::size_t vocab) {
    ModelConfig c;
    c.input_dim = input_dim;
    c.phi_hidden = {6};
    c.embed_dim = 5;
    c.concept_dim = 4;
    c.num_concepts = concepts;
    c.label_dim = vocab;
    return c;
}

/// Sets every entry of a leaf tensor.
inline void fill(Tensor t, const std::vector<double>& values) {
    auto d = t.mutable_data();
    ASSERT_EQ(d.size(), values.size());
    std::copy(values.begin(), values.end(), d.begin());
}

inline void fill_constant(Tensor t, double value) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), value);
}

}  // namespace ctxmeta::testing
