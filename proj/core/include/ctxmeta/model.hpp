#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxmeta/autodiff.hpp"

namespace ctxmeta {

using ad::Tensor;

struct ModelConfig {
    std::size_t input_dim = 1;
    /// Hidden widths of the backbone; ReLU after each hidden layer, none after the output layer.
    std::vector<std::size_t> phi_hidden{40, 40};
    std::size_t embed_dim = 40;    // d
    std::size_t concept_dim = 40;  // d'
    std::size_t num_concepts = 3;  // C
    bool regression = false;
    /// Width of the label encoding fed to the MCT selector and mask (vocab size; 1 for regression).
    std::size_t label_dim = 1;
    /// Zero-depth backbone: embed(x) == x. Requires embed_dim == input_dim and no hidden layers.
    bool identity_backbone = false;
    double concept_map_noise = 0.05;
    double prototype_decay = 0.99;
    /// Fixed multiplier on every cosine logit. Cosines are bounded, so without it the only way
    /// to sharpen a posterior is to push kappa towards a vertex.
    double logit_scale = 1.0;
};

/// Affine layer y = x W + b with W [in x out] and b [1 x out].
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, std::uint64_t seed);
    Tensor operator()(const Tensor& x) const;
    std::size_t in() const { return weight.rows(); }
    std::size_t out() const { return weight.cols(); }
};

/// Stack of Linear layers with ReLU between them (not after the last one).
struct Mlp {
    std::vector<Linear> layers;

    Mlp() = default;
    Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, std::uint64_t seed);
    Tensor operator()(const Tensor& x) const;
};

/// Set-encoder shape shared by the SCT and MCT selectors: per-element FC+ReLU, a sum,
/// then an FC to concept logits.
struct SelectorNet {
    Linear inner;
    Linear outer;
};

/// Per-(concept, global label) class representatives used at deployment. Each entry is a
/// decayed, weight-scaled running sum of support embeddings together with its running weight.
struct PrototypeBank {
    std::size_t num_concepts = 0;
    std::size_t vocab = 0;
    std::size_t dim = 0;
    std::vector<double> sums;    // [C * vocab * dim]
    std::vector<double> weights; // [C * vocab]

    bool empty() const { return sums.empty(); }
    std::span<const double> sum(std::size_t concept_index, std::size_t label) const;
    double weight(std::size_t concept_index, std::size_t label) const { return weights[concept_index * vocab + label]; }
};

/// All learnable state: backbone phi, concept maps L_c, concept head h, selector and mask
/// nets, regression heads, plus the deployment prototype bank.
struct ModelParams {
    ModelConfig config;
    Mlp phi;
    std::vector<Tensor> concept_maps;
    Mlp concept_head;
    SelectorNet sct_selector;
    SelectorNet mct_selector;
    Linear mask_net;                   // classification only
    std::vector<Linear> regress_heads; // regression only
    PrototypeBank prototypes;          // classification only

    ModelParams() = default;
    ModelParams(ModelConfig config, std::uint64_t seed);

    /// Deep copy: parameters are new leaves with copied values.
    ModelParams clone() const;
    /// Deep copy whose tensors do not track gradients; used for read-only evaluation.
    ModelParams frozen() const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::size_t parameter_count() const;
    void zero_grad() const;
};

/// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// Throws ConfigError listing every inconsistent field.
void validate(const ModelConfig& config);

/// phi applied row-wise: [n x input_dim] -> [n x d].
Tensor embed(const ModelParams& m, const Tensor& x);
/// Single feature vector -> [d].
Tensor embed(const ModelParams& m, std::span<const double> x);

/// e L_c, row-wise.
Tensor concept_project(const ModelParams& m, const Tensor& e, std::size_t concept_index);

/// kappa = softmax(h(e)), one simplex row per embedding row.
Tensor concept_weights(const ModelParams& m, const Tensor& e);

/// Affine head of concept c applied to e L_c: [n x 1]. Throws ModeError in classification mode.
Tensor regress(const ModelParams& m, const Tensor& e, std::size_t concept_index);

/// All C head outputs side by side: [n x C].
Tensor regress_all(const ModelParams& m, const Tensor& e);

}  // namespace ctxmeta
