#include "ctxmeta/model.hpp"

#include <cmath>
#include <random>

#include "ctxmeta/error.hpp"
#include "ctxmeta/random.hpp"

namespace ctxmeta {

namespace {

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t mlp_count(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::size_t total = 0;
    std::size_t prev = in;
    for (auto h : hidden) {
        total += linear_count(prev, h);
        prev = h;
    }
    return total + linear_count(prev, out);
}

std::size_t head_hidden(const ModelConfig& c) { return std::max<std::size_t>(1, c.embed_dim / 2); }

std::size_t sct_input(const ModelConfig& c) { return c.regression ? c.embed_dim + 1 : 3 * c.embed_dim; }
std::size_t mct_input(const ModelConfig& c) {
    return c.regression ? c.embed_dim + 1 : 2 * c.embed_dim + c.label_dim;
}

}  // namespace

// ---------------------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, std::uint64_t seed) {
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (auto& v : w) v = dist(rng);
    std::vector<double> b(out);
    for (auto& v : b) v = dist(rng);
    weight = Tensor::from({in, out}, std::move(w), true);
    bias = Tensor::from({1, out}, std::move(b), true);
}

Tensor Linear::operator()(const Tensor& x) const { return ad::add(ad::matmul(x, weight), bias); }

Mlp::Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, std::uint64_t seed) {
    std::size_t prev = in;
    std::uint64_t k = 0;
    for (auto h : hidden) {
        layers.emplace_back(prev, h, derive_seed(seed, k++));
        prev = h;
    }
    layers.emplace_back(prev, out, derive_seed(seed, k));
}

Tensor Mlp::operator()(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i](h);
        if (i + 1 < layers.size()) h = ad::relu(h);
    }
    return h;
}

std::span<const double> PrototypeBank::sum(std::size_t concept_index, std::size_t label) const {
    return std::span<const double>(sums).subspan((concept_index * vocab + label) * dim, dim);
}

// ---------------------------------------------------------------------------

void validate(const ModelConfig& c) {
    std::vector<std::string> problems;
    if (c.input_dim == 0) problems.emplace_back("input_dim: must be positive");
    if (c.embed_dim == 0) problems.emplace_back("embed_dim: must be positive");
    if (c.concept_dim == 0) problems.emplace_back("concept_dim: must be positive");
    if (c.num_concepts == 0) problems.emplace_back("num_concepts: must be positive");
    if (c.label_dim == 0) problems.emplace_back("label_dim: must be positive");
    for (auto h : c.phi_hidden) {
        if (h == 0) problems.emplace_back("phi_hidden: widths must be positive");
    }
    if (c.identity_backbone && (c.embed_dim != c.input_dim || !c.phi_hidden.empty())) {
        problems.emplace_back("identity_backbone: requires embed_dim == input_dim and no hidden layers");
    }
    if (!(c.logit_scale > 0.0 && std::isfinite(c.logit_scale))) problems.emplace_back("logit_scale: must be positive");
    if (!(c.prototype_decay >= 0.0 && c.prototype_decay < 1.0)) {
        problems.emplace_back("prototype_decay: must lie in [0, 1)");
    }
    if (!(c.concept_map_noise >= 0.0)) problems.emplace_back("concept_map_noise: must be non-negative");
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::size_t expected_parameter_count(const ModelConfig& c) {
    const auto d = c.embed_dim;
    const auto C = c.num_concepts;
    std::size_t total = c.identity_backbone ? 0 : mlp_count(c.input_dim, c.phi_hidden, d);
    total += C * d * c.concept_dim;
    total += mlp_count(d, {head_hidden(c)}, C);
    total += linear_count(sct_input(c), d) + linear_count(d, C);
    total += linear_count(mct_input(c), d) + linear_count(d, C);
    if (c.regression) {
        total += C * linear_count(c.concept_dim, 1);
    } else {
        total += linear_count(2 * d + 2 * c.label_dim, 1);
    }
    return total;
}

ModelParams::ModelParams(ModelConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
    validate(config);
    const auto d = config.embed_dim;
    const auto dp = config.concept_dim;
    const auto C = config.num_concepts;
    const auto base = derive_seed(seed, stream::model_init);

    if (!config.identity_backbone) phi = Mlp(config.input_dim, config.phi_hidden, d, derive_seed(base, 1));

    Rng map_rng(derive_seed(base, 2));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> w(d * dp, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < dp; ++j) {
                const double eye = (i == j) ? 1.0 : 0.0;
                const double eps = config.concept_map_noise > 0.0 ? config.concept_map_noise * noise(map_rng) : 0.0;
                w[i * dp + j] = eye + eps;
            }
        }
        concept_maps.push_back(Tensor::from({d, dp}, std::move(w), true));
    }

    concept_head = Mlp(d, {head_hidden(config)}, C, derive_seed(base, 3));
    sct_selector = {Linear(sct_input(config), d, derive_seed(base, 4)), Linear(d, C, derive_seed(base, 5))};
    mct_selector = {Linear(mct_input(config), d, derive_seed(base, 6)), Linear(d, C, derive_seed(base, 7))};

    if (config.regression) {
        for (std::size_t c = 0; c < C; ++c) {
            Linear head;
            head.weight = Tensor::zeros({dp, 1}, true);
            head.bias = Tensor::zeros({1, 1}, true);
            regress_heads.push_back(std::move(head));
        }
    } else {
        mask_net = Linear(2 * d + 2 * config.label_dim, 1, derive_seed(base, 8));
        prototypes.num_concepts = C;
        prototypes.vocab = config.label_dim;
        prototypes.dim = dp;
        prototypes.sums.assign(C * config.label_dim * dp, 0.0);
        prototypes.weights.assign(C * config.label_dim, 0.0);
    }
}

namespace {

Tensor copy_tensor(const Tensor& t, bool trainable) { return trainable ? t.clone() : t.detach(); }

Linear clone_linear(const Linear& l, bool trainable = true) {
    Linear out;
    if (l.weight.defined()) {
        out.weight = copy_tensor(l.weight, trainable);
        out.bias = copy_tensor(l.bias, trainable);
    }
    return out;
}

Mlp clone_mlp(const Mlp& mlp, bool trainable) {
    Mlp out;
    for (const auto& l : mlp.layers) out.layers.push_back(clone_linear(l, trainable));
    return out;
}

ModelParams copy_params(const ModelParams& m, bool trainable) {
    ModelParams out;
    out.config = m.config;
    out.phi = clone_mlp(m.phi, trainable);
    for (const auto& L : m.concept_maps) out.concept_maps.push_back(copy_tensor(L, trainable));
    out.concept_head = clone_mlp(m.concept_head, trainable);
    out.sct_selector = {clone_linear(m.sct_selector.inner, trainable), clone_linear(m.sct_selector.outer, trainable)};
    out.mct_selector = {clone_linear(m.mct_selector.inner, trainable), clone_linear(m.mct_selector.outer, trainable)};
    out.mask_net = clone_linear(m.mask_net, trainable);
    for (const auto& h : m.regress_heads) out.regress_heads.push_back(clone_linear(h, trainable));
    out.prototypes = m.prototypes;
    return out;
}

void push_linear(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name, const Linear& l) {
    if (!l.weight.defined()) return;
    out.emplace_back(name + ".weight", l.weight);
    out.emplace_back(name + ".bias", l.bias);
}

}  // namespace

ModelParams ModelParams::clone() const { return copy_params(*this, true); }

ModelParams ModelParams::frozen() const { return copy_params(*this, false); }

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < phi.layers.size(); ++i) push_linear(out, "phi." + std::to_string(i), phi.layers[i]);
    for (std::size_t c = 0; c < concept_maps.size(); ++c) out.emplace_back("concept_map." + std::to_string(c), concept_maps[c]);
    for (std::size_t i = 0; i < concept_head.layers.size(); ++i)
        push_linear(out, "concept_head." + std::to_string(i), concept_head.layers[i]);
    push_linear(out, "sct_selector.inner", sct_selector.inner);
    push_linear(out, "sct_selector.outer", sct_selector.outer);
    push_linear(out, "mct_selector.inner", mct_selector.inner);
    push_linear(out, "mct_selector.outer", mct_selector.outer);
    push_linear(out, "mask_net", mask_net);
    for (std::size_t c = 0; c < regress_heads.size(); ++c) push_linear(out, "regress_head." + std::to_string(c), regress_heads[c]);
    return out;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, t] : named_parameters()) total += t.size();
    return total;
}

void ModelParams::zero_grad() const {
    for (auto& [name, t] : named_parameters()) {
        auto tensor = t;
        tensor.zero_grad();
    }
}

// ---------------------------------------------------------------------------

Tensor embed(const ModelParams& m, const Tensor& x) {
    if (x.cols() != m.config.input_dim) {
        throw DimensionError("embed: expected input dimension " + std::to_string(m.config.input_dim) + ", got " +
                             ad::shape_str(x.shape()));
    }
    if (m.config.identity_backbone) return x;
    return m.phi(x);
}

Tensor embed(const ModelParams& m, std::span<const double> x) {
    auto row = Tensor::from({x.size()}, std::vector<double>(x.begin(), x.end()));
    auto out = embed(m, row);
    return ad::reshape(out, {m.config.embed_dim});
}

Tensor concept_project(const ModelParams& m, const Tensor& e, std::size_t concept_index) {
    if (concept_index >= m.concept_maps.size()) {
        throw IndexError("concept index " + std::to_string(concept_index) + " out of range for C = " +
                         std::to_string(m.concept_maps.size()));
    }
    return ad::matmul(e, m.concept_maps[concept_index]);
}

Tensor concept_weights(const ModelParams& m, const Tensor& e) {
    if (e.cols() != m.config.embed_dim) throw DimensionError("concept_weights: embedding width mismatch");
    return ad::softmax(m.concept_head(e));
}

Tensor regress(const ModelParams& m, const Tensor& e, std::size_t concept_index) {
    if (!m.config.regression) throw ModeError("regress called on a classification model");
    if (concept_index >= m.regress_heads.size()) throw IndexError("regression head index out of range");
    return m.regress_heads[concept_index](concept_project(m, e, concept_index));
}

Tensor regress_all(const ModelParams& m, const Tensor& e) {
    std::vector<Tensor> cols;
    for (std::size_t c = 0; c < m.config.num_concepts; ++c) cols.push_back(regress(m, e, c));
    return cols.size() == 1 ? cols.front() : ad::concat(cols);
}

}  // namespace ctxmeta
