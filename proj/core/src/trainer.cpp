#include "ctxmeta/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "ctxmeta/error.hpp"
#include "ctxmeta/mct.hpp"
#include "ctxmeta/posterior.hpp"
#include "ctxmeta/random.hpp"
#include "ctxmeta/sct.hpp"

namespace ctxmeta {

namespace {

Tensor uniform_weights(std::size_t concepts) {
    return Tensor::full({1, concepts}, 1.0 / static_cast<double>(concepts));
}

Tensor mean_squared(const Tensor& prediction, const Tensor& target) {
    const Tensor diff = ad::sub(prediction, target);
    return ad::mean(ad::mul(diff, diff));
}

/// Omega over every support and query row, weighted by row count.
Tensor episode_omega(const ModelParams& m, const OmegaConfig& omega, const EpisodeEmbedding& emb) {
    const double S = static_cast<double>(emb.support.rows());
    const double Q = static_cast<double>(emb.query.rows());
    const Tensor s = regularizer_omega(omega, concept_weights(m, emb.support));
    const Tensor q = regularizer_omega(omega, concept_weights(m, emb.query));
    return ad::add(ad::scale(s, S / (S + Q)), ad::scale(q, Q / (S + Q)));
}

ConceptPosterior sct_forward(const ModelParams& m, const Episode& ep, EpisodeEmbedding& emb, bool averaged) {
    if (averaged) {
        emb = embed_episode(m, ep);
        return sct_posterior(m, ep, emb, uniform_weights(m.config.num_concepts));
    }
    const auto augmented = augment_support(ep);
    emb = embed_episode(m, ep, augmented);
    const auto triplets = mine_triplets(ep, emb.extended);
    return sct_posterior(m, ep, emb, task_concept_prob(m, emb, triplets));
}

struct MctForward {
    Tensor probs;
    Tensor upsilon_true;
};

MctForward mct_forward(const ModelParams& m, const Episode& ep, const EpisodeEmbedding& emb) {
    const auto Q = ep.query.size();
    const auto N = ep.ways;
    const auto C = m.config.num_concepts;
    std::vector<LabelHypothesis> hyps;
    for (std::size_t q = 0; q < Q; ++q)
        for (std::size_t n = 0; n < N; ++n) hyps.push_back({q, n});
    const auto terms = mct_terms(m, ep, emb, hyps);
    const Tensor scores = ad::reshape(terms.score, {Q, N});

    std::vector<double> ups(N * C, 0.0);
    std::vector<double> count(N, 0.0);
    for (std::size_t q = 0; q < Q; ++q) {
        const auto y = ep.query[q].label;
        count[y] += 1.0;
        for (std::size_t c = 0; c < C; ++c) ups[y * C + c] += terms.upsilon.at(q * N + y, c);
    }
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) ups[n * C + c] = count[n] > 0 ? ups[n * C + c] / count[n] : 0.0;
    return {ad::div(scores, ad::sum_cols(scores)), Tensor::from({N, C}, std::move(ups))};
}

/// log sum_c exp(a_c) per row, shifted by the (constant) row maximum.
Tensor log_sum_exp_rows(const Tensor& a) {
    const auto r = a.rows(), c = a.cols();
    std::vector<double> shift(r);
    for (std::size_t i = 0; i < r; ++i) {
        const auto row = a.data().subspan(i * c, c);
        shift[i] = *std::max_element(row.begin(), row.end());
    }
    const Tensor s = Tensor::from({r, 1}, std::move(shift));
    return ad::add(ad::log(ad::sum_cols(ad::exp(ad::sub(a, s)))), s);
}

EpisodeLoss mixed_regression_loss(const ModelParams& m, const Episode& ep, double width) {
    if (ep.query.empty()) throw EpisodeStructureError("mixed regression batch is empty");
    if (!(width > 0.0)) throw ContractError("mixture width must be positive");
    const Tensor e = embed(m, feature_matrix(ep.query));
    const Tensor y = target_column(ep.query);
    const Tensor heads = regress_all(m, e);
    const Tensor log_ups = ad::log_softmax(m.mct_selector.outer(ad::relu(m.mct_selector.inner(ad::concat({e, y})))));
    const Tensor diff = ad::sub(heads, y);
    const Tensor joint = ad::sub(log_ups, ad::scale(ad::mul(diff, diff), 1.0 / width));
    return {ad::neg(ad::mean(log_sum_exp_rows(joint))), std::nullopt, std::nullopt};
}

std::vector<Tensor> select_parameters(const ModelParams& m, const std::vector<std::string>& names) {
    const std::set<std::string> wanted(names.begin(), names.end());
    std::vector<Tensor> out;
    for (const auto& [name, t] : m.named_parameters()) {
        if (wanted.contains(name)) out.push_back(t);
    }
    return out;
}

std::vector<Tensor> all_parameters(const ModelParams& m) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : m.named_parameters()) out.push_back(t);
    return out;
}

/// Loss on the labeled warm-up points: cross-entropy of the selector on the true concept plus
/// the squared error of that concept's head.
Tensor warmup_loss(const ModelParams& m, const WarmupSet& set) {
    const auto n = set.x.size();
    const Tensor x = Tensor::from({n, 1}, set.x);
    const Tensor y = Tensor::from({n, 1}, set.y);
    const Tensor e = embed(m, x);
    const Tensor logits = m.mct_selector.outer(ad::relu(m.mct_selector.inner(ad::concat({e, y}))));
    const Tensor ce = ad::neg(ad::mean(ad::pick(ad::log_softmax(logits), set.concepts)));
    const Tensor se = mean_squared(ad::pick(regress_all(m, e), set.concepts), y);
    return ad::add(ce, se);
}

}  // namespace

std::string method_name(Method method) {
    switch (method) {
        case Method::baseline: return "baseline";
        case Method::multi: return "multi";
        case Method::sct: return "sct";
        case Method::mct: return "mct";
        case Method::averaged: return "averaged";
    }
    return "unknown";
}

Method parse_method(const std::string& name) {
    for (auto m : {Method::baseline, Method::multi, Method::sct, Method::mct, Method::averaged}) {
        if (method_name(m) == name) return m;
    }
    throw ConfigError({"mode: unknown method '" + name + "' (baseline, multi, sct, mct, averaged)"});
}

Tensor regularizer_omega(const OmegaConfig& config, const Tensor& kappa) {
    if (config.form == OmegaForm::none || config.lambda == 0.0) return Tensor::scalar(0.0);
    const Tensor plogp = ad::mul(kappa, ad::log(ad::add_scalar(kappa, 1e-12)));
    const Tensor entropy = ad::neg(ad::sum_cols(plogp));
    return ad::scale(ad::mean(entropy), config.lambda);
}

void optimizer_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& config) {
    if (state.first.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.first.emplace_back(p.size(), 0.0);
            state.second.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first.size() != params.size() || state.second.size() != params.size()) {
        throw ContractError("optimizer state holds " + std::to_string(state.first.size()) + " slots for " +
                            std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first[i].size() != params[i].size() || state.second[i].size() != params[i].size()) {
            throw ContractError("optimizer state shape differs from parameter " + std::to_string(i));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const bool has = p.has_grad();
        const auto grad = has ? p.grad() : std::span<const double>{};
        auto value = p.mutable_data();
        auto& m1 = state.first[i];
        auto& m2 = state.second[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = has ? grad[j] : 0.0;
            m1[j] = config.beta1 * m1[j] + (1.0 - config.beta1) * g;
            m2[j] = config.beta2 * m2[j] + (1.0 - config.beta2) * g * g;
            const double mhat = m1[j] / c1;
            const double vhat = m2[j] / c2;
            value[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
        }
    }
}

EpisodeLoss episode_loss(const ModelParams& m, Method method, const Episode& ep, const LossConfig& config) {
    const auto& omega = config.omega;
    if (ep.kind == TaskKind::regression) {
        if (!m.config.regression) throw ModeError("regression episode on a classification model");
        if (method == Method::mct) return mixed_regression_loss(m, ep, config.mixture_width);
        return {mean_squared(predict_regression(m, method, ep), target_column(ep.query)), std::nullopt, std::nullopt};
    }
    if (m.config.regression) throw ModeError("classification episode on a regression model");
    validate_episode(ep);
    EpisodeEmbedding emb;
    Tensor probs;
    std::optional<Tensor> upsilon_true;
    switch (method) {
        case Method::baseline:
            emb = embed_episode(m, ep);
            probs = proto_posterior(m, ep, emb).probs;
            break;
        case Method::multi:
            emb = embed_episode(m, ep);
            probs = multi_concept_posterior(m, ep, emb).probs;
            break;
        case Method::sct:
        case Method::averaged:
            probs = sct_forward(m, ep, emb, method == Method::averaged).probs;
            break;
        case Method::mct: {
            emb = embed_episode(m, ep);
            auto fwd = mct_forward(m, ep, emb);
            probs = fwd.probs;
            upsilon_true = fwd.upsilon_true;
            break;
        }
    }
    Tensor loss = nll(probs, ep.query);
    if (method != Method::baseline) loss = ad::add(loss, episode_omega(m, omega, emb));
    return {loss, upsilon_true, emb.support.detach()};
}

Tensor classify(const ModelParams& m, Method method, const Episode& ep) {
    if (m.config.regression) throw ModeError("classify on a regression model");
    validate_episode(ep);
    EpisodeEmbedding emb;
    switch (method) {
        case Method::baseline: return proto_posterior(m, ep).probs;
        case Method::multi: return multi_concept_posterior(m, ep).probs;
        case Method::sct:
        case Method::averaged: return sct_forward(m, ep, emb, method == Method::averaged).probs;
        case Method::mct: return mct_forward(m, ep, embed_episode(m, ep)).probs;
    }
    throw ContractError("unknown method");
}

Tensor predict_regression(const ModelParams& m, Method method, const Episode& ep) {
    if (!m.config.regression) throw ModeError("predict_regression on a classification model");
    if (ep.query.empty()) throw EpisodeStructureError("regression episode has no queries");
    switch (method) {
        case Method::baseline: return regress(m, embed(m, feature_matrix(ep.query)), 0);
        case Method::multi:
        case Method::averaged:
            return mix_heads(m, embed(m, feature_matrix(ep.query)), uniform_weights(m.config.num_concepts));
        case Method::sct: {
            validate_episode(ep);
            const auto emb = embed_episode(m, ep);
            return mix_heads(m, emb.query, regression_task_concept_prob(m, ep, emb));
        }
        case Method::mct: throw ModeError("mixed-concept regression predicts per concept; use deploy_value");
    }
    throw ContractError("unknown method");
}

std::vector<std::string> warmup_parameter_names(const ModelParams& m) {
    std::vector<std::string> out;
    for (const auto& [name, t] : m.named_parameters()) {
        if (name.starts_with("phi.") || name.starts_with("concept_map.") || name.starts_with("mct_selector.") ||
            name.starts_with("regress_head.")) {
            out.push_back(name);
        }
    }
    return out;
}

nlohmann::json TrainReport::to_json() const {
    nlohmann::json j;
    j["method"] = method_name(method);
    j["episodes"] = losses.size();
    j["losses"] = losses;
    j["warmup_losses"] = warmup_losses;
    auto& v = j["validation"] = nlohmann::json::array();
    for (const auto& [step, metric] : validation) v.push_back({{"episode", step}, {"metric", metric}});
    j["wall_seconds"] = wall_seconds;
    return j;
}

TrainReport meta_train(const TrainConfig& config, ModelParams& m, const TaskSource& source, const TrainHooks& hooks) {
    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    report.method = config.method;

    if (hooks.warmup && config.warmup_steps > 0) {
        if (!m.config.regression || config.method != Method::mct) {
            throw ContractError("warm-up applies to mixed-concept regression only");
        }
        auto params = select_parameters(m, warmup_parameter_names(m));
        AdamState state;
        for (std::size_t s = 0; s < config.warmup_steps; ++s) {
            m.zero_grad();
            const Tensor loss = warmup_loss(m, *hooks.warmup);
            const double value = loss.item();
            if (!std::isfinite(value)) throw NonFiniteLossError(0, s);
            ad::backward(loss);
            optimizer_step(params, state, config.adam);
            report.warmup_losses.push_back(value);
        }
    }

    auto params = all_parameters(m);
    AdamState state;
    report.losses.reserve(config.episodes);
    for (std::size_t t = 0; t < config.episodes; ++t) {
        const Episode ep = source(t);
        m.zero_grad();
        auto out = episode_loss(m, config.method, ep, config.loss);
        if (hooks.warmup && config.anchor_weight > 0.0) {
            out.loss = ad::add(out.loss, ad::scale(warmup_loss(m, *hooks.warmup), config.anchor_weight));
        }
        const double value = out.loss.item();
        if (!std::isfinite(value)) throw NonFiniteLossError(ep.seed, t);
        ad::backward(out.loss);
        optimizer_step(params, state, config.adam);
        report.losses.push_back(value);
        if (out.upsilon_true && !m.prototypes.empty()) {
            EpisodeEmbedding emb;
            emb.support = *out.support_embedding;
            update_prototypes(m, ep, emb, *out.upsilon_true);
        }
        const auto done = t + 1;
        if (hooks.validate && config.validate_every > 0 && done % config.validate_every == 0) {
            report.validation.emplace_back(done, hooks.validate(m));
        }
        if (hooks.checkpoint && config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
            hooks.checkpoint(m, done);
        }
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

// ---- flat supervised baseline ----------------------------------------------------

FlatClassifier::FlatClassifier(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t embed_dim,
                               std::size_t classes, std::uint64_t seed)
    : phi(input_dim, hidden, embed_dim, derive_seed(seed, 1)), head(embed_dim, classes, derive_seed(seed, 2)) {}

Tensor FlatClassifier::logits(const Tensor& x) const { return head(ad::relu(phi(x))); }

std::vector<Tensor> FlatClassifier::parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : phi.layers) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    out.push_back(head.weight);
    out.push_back(head.bias);
    return out;
}

std::size_t FlatClassifier::predict(std::span<const double> features) const {
    const Tensor x = Tensor::from({1, features.size()}, std::vector<double>(features.begin(), features.end()));
    return argmax_rows(logits(x)).front();
}

TrainReport train_flat(FlatClassifier& model, const TrainConfig& config, const BatchSource& source) {
    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    report.method = Method::baseline;
    auto params = model.parameters();
    AdamState state;
    for (std::size_t t = 0; t < config.episodes; ++t) {
        const auto batch = source(t);
        for (auto& p : params) p.zero_grad();
        std::vector<std::size_t> labels;
        for (const auto& inst : batch) labels.push_back(inst.label);
        const Tensor logp = ad::log_softmax(model.logits(feature_matrix(batch)));
        const Tensor loss = ad::neg(ad::mean(ad::pick(logp, labels)));
        const double value = loss.item();
        if (!std::isfinite(value)) throw NonFiniteLossError(t, t);
        ad::backward(loss);
        optimizer_step(params, state, config.adam);
        report.losses.push_back(value);
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace ctxmeta
