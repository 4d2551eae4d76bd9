#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ctxmeta/episode.hpp"
#include "ctxmeta/model.hpp"

namespace ctxmeta {

/// Which conditional predictor an episode is trained and evaluated with.
///  baseline  single embedding (prototype softmax / head 0 for regression)
///  multi     multi-concept posterior without a selector
///  sct       set-level selector over concepts
///  mct       instance- and label-level selector with comparison masks
///  averaged  uniform mixture of concepts (selector removed)
enum class Method { baseline, multi, sct, mct, averaged };

std::string method_name(Method method);
/// Throws ConfigError on an unknown name.
Method parse_method(const std::string& name);

enum class OmegaForm { none, entropy };

struct OmegaConfig {
    OmegaForm form = OmegaForm::entropy;
    double lambda = 0.01;
};

/// lambda * mean row entropy of kappa [n x C]; exactly zero when switched off or lambda == 0.
Tensor regularizer_omega(const OmegaConfig& config, const Tensor& kappa);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> first;
    std::vector<std::vector<double>> second;
    std::uint64_t step = 0;
};

/// One adaptive-moment update of every parameter from its accumulated gradient. Parameters
/// without a gradient are treated as having a zero gradient. Throws ContractError when the
/// state was built for a different parameter layout.
void optimizer_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& config);

struct LossConfig {
    OmegaConfig omega;
    /// Width s of the per-concept likelihood exp(-(y - f_c(x))^2 / s) in the mixed-concept
    /// regression loss.
    double mixture_width = 0.1;
};

/// Training loss of one episode, including the regularizer where kappa enters the forward pass.
/// For `mct` on regression the episode is an unlabeled batch in `query` and the loss is the
/// negative log of the selector-weighted mixture of per-concept squared-error likelihoods.
struct EpisodeLoss {
    Tensor loss;
    /// MCT classification: [N x C] mean upsilon of the true-label hypotheses (detached).
    std::optional<Tensor> upsilon_true;
    std::optional<Tensor> support_embedding;
};
EpisodeLoss episode_loss(const ModelParams& m, Method method, const Episode& ep, const LossConfig& config);

/// [Q x N] class probabilities of the episode's queries.
Tensor classify(const ModelParams& m, Method method, const Episode& ep);
/// [Q x 1] predictions for the episode's queries conditioned on its support.
Tensor predict_regression(const ModelParams& m, Method method, const Episode& ep);

/// Ground-truth labeled points used to initialize the mixed-concept regression model.
struct WarmupSet {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<std::size_t> concepts;
};

/// Parameter names updated by the warm-up: backbone, concept maps, MCT selector and heads.
std::vector<std::string> warmup_parameter_names(const ModelParams& m);

struct TrainConfig {
    Method method = Method::mct;
    std::size_t episodes = 1000;
    AdamConfig adam;
    LossConfig loss;
    std::size_t validate_every = 0;
    std::size_t checkpoint_every = 0;
    std::size_t warmup_steps = 0;
    /// Weight of the warm-up loss kept in every later step (0 drops it after the warm-up).
    double anchor_weight = 0.0;
};

struct TrainReport {
    Method method = Method::mct;
    std::vector<double> losses;
    std::vector<double> warmup_losses;
    std::vector<std::pair<std::size_t, double>> validation;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const;
};

/// Supplies the episode for a training step. It only ever hands out Episode values, never the
/// generator's hidden concept record.
using TaskSource = std::function<Episode(std::size_t step)>;
using Validator = std::function<double(const ModelParams&)>;
using CheckpointHook = std::function<void(const ModelParams&, std::size_t step)>;

struct TrainHooks {
    Validator validate;
    CheckpointHook checkpoint;
    std::optional<WarmupSet> warmup;
};

/// Episodic training loop: zero grads, forward the method's loss, backward, Adam step. MCT
/// classification also folds every episode into the deployment prototypes. Throws
/// NonFiniteLossError naming the episode seed when a loss is not finite.
TrainReport meta_train(const TrainConfig& config, ModelParams& m, const TaskSource& source,
                       const TrainHooks& hooks = {});

/// Flat supervised classifier over a global label vocabulary.
struct FlatClassifier {
    Mlp phi;
    Linear head;

    FlatClassifier() = default;
    FlatClassifier(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t embed_dim,
                   std::size_t classes, std::uint64_t seed);
    Tensor logits(const Tensor& x) const;
    std::vector<Tensor> parameters() const;
    std::size_t predict(std::span<const double> features) const;
};

/// A batch of instances whose `label` is a global class id.
using BatchSource = std::function<std::vector<Instance>(std::size_t step)>;

TrainReport train_flat(FlatClassifier& model, const TrainConfig& config, const BatchSource& source);

}  // namespace ctxmeta
