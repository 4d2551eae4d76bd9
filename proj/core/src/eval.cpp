#include "ctxmeta/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "ctxmeta/error.hpp"
#include "ctxmeta/mct.hpp"
#include "ctxmeta/posterior.hpp"
#include "ctxmeta/random.hpp"
#include "ctxmeta/sct.hpp"
#include "ctxmeta/taskgen.hpp"

namespace ctxmeta {

namespace {

/// Evaluates fn(worker, i) for i in [0, count) on `threads` workers with strided assignment;
/// results land at their index so the reduction order never depends on scheduling.
template <typename Fn>
std::vector<double> parallel_map(std::size_t count, std::size_t threads, Fn fn) {
    std::vector<double> out(count, 0.0);
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) out[i] = fn(0, i);
        return out;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += threads) out[i] = fn(w, i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

std::vector<ModelParams> worker_copies(const ModelParams& m, std::size_t threads) {
    std::vector<ModelParams> out;
    for (std::size_t w = 0; w < std::max<std::size_t>(threads, 1); ++w) out.push_back(m.frozen());
    return out;
}

ConceptMatch search(const std::vector<std::vector<double>>& score, bool maximize) {
    const auto H = score.size();
    if (H > 6) throw UnsupportedSizeError("concept matching is exhaustive and supports at most 6 heads");
    const auto T = H == 0 ? 0 : score.front().size();
    if (T > H) throw ContractError("concept matching needs at least as many heads as concepts");
    std::vector<std::size_t> perm(H);
    std::iota(perm.begin(), perm.end(), 0);
    ConceptMatch best;
    double best_total = 0.0;
    bool first = true;
    do {
        double total = 0.0;
        for (std::size_t t = 0; t < T; ++t) total += score[perm[t]][t];
        if (first || (maximize ? total > best_total : total < best_total)) {
            first = false;
            best_total = total;
            best.head_for.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(T));
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t t = 0; t < T; ++t) best.matched.push_back(score[best.head_for[t]][t]);
    return best;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(12);
    return out;
}

}  // namespace

MeanCi mean_ci(const std::vector<double>& values) {
    if (values.size() < 2) throw ConfigError({"trials: at least 2 values are needed for an interval"});
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= n - 1.0;
    return {mean, 1.96 * std::sqrt(var / n), values.size()};
}

MeanCi mse_over_trials(const RegressionPredictor& predictor, std::size_t trials, std::size_t shots,
                       std::uint64_t seed, std::size_t threads) {
    if (trials < 2) throw ConfigError({"trials: must be at least 2"});
    const auto per_trial = parallel_map(trials, threads, [&](std::size_t, std::size_t t) {
        const auto lep = sample_family_task(shots, derive_seed(seed, t));
        const auto pred = predictor(lep.episode);
        const auto& q = lep.episode.query;
        if (pred.size() != q.size()) throw DimensionError("predictor returned the wrong number of values");
        double se = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) se += (pred[i] - q[i].target) * (pred[i] - q[i].target);
        return se / static_cast<double>(q.size());
    });
    return mean_ci(per_trial);
}

MeanCi mse_over_trials(const ModelParams& m, Method method, std::size_t trials, std::size_t shots,
                       std::uint64_t seed, std::size_t threads) {
    if (!m.config.regression) throw ModeError("mse_over_trials needs a regression model");
    if (trials < 2) throw ConfigError({"trials: must be at least 2"});
    threads = std::max<std::size_t>(threads, 1);
    const auto copies = worker_copies(m, threads);
    const auto per_trial = parallel_map(trials, threads, [&](std::size_t w, std::size_t t) {
        const auto lep = sample_family_task(shots, derive_seed(seed, t));
        const auto pred = predict_regression(copies[w], method, lep.episode);
        const auto& q = lep.episode.query;
        double se = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            const double d = pred.data()[i] - q[i].target;
            se += d * d;
        }
        return se / static_cast<double>(q.size());
    });
    return mean_ci(per_trial);
}

MeanCi episode_accuracy(const ModelParams& m, Method method, const EpisodeFactory& episodes, std::size_t count,
                        std::size_t threads) {
    threads = std::max<std::size_t>(threads, 1);
    const auto copies = worker_copies(m, threads);
    const auto acc = parallel_map(count, threads, [&](std::size_t w, std::size_t i) {
        const Episode ep = episodes(i);
        const auto pred = argmax_rows(classify(copies[w], method, ep));
        std::size_t hits = 0;
        for (std::size_t q = 0; q < ep.query.size(); ++q) hits += pred[q] == ep.query[q].label;
        return static_cast<double>(hits) / static_cast<double>(ep.query.size());
    });
    return mean_ci(acc);
}

ConceptMatch match_concepts(const std::vector<std::vector<double>>& score) { return search(score, true); }

ConceptMatch match_concepts_min(const std::vector<std::vector<double>>& score) { return search(score, false); }

std::vector<std::vector<double>> accuracy_matrix(const HeadPredictor& predict, std::size_t heads,
                                                 const std::vector<MultiLabelInstance>& instances) {
    if (instances.empty()) throw ContractError("accuracy_matrix: no instances");
    const auto T = instances.front().labels.size();
    std::vector<std::vector<double>> acc(heads, std::vector<double>(T, 0.0));
    for (const auto& inst : instances) {
        if (inst.labels.size() != T) throw DimensionError("instances disagree on the number of concepts");
        for (std::size_t h = 0; h < heads; ++h) {
            const auto y = predict(h, inst.features);
            for (std::size_t t = 0; t < T; ++t) acc[h][t] += y == inst.labels[t];
        }
    }
    for (auto& row : acc)
        for (auto& v : row) v /= static_cast<double>(instances.size());
    return acc;
}

ConceptAccuracy per_concept_accuracy(const ModelParams& m, const std::vector<MultiLabelInstance>& instances) {
    const auto frozen = m.frozen();
    ConceptAccuracy out;
    out.matrix = accuracy_matrix(
        [&](std::size_t h, const std::vector<double>& x) { return deploy_label(frozen, x, h); },
        m.config.num_concepts, instances);
    out.match = match_concepts(out.matrix);
    return out;
}

ConceptMse per_concept_mse(const std::function<double(std::size_t, double)>& predict, std::size_t heads,
                           const std::vector<double>& grid) {
    if (grid.empty()) throw ContractError("per_concept_mse: empty grid");
    ConceptMse out;
    out.matrix.assign(heads, std::vector<double>(kConfusingCurves, 0.0));
    for (std::size_t h = 0; h < heads; ++h)
        for (double x : grid) {
            const double p = predict(h, x);
            for (std::size_t t = 0; t < kConfusingCurves; ++t) {
                const double d = p - confusing_curve(t, x);
                out.matrix[h][t] += d * d / static_cast<double>(grid.size());
            }
        }
    out.match = match_concepts_min(out.matrix);
    return out;
}

ConceptMse per_concept_mse(const ModelParams& m, const std::vector<double>& grid) {
    const auto frozen = m.frozen();
    return per_concept_mse(
        [&](std::size_t h, double x) { return deploy_value(frozen, std::span(&x, 1), h); }, m.config.num_concepts,
        grid);
}

std::vector<double> uniform_grid(double low, double high, std::size_t count) {
    if (count < 2) throw ContractError("uniform_grid: need at least two points");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = low + (high - low) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    return out;
}

Identification sct_identification(const ModelParams& m, const std::vector<LabeledEpisode>& episodes) {
    const auto frozen = m.frozen();
    const auto C = m.config.num_concepts;
    std::size_t T = 0;
    for (const auto& lep : episodes) {
        if (!lep.truth.task_concept) throw ContractError("sct_identification needs episodes with a task concept");
        T = std::max(T, *lep.truth.task_concept + 1);
    }
    Identification out;
    out.counts.assign(C, std::vector<double>(T, 0.0));
    for (const auto& lep : episodes) {
        const auto ups = task_concept_prob(frozen, lep.episode);
        out.counts[argmax_rows(ups).front()][*lep.truth.task_concept] += 1.0;
    }
    out.match = match_concepts(out.counts);
    double hits = 0.0;
    for (double v : out.match.matched) hits += v;
    out.rate = episodes.empty() ? 0.0 : hits / static_cast<double>(episodes.size());
    return out;
}

void export_curves(const ModelParams& m, const std::vector<double>& grid, const std::string& path,
                   const std::string& config_hash) {
    if (!m.config.regression) throw ModeError("export_curves needs a regression model");
    const auto C = m.config.num_concepts;
    auto out = open_output(path);
    out << "# config-hash: " << config_hash << '\n';
    out << 'x';
    for (std::size_t c = 0; c < C; ++c) out << ",pred_" << c + 1;
    for (std::size_t t = 0; t < kConfusingCurves; ++t) out << ",truth_" << t + 1;
    out << '\n';
    const auto frozen = m.frozen();
    for (double x : grid) {
        out << x;
        for (std::size_t c = 0; c < C; ++c) out << ',' << deploy_value(frozen, std::span(&x, 1), c);
        for (std::size_t t = 0; t < kConfusingCurves; ++t) out << ',' << confusing_curve(t, x);
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

void export_embeddings(const ModelParams& m, const std::vector<ExportInstance>& instances, const std::string& path,
                       const std::string& config_hash) {
    const auto C = m.config.num_concepts;
    const auto dp = m.config.concept_dim;
    auto out = open_output(path);
    out << "# config-hash: " << config_hash << '\n';
    out << "id,concept,label";
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < dp; ++j) out << ",c" << c << '_' << j;
    out << '\n';
    const auto frozen = m.frozen();
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto& inst = instances[i];
        const Tensor e = embed(frozen, feature_matrix(std::vector<Instance>{{inst.features, 0, 0.0}}));
        out << i << ',' << inst.concept_id << ',' << inst.label;
        for (std::size_t c = 0; c < C; ++c) {
            const Tensor p = concept_project(frozen, e, c);
            for (double v : p.data()) out << ',' << v;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path);
}

std::uint64_t parameter_hash(const ModelParams& m) {
    std::vector<double> all;
    for (const auto& [name, t] : m.named_parameters()) all.insert(all.end(), t.data().begin(), t.data().end());
    all.insert(all.end(), m.prototypes.sums.begin(), m.prototypes.sums.end());
    all.insert(all.end(), m.prototypes.weights.begin(), m.prototypes.weights.end());
    return content_hash(all);
}

}  // namespace ctxmeta
