#include <filesystem>

#include <benchmark/benchmark.h>

#include "ctxmeta/checkpoint.hpp"
#include "ctxmeta/mct.hpp"
#include "ctxmeta/posterior.hpp"
#include "ctxmeta/random.hpp"
#include "ctxmeta/sct.hpp"
#include "ctxmeta/taskgen.hpp"
#include "ctxmeta/trainer.hpp"

using namespace ctxmeta;

namespace {

ModelConfig glyph_model(std::size_t concepts, std::size_t vocab) {
    ModelConfig c;
    c.input_dim = 3 * kGlyphSide * kGlyphSide;
    c.phi_hidden = {128, 128};
    c.num_concepts = concepts;
    c.label_dim = vocab;
    c.logit_scale = 20.0;
    return c;
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    std::normal_distribution<double> d;
    std::vector<double> a(n * n), b(n * n);
    for (auto& v : a) v = d(rng);
    for (auto& v : b) v = d(rng);
    const auto ta = Tensor::from({n, n}, a, true), tb = Tensor::from({n, n}, b, true);
    for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(ta, tb).data().data());
    state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128);

void BM_SampleGlyphEpisode(benchmark::State& state) {
    GlyphEpisodeConfig g;
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(sample_glyph_episode(g, seed++).episode.query.size());
}
BENCHMARK(BM_SampleGlyphEpisode);

void BM_EpisodeLossBackward(benchmark::State& state) {
    const auto method = static_cast<Method>(state.range(0));
    const bool mixed = method == Method::mct;
    const ModelParams m(glyph_model(method == Method::baseline ? 1 : 2, mixed ? kGlyphVocab : 5), 3);
    GlyphEpisodeConfig g;
    if (mixed) g.mode = GlyphMode::mct_mixed;
    const auto ep = sample_glyph_episode(g, 7).episode;
    for (auto _ : state) {
        m.zero_grad();
        const auto loss = episode_loss(m, method, ep, {});
        ad::backward(loss.loss);
        benchmark::DoNotOptimize(loss.loss.item());
    }
    state.SetLabel(method_name(method));
}
BENCHMARK(BM_EpisodeLossBackward)
    ->Arg(static_cast<int>(Method::baseline))
    ->Arg(static_cast<int>(Method::sct))
    ->Arg(static_cast<int>(Method::mct))
    ->Unit(benchmark::kMillisecond);

void BM_FamilyRegressionStep(benchmark::State& state) {
    ModelConfig c;
    c.regression = true;
    c.num_concepts = 4;
    const ModelParams m(c, 4);
    const auto ep = sample_family_task(10, 9).episode;
    for (auto _ : state) {
        m.zero_grad();
        const auto loss = episode_loss(m, Method::sct, ep, {});
        ad::backward(loss.loss);
        benchmark::DoNotOptimize(loss.loss.item());
    }
}
BENCHMARK(BM_FamilyRegressionStep)->Unit(benchmark::kMicrosecond);

void BM_CheckpointRoundTrip(benchmark::State& state) {
    const ModelParams m(glyph_model(2, kGlyphVocab), 5);
    const auto path = (std::filesystem::temp_directory_path() / "ctxmeta_bench.ckpt").string();
    for (auto _ : state) {
        save_checkpoint(path, m);
        benchmark::DoNotOptimize(load_checkpoint(path).parameter_count());
    }
    std::filesystem::remove(path);
}
BENCHMARK(BM_CheckpointRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
