#include "ctxmeta/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "ctxmeta/error.hpp"

namespace ctxmeta {

namespace {

struct Range {
    double lo;
    double hi;
};

// Coefficient ranges per family, in coefficient order.
const std::vector<Range>& ranges(Family f) {
    static const std::vector<Range> sinusoid{{0.1, 5.0}, {0.8, 1.2}, {0.0, 2.0 * std::numbers::pi}};
    static const std::vector<Range> linear{{-3.0, 3.0}, {-3.0, 3.0}};
    static const std::vector<Range> quadratic{{-0.2, 0.2}, {-2.0, 2.0}, {-3.0, 3.0}};
    static const std::vector<Range> cubic{{-0.1, 0.1}, {-0.2, 0.2}, {-2.0, 2.0}, {-3.0, 3.0}};
    static const std::vector<Range> none{};
    switch (f) {
        case Family::sinusoid: return sinusoid;
        case Family::linear: return linear;
        case Family::quadratic: return quadratic;
        case Family::cubic: return cubic;
        case Family::mixture_component: return none;
    }
    return none;
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

/// k distinct values out of 0..n-1 in random order.
std::vector<std::size_t> choose(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(k);
    return all;
}

Rgb jitter_color(const Rgb& base, double noise_std, Rng& rng) {
    if (noise_std <= 0.0) return base;
    std::normal_distribution<double> noise(0.0, noise_std);
    Rgb out = base;
    for (auto& v : out) v = std::clamp(v + noise(rng), 0.0, 1.0);
    return out;
}

}  // namespace

double CurveSpec::operator()(double x) const {
    const auto& k = coefficients;
    switch (family) {
        case Family::sinusoid: return k[0] * std::sin(k[1] * x) + k[2];
        case Family::linear: return k[0] * x + k[1];
        case Family::quadratic: return k[0] * x * x + k[1] * x + k[2];
        case Family::cubic: return k[0] * x * x * x + k[1] * x * x + k[2] * x + k[3];
        case Family::mixture_component: return confusing_curve(concept_id, x);
    }
    return 0.0;
}

double confusing_curve(std::size_t concept_id, double x) {
    switch (concept_id) {
        case 0: return -0.4 * x + 0.9 * std::sin(2.0 * x);
        case 1: return -3.0 * std::sin(2.0 * x + 1.7);
        case 2: return -0.1 * x + 0.9 * std::sin(2.0 * x + 2.5);
        default: throw IndexError("confusing curve index must be 0, 1 or 2");
    }
}

std::vector<ConfusingPoint> sample_confusing_batch(std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ContractError("sample_confusing_batch: n must be positive");
    Rng rng(seed);
    std::vector<ConfusingPoint> out(n);
    for (auto& p : out) {
        p.x = uniform(rng, kInputLow, kInputHigh);
        p.concept_id = pick(rng, kConfusingCurves);
        p.y = confusing_curve(p.concept_id, p.x);
    }
    return out;
}

std::vector<ConfusingPoint> sample_confusing_seed_set(std::size_t per_curve, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ConfusingPoint> out;
    const double cell = (kInputHigh - kInputLow) / static_cast<double>(std::max<std::size_t>(per_curve, 1));
    for (std::size_t c = 0; c < kConfusingCurves; ++c)
        for (std::size_t i = 0; i < per_curve; ++i) {
            const double x = kInputLow + cell * (static_cast<double>(i) + uniform(rng, 0.0, 1.0));
            out.push_back({x, confusing_curve(c, x), c});
        }
    return out;
}

std::string family_name(Family f) {
    switch (f) {
        case Family::sinusoid: return "sinusoid";
        case Family::linear: return "linear";
        case Family::quadratic: return "quadratic";
        case Family::cubic: return "cubic";
        case Family::mixture_component: return "mixture_component";
    }
    return "unknown";
}

CurveSpec sample_curve(Family family, Rng& rng) {
    if (family == Family::mixture_component) {
        return {family, {}, pick(rng, kConfusingCurves)};
    }
    CurveSpec spec{family, {}, static_cast<std::size_t>(family)};
    for (const auto& r : ranges(family)) spec.coefficients.push_back(uniform(rng, r.lo, r.hi));
    return spec;
}

CurveSpec sample_curve(Rng& rng) { return sample_curve(static_cast<Family>(pick(rng, 4)), rng); }

bool within_ranges(const CurveSpec& spec) {
    const auto& r = ranges(spec.family);
    if (spec.coefficients.size() != r.size()) return false;
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (spec.coefficients[i] < r[i].lo || spec.coefficients[i] > r[i].hi) return false;
    }
    return true;
}

LabeledEpisode curve_episode(const CurveSpec& spec, std::size_t shots, std::size_t query_size, std::uint64_t seed) {
    if (shots + query_size == 0) throw ContractError("curve_episode: empty episode");
    Rng rng(seed);
    std::set<double> seen;
    std::vector<double> xs;
    while (xs.size() < shots + query_size) {
        const double x = uniform(rng, kInputLow, kInputHigh);
        if (seen.insert(x).second) xs.push_back(x);
    }
    LabeledEpisode out;
    auto& ep = out.episode;
    ep.kind = TaskKind::regression;
    ep.ways = 1;
    ep.shots = shots;
    ep.label_vocab = 1;
    ep.seed = seed;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        Instance inst{{xs[i]}, 0, spec(xs[i])};
        (i < shots ? ep.support : ep.query).push_back(std::move(inst));
    }
    out.truth.task_concept = spec.concept_id;
    out.truth.support_concepts.assign(shots, spec.concept_id);
    out.truth.query_concepts.assign(query_size, spec.concept_id);
    return out;
}

LabeledEpisode sample_family_task(std::size_t shots, std::uint64_t seed, std::size_t query_size) {
    Rng rng(derive_seed(seed, 0));
    const auto spec = sample_curve(rng);
    return curve_episode(spec, shots, query_size, derive_seed(seed, 1));
}

// ---- glyphs -------------------------------------------------------------------

ImageLayout glyph_layout() { return {3, kGlyphSide, kGlyphSide}; }

std::vector<double> glyph_mask(std::size_t shape_id) {
    if (shape_id >= kGlyphShapes) throw IndexError("glyph shape id out of range");
    constexpr int n = static_cast<int>(kGlyphSide);
    std::vector<double> m(kGlyphSide * kGlyphSide, 0.0);
    auto set = [&](int r, int c) {
        if (r >= 0 && r < n && c >= 0 && c < n) m[r * n + c] = 1.0;
    };
    for (int r = 3; r <= 12; ++r)
        for (int c = 3; c <= 12; ++c) {
            const double y = r - 7.5, x = c - 7.5;
            bool on = false;
            switch (shape_id) {
                case 0: on = r == 7 || r == 8; break;                                    // horizontal bar
                case 1: on = c == 7 || c == 8; break;                                    // vertical bar
                case 2: on = r == 7 || r == 8 || c == 7 || c == 8; break;                // plus
                case 3: on = r == c || r + c == 15; break;                               // X
                case 4: on = std::abs(std::hypot(x, y) - 4.0) < 0.8; break;              // ring
                case 5: on = r >= 5 && r <= 10 && c >= 5 && c <= 10; break;              // block
                case 6: on = std::abs(x) <= (r - 3) * 0.5; break;                        // triangle
                case 7: on = c <= 4 || r >= 11; break;                                   // L
                case 8: on = r <= 4 || c == 7 || c == 8; break;                          // T
                case 9: on = r <= 4 || r >= 11 || c <= 4 || c >= 11; break;              // frame
            }
            if (on) set(r, c);
        }
    return m;
}

namespace {

std::vector<double> paint(const std::vector<double>& mask, const Rgb& color, int dx, int dy) {
    constexpr int n = static_cast<int>(kGlyphSide);
    std::vector<double> out(3 * kGlyphSide * kGlyphSide, 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const int sr = r - dy, sc = c - dx;
            if (sr < 0 || sr >= n || sc < 0 || sc >= n || mask[sr * n + sc] == 0.0) continue;
            for (int ch = 0; ch < 3; ++ch) out[(ch * n + r) * n + c] = color[ch];
        }
    return out;
}

}  // namespace

std::vector<double> render_glyph(std::size_t shape_id, const Rgb& color, int dx, int dy) {
    return paint(glyph_mask(shape_id), color, dx, dy);
}

const std::array<Rgb, kGlyphColors>& glyph_palette() {
    static const std::array<Rgb, kGlyphColors> palette{{
        {1.0, 0.1, 0.1},
        {0.1, 0.9, 0.1},
        {0.15, 0.3, 1.0},
        {1.0, 0.9, 0.1},
        {0.9, 0.2, 0.9},
        {0.1, 0.9, 0.9},
    }};
    return palette;
}

Rgb candidate_color(std::uint64_t palette_seed, Palette palette, std::size_t shape_class, std::size_t candidate) {
    if (shape_class >= kGlyphShapes || candidate >= kCandidateColors) throw IndexError("candidate color out of range");
    const std::uint64_t key = (palette == Palette::base ? 0 : 1) * 1000 + shape_class * kCandidateColors + candidate;
    Rng rng(derive_seed(palette_seed, key));
    const double lo = palette == Palette::base ? 0.0 : 0.5;
    Rgb out{};
    for (auto& v : out) v = uniform(rng, lo, lo + 0.5);
    return out;
}

void validate(const GlyphEpisodeConfig& config) {
    std::vector<std::string> problems;
    const bool ood = config.mode == GlyphMode::ood;
    if (ood && config.plan == DrawPlan::none) problems.push_back("plan: OOD episodes need draw_class or draw_task");
    if (!ood && config.plan != DrawPlan::none) problems.push_back("plan: drawing plans only apply to OOD episodes");
    if (config.ways < 2) problems.push_back("ways: must be at least 2");
    if (config.shots < 1) problems.push_back("shots: must be at least 1");
    if (config.noise_std < 0.0) problems.push_back("noise_std: must be non-negative");
    if (!(config.pixel_flip >= 0.0 && config.pixel_flip <= 0.5)) problems.push_back("pixel_flip: must lie in [0, 0.5]");
    std::size_t limit = kGlyphShapes;
    if (config.mode == GlyphMode::sct_attr) {
        limit = config.force_concept == kShapeConcept ? kGlyphShapes : kGlyphColors;
        if (config.force_concept && *config.force_concept > kColorConcept) problems.push_back("force_concept: 0 or 1");
    }
    if (config.ways > limit) {
        problems.push_back("ways: at most " + std::to_string(limit) + " classes available for this mode");
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

std::vector<double> render(const GlyphSpec& spec, Rng& rng) {
    const int dx = static_cast<int>(pick(rng, 3)) - 1;
    const int dy = static_cast<int>(pick(rng, 3)) - 1;
    auto mask = glyph_mask(spec.shape_id);
    if (spec.pixel_flip > 0.0) {
        std::bernoulli_distribution flip(spec.pixel_flip);
        for (auto& v : mask)
            if (flip(rng)) v = 1.0 - v;
    }
    return paint(mask, jitter_color(spec.color_rgb, spec.noise_std, rng), dx, dy);
}

LabeledEpisode sample_glyph_episode(const GlyphEpisodeConfig& config, std::uint64_t seed) {
    validate(config);
    Rng rng(seed);
    const auto N = config.ways;
    const auto& palette = glyph_palette();

    LabeledEpisode out;
    auto& ep = out.episode;
    ep.kind = TaskKind::classification;
    ep.ways = N;
    ep.shots = config.shots;
    ep.image = glyph_layout();
    ep.seed = seed;
    ep.label_vocab = N;

    // Per-class description: how to draw one instance of local class n.
    std::vector<std::size_t> class_value(N);
    std::vector<std::size_t> class_concept(N, kShapeConcept);
    std::vector<std::size_t> free_shapes, free_colors;
    std::vector<std::size_t> task_candidate(N, 0);

    switch (config.mode) {
        case GlyphMode::sct_attr: {
            const auto concept_id = config.force_concept ? *config.force_concept : pick(rng, 2);
            class_value = choose(rng, concept_id == kShapeConcept ? kGlyphShapes : kGlyphColors, N);
            class_concept.assign(N, concept_id);
            out.truth.task_concept = concept_id;
            break;
        }
        case GlyphMode::mct_mixed: {
            // Redraw until both attributes keep at least one value that is not an episode class,
            // so that no instance carries two episode labels.
            std::vector<std::size_t> labels;
            for (;;) {
                labels = choose(rng, kGlyphVocab, N);
                const auto shapes = std::count_if(labels.begin(), labels.end(), [](auto g) { return g < kGlyphShapes; });
                const auto colors = static_cast<std::ptrdiff_t>(N) - shapes;
                if (shapes < static_cast<std::ptrdiff_t>(kGlyphShapes) &&
                    colors < static_cast<std::ptrdiff_t>(kGlyphColors))
                    break;
            }
            ep.class_ids = labels;
            ep.label_vocab = kGlyphVocab;
            std::vector<bool> shape_used(kGlyphShapes, false), color_used(kGlyphColors, false);
            for (std::size_t n = 0; n < N; ++n) {
                if (labels[n] < kGlyphShapes) {
                    class_value[n] = labels[n];
                    shape_used[labels[n]] = true;
                } else {
                    class_value[n] = labels[n] - kGlyphShapes;
                    class_concept[n] = kColorConcept;
                    color_used[class_value[n]] = true;
                }
            }
            for (std::size_t s = 0; s < kGlyphShapes; ++s)
                if (!shape_used[s]) free_shapes.push_back(s);
            for (std::size_t c = 0; c < kGlyphColors; ++c)
                if (!color_used[c]) free_colors.push_back(c);
            break;
        }
        case GlyphMode::ood: {
            class_value = choose(rng, kGlyphShapes, N);
            for (auto& c : task_candidate) c = pick(rng, kCandidateColors);
            break;
        }
    }

    auto draw = [&](std::size_t n) {
        GlyphSpec spec;
        spec.draw_plan = config.plan;
        spec.noise_std = config.noise_std;
        spec.pixel_flip = config.pixel_flip;
        const bool shape_class = class_concept[n] == kShapeConcept;
        if (config.mode == GlyphMode::ood) {
            spec.shape_id = class_value[n];
            spec.color_id = config.plan == DrawPlan::draw_task ? task_candidate[n] : pick(rng, kCandidateColors);
            spec.color_rgb = candidate_color(config.palette_seed, config.palette, spec.shape_id, spec.color_id);
        } else if (config.mode == GlyphMode::mct_mixed) {
            spec.shape_id = shape_class ? class_value[n] : free_shapes[pick(rng, free_shapes.size())];
            spec.color_id = shape_class ? free_colors[pick(rng, free_colors.size())] : class_value[n];
            spec.color_rgb = palette[spec.color_id];
        } else {
            spec.shape_id = shape_class ? class_value[n] : pick(rng, kGlyphShapes);
            spec.color_id = shape_class ? pick(rng, kGlyphColors) : class_value[n];
            spec.color_rgb = palette[spec.color_id];
        }
        return spec;
    };
    auto emit = [&](std::size_t n, std::vector<Instance>& set, std::vector<std::size_t>& concepts,
                    std::vector<std::vector<std::size_t>>& attributes) {
        const auto spec = draw(n);
        set.push_back({render(spec, rng), n, 0.0});
        concepts.push_back(class_concept[n]);
        attributes.push_back({spec.shape_id, spec.color_id});
    };
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < config.shots; ++k)
            emit(n, ep.support, out.truth.support_concepts, out.truth.support_attributes);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < config.queries_per_class; ++k)
            emit(n, ep.query, out.truth.query_concepts, out.truth.query_attributes);
    return out;
}

std::vector<GlyphSpec> sample_glyph_specs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GlyphSpec> out(n);
    for (auto& spec : out) {
        spec.shape_id = pick(rng, kGlyphShapes);
        spec.color_id = pick(rng, kGlyphColors);
        spec.color_rgb = glyph_palette()[spec.color_id];
    }
    return out;
}

void export_jsonl(std::ostream& out, const LabeledEpisode& lep, std::size_t episode_id) {
    const auto& ep = lep.episode;
    auto write = [&](const std::vector<Instance>& set, const std::vector<std::size_t>& concepts, const char* split) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            nlohmann::ordered_json rec;
            rec["episode"] = episode_id;
            rec["split"] = split;
            rec["features"] = set[i].features;
            rec["label"] = ep.kind == TaskKind::classification ? global_label(ep, set[i].label) : 0;
            rec["target"] = set[i].target;
            if (i < concepts.size()) {
                rec["concept"] = concepts[i];
            } else if (lep.truth.task_concept) {
                rec["concept"] = *lep.truth.task_concept;
            } else {
                rec["concept"] = nullptr;
            }
            out << rec.dump() << '\n';
        }
    };
    write(ep.support, lep.truth.support_concepts, "support");
    write(ep.query, lep.truth.query_concepts, "query");
}

}  // namespace ctxmeta
