#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctxmeta/episode.hpp"
#include "ctxmeta/random.hpp"

namespace ctxmeta {

// ---- regression ---------------------------------------------------------------

inline constexpr double kInputLow = -5.0;
inline constexpr double kInputHigh = 5.0;
inline constexpr std::size_t kConfusingCurves = 3;

enum class Family { sinusoid, linear, quadratic, cubic, mixture_component };

struct CurveSpec {
    Family family = Family::sinusoid;
    /// sinusoid: A, w, b; linear: A, b; quadratic: A, b, c; cubic: A, b, c, d;
    /// mixture_component: none (concept_id picks the curve).
    std::vector<double> coefficients;
    std::size_t concept_id = 0;

    double operator()(double x) const;
};

/// The three fixed curves of the confusing mixture, indexed 0..2.
double confusing_curve(std::size_t concept_id, double x);

struct ConfusingPoint {
    double x = 0.0;
    double y = 0.0;
    std::size_t concept_id = 0;  // evaluation only
};

/// x ~ U[-5, 5], concept uniform over the three curves, y = curve(x).
std::vector<ConfusingPoint> sample_confusing_batch(std::size_t n, std::uint64_t seed);

/// Concept-labeled warm-up points: `per_curve` points per curve, one in each of `per_curve` equal
/// cells of [-5, 5].
std::vector<ConfusingPoint> sample_confusing_seed_set(std::size_t per_curve, std::uint64_t seed);

std::string family_name(Family f);
CurveSpec sample_curve(Family family, Rng& rng);
/// Family uniform over the four random families, then coefficients from their ranges.
CurveSpec sample_curve(Rng& rng);
bool within_ranges(const CurveSpec& spec);

/// Regression episode from a given curve: K support points and `query_size` query points with
/// pairwise distinct x values.
LabeledEpisode curve_episode(const CurveSpec& spec, std::size_t shots, std::size_t query_size, std::uint64_t seed);
LabeledEpisode sample_family_task(std::size_t shots, std::uint64_t seed, std::size_t query_size = 100);

// ---- glyphs -------------------------------------------------------------------

inline constexpr std::size_t kGlyphSide = 16;
inline constexpr std::size_t kGlyphShapes = 10;
inline constexpr std::size_t kGlyphColors = 6;
/// Mixed-concept vocabulary: shapes take global labels 0..9, colors 10..15.
inline constexpr std::size_t kGlyphVocab = kGlyphShapes + kGlyphColors;
inline constexpr std::size_t kCandidateColors = 3;
inline constexpr std::size_t kShapeConcept = 0;
inline constexpr std::size_t kColorConcept = 1;

enum class GlyphMode { sct_attr, mct_mixed, ood };
enum class DrawPlan { none, draw_class, draw_task };
enum class Palette { base, novel };

using Rgb = std::array<double, 3>;

struct GlyphSpec {
    std::size_t shape_id = 0;
    /// Palette color (SCT/MCT) or candidate index (OOD).
    std::size_t color_id = 0;
    Rgb color_rgb{1.0, 1.0, 1.0};
    DrawPlan draw_plan = DrawPlan::none;
    double noise_std = 0.0;
    /// Probability that each template pixel is toggled before coloring.
    double pixel_flip = 0.0;
};

ImageLayout glyph_layout();
/// Binary template of a shape, row-major [16 x 16].
std::vector<double> glyph_mask(std::size_t shape_id);
/// Colored glyph shifted by (dx, dy) pixels, channel-major [3 x 16 x 16].
std::vector<double> render_glyph(std::size_t shape_id, const Rgb& color, int dx = 0, int dy = 0);
const std::array<Rgb, kGlyphColors>& glyph_palette();
/// Candidate color `candidate` of `shape_class` in the given OOD palette. Base colors lie in
/// [0, 0.5]^3 and novel colors in [0.5, 1]^3.
Rgb candidate_color(std::uint64_t palette_seed, Palette palette, std::size_t shape_class, std::size_t candidate);

struct GlyphEpisodeConfig {
    GlyphMode mode = GlyphMode::sct_attr;
    std::size_t ways = 5;
    std::size_t shots = 1;
    std::size_t queries_per_class = 15;
    DrawPlan plan = DrawPlan::none;
    double noise_std = 0.0;
    double pixel_flip = 0.0;
    Palette palette = Palette::base;
    std::uint64_t palette_seed = 0;
    /// SCT only: force the labeling attribute instead of drawing it.
    std::optional<std::size_t> force_concept;
};

/// Throws ConfigError for inconsistent (mode, plan) pairs or too many ways.
void validate(const GlyphEpisodeConfig& config);

/// Attributes of each instance are recorded as {shape, color_id}. Hidden concepts go to the
/// truth record only.
LabeledEpisode sample_glyph_episode(const GlyphEpisodeConfig& config, std::uint64_t seed);

/// Uniform (shape, palette color) glyphs for per-concept evaluation; attributes {shape, color}.
std::vector<GlyphSpec> sample_glyph_specs(std::size_t n, std::uint64_t seed);
std::vector<double> render(const GlyphSpec& spec, Rng& rng);

// ---- export -------------------------------------------------------------------

/// One JSON object per line and instance, fields in this order:
/// episode, split, features, label, target, concept.
void export_jsonl(std::ostream& out, const LabeledEpisode& ep, std::size_t episode_id);

}  // namespace ctxmeta
