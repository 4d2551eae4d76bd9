#include "ctxmeta/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "ctxmeta/error.hpp"

namespace ctxmeta {

namespace {

namespace pt = boost::property_tree;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Boost's INI reader keeps trailing "; note" text as part of the value.
std::string strip_comment(const std::string& s) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((s[i] == ';' || s[i] == '#') && (i == 0 || s[i - 1] == ' ' || s[i - 1] == '\t')) return trim(s.substr(0, i));
    }
    return trim(s);
}

template <class T>
bool parse_number(const std::string& text, T& out) {
    const auto t = trim(text);
    const auto* end = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(t.data(), end, out);
    return ec == std::errc{} && ptr == end && !t.empty();
}

bool parse_list(const std::string& text, std::vector<std::size_t>& out) {
    out.clear();
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        std::size_t v = 0;
        if (!parse_number(item, v)) return false;
        out.push_back(v);
    }
    return !out.empty();
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string plan_name(DrawPlan p) {
    switch (p) {
        case DrawPlan::none: return "none";
        case DrawPlan::draw_class: return "draw-class";
        case DrawPlan::draw_task: return "draw-task";
    }
    return "none";
}

std::string omega_name(OmegaForm f) { return f == OmegaForm::none ? "none" : "entropy"; }

std::string format_double(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
    return std::string(buf, end);
}

/// Field table shared by the parser and the canonical writer.
struct Field {
    const char* key;
    std::function<bool(ExperimentConfig&, const std::string&)> read;
    std::function<std::string(const ExperimentConfig&)> write;
    const char* expected;
};

template <class T>
Field number(const char* key, T ExperimentConfig::*member, const char* expected) {
    return {key,
            [member](ExperimentConfig& c, const std::string& s) { return parse_number(s, c.*member); },
            [member](const ExperimentConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
                else return std::to_string(c.*member);
            },
            expected};
}

Field list(const char* key, std::vector<std::size_t> ExperimentConfig::*member) {
    return {key, [member](ExperimentConfig& c, const std::string& s) { return parse_list(s, c.*member); },
            [member](const ExperimentConfig& c) { return join(c.*member); }, "a comma-separated list of integers"};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"experiment.method",
         [](ExperimentConfig& c, const std::string& s) {
             try {
                 c.method = parse_method(lower(trim(s)));
                 return true;
             } catch (const ConfigError&) {
                 return false;
             }
         },
         [](const ExperimentConfig& c) { return method_name(c.method); }, "one of baseline, multi, sct, mct, averaged"},
        number("model.concepts", &ExperimentConfig::concepts, "a positive integer"),
        list("model.hidden", &ExperimentConfig::hidden),
        number("model.embed_dim", &ExperimentConfig::embed_dim, "a positive integer"),
        number("model.concept_dim", &ExperimentConfig::concept_dim, "a positive integer"),
        number("model.logit_scale", &ExperimentConfig::logit_scale, "a number"),
        number("task.ways", &ExperimentConfig::ways, "a positive integer"),
        number("task.shots", &ExperimentConfig::shots, "a positive integer"),
        number("task.query_size", &ExperimentConfig::query_size, "a positive integer"),
        list("task.train_shots", &ExperimentConfig::train_shots),
        {"task.plan",
         [](ExperimentConfig& c, const std::string& s) {
             const auto v = lower(trim(s));
             if (v == "none") c.plan = DrawPlan::none;
             else if (v == "draw-class") c.plan = DrawPlan::draw_class;
             else if (v == "draw-task") c.plan = DrawPlan::draw_task;
             else return false;
             return true;
         },
         [](const ExperimentConfig& c) { return plan_name(c.plan); }, "one of none, draw-class, draw-task"},
        number("task.noise_std", &ExperimentConfig::noise_std, "a number"),
        number("task.pixel_flip", &ExperimentConfig::pixel_flip, "a number"),
        number("train.learning_rate", &ExperimentConfig::learning_rate, "a number"),
        number("train.episodes", &ExperimentConfig::episodes, "a positive integer"),
        {"train.omega",
         [](ExperimentConfig& c, const std::string& s) {
             const auto v = lower(trim(s));
             if (v == "none") c.omega = OmegaForm::none;
             else if (v == "entropy") c.omega = OmegaForm::entropy;
             else return false;
             return true;
         },
         [](const ExperimentConfig& c) { return omega_name(c.omega); }, "none or entropy"},
        number("train.lambda", &ExperimentConfig::lambda, "a number"),
        number("train.validate_every", &ExperimentConfig::validate_every, "a non-negative integer"),
        number("train.checkpoint_every", &ExperimentConfig::checkpoint_every, "a non-negative integer"),
        number("train.warmup_steps", &ExperimentConfig::warmup_steps, "a non-negative integer"),
        number("train.anchor_weight", &ExperimentConfig::anchor_weight, "a number"),
        number("train.mixture_width", &ExperimentConfig::mixture_width, "a number"),
        number("eval.trials", &ExperimentConfig::trials, "an integer"),
        number("eval.validation_trials", &ExperimentConfig::validation_trials, "an integer"),
        number("eval.threads", &ExperimentConfig::threads, "a positive integer"),
        {"output.dir",
         [](ExperimentConfig& c, const std::string& s) {
             c.out_dir = trim(s);
             return true;
         },
         [](const ExperimentConfig& c) { return c.out_dir; }, "a path"},
    };
    return table;
}

bool method_allowed(ExperimentKind kind, Method m) {
    switch (kind) {
        case ExperimentKind::confusing_regression:
            return m == Method::mct || m == Method::averaged || m == Method::baseline;
        case ExperimentKind::family_regression: return m != Method::mct;
        case ExperimentKind::glyph_mct: return m == Method::mct || m == Method::baseline;
        case ExperimentKind::glyph_sct:
        case ExperimentKind::glyph_ood: return true;
    }
    return false;
}

bool is_glyph(ExperimentKind kind) {
    return kind == ExperimentKind::glyph_sct || kind == ExperimentKind::glyph_mct || kind == ExperimentKind::glyph_ood;
}

}  // namespace

std::string experiment_name(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::confusing_regression: return "confusing-regression";
        case ExperimentKind::family_regression: return "family-regression";
        case ExperimentKind::glyph_sct: return "glyph-sct";
        case ExperimentKind::glyph_mct: return "glyph-mct";
        case ExperimentKind::glyph_ood: return "glyph-ood";
    }
    return "glyph-sct";
}

ExperimentKind parse_experiment(const std::string& name) {
    for (auto k : {ExperimentKind::confusing_regression, ExperimentKind::family_regression, ExperimentKind::glyph_sct,
                   ExperimentKind::glyph_mct, ExperimentKind::glyph_ood}) {
        if (experiment_name(k) == name) return k;
    }
    throw ConfigError({"experiment.kind: unknown experiment '" + name +
                       "' (expected confusing-regression, family-regression, glyph-sct, glyph-mct or glyph-ood)"});
}

ExperimentConfig defaults_for(ExperimentKind kind) {
    ExperimentConfig c;
    c.kind = kind;
    switch (kind) {
        case ExperimentKind::confusing_regression:
            c.method = Method::mct;
            c.concepts = 3;
            c.hidden = {40, 40};
            c.logit_scale = 1.0;
            c.ways = 1;
            c.query_size = 128;
            c.episodes = 15000;
            c.warmup_steps = 500;
            c.anchor_weight = 3.0;
            c.mixture_width = 0.3;
            c.trials = 201;  // grid points
            c.validation_trials = 51;
            break;
        case ExperimentKind::family_regression:
            c.method = Method::sct;
            c.concepts = 4;
            c.hidden = {40, 40};
            c.logit_scale = 1.0;
            c.ways = 1;
            c.shots = 5;
            c.query_size = 100;
            c.episodes = 10000;
            c.trials = 4000;
            break;
        case ExperimentKind::glyph_sct:
            c.episodes = 10000;
            break;
        case ExperimentKind::glyph_mct:
            c.method = Method::mct;
            c.episodes = 500;
            break;
        case ExperimentKind::glyph_ood:
            c.episodes = 5000;
            c.plan = DrawPlan::draw_class;
            c.noise_std = 0.001;
            c.pixel_flip = 0.15;
            c.trials = 1000;
            break;
    }
    return c;
}

ExperimentConfig parse_config(std::istream& in) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({std::string("syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
    }
    std::vector<std::string> problems;
    const auto kind_text = tree.get_optional<std::string>("experiment.kind");
    const auto seed_text = tree.get_optional<std::string>("experiment.seed");
    ExperimentConfig config;
    if (!kind_text) {
        problems.push_back("experiment.kind: required field is missing");
    } else {
        try {
            config = defaults_for(parse_experiment(lower(strip_comment(*kind_text))));
        } catch (const ConfigError& e) {
            problems.insert(problems.end(), e.problems().begin(), e.problems().end());
        }
    }
    if (!seed_text) problems.push_back("experiment.seed: required field is missing");
    else if (!parse_number(strip_comment(*seed_text), config.seed)) problems.push_back("experiment.seed: expected an unsigned integer");

    std::map<std::string, const Field*> known;
    for (const auto& f : fields()) known[f.key] = &f;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            problems.push_back(section + ": keys must live inside a [section]");
            continue;
        }
        for (const auto& [key, value] : body) {
            const auto name = section + "." + key;
            if (name == "experiment.kind" || name == "experiment.seed") continue;
            const auto it = known.find(name);
            if (it == known.end()) {
                problems.push_back(name + ": unknown field");
                continue;
            }
            const auto text = strip_comment(value.data());
            if (!it->second->read(config, text)) {
                problems.push_back(name + ": expected " + it->second->expected + ", got '" + text + "'");
            }
        }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    validate(config);
    return config;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"config: cannot open " + path});
    return parse_config(in);
}

void validate(const ExperimentConfig& c) {
    std::vector<std::string> p;
    auto need = [&](bool ok, const std::string& message) {
        if (!ok) p.push_back(message);
    };
    need(method_allowed(c.kind, c.method),
         "experiment.method: " + method_name(c.method) + " is not available for " + experiment_name(c.kind));
    need(c.concepts >= 1 && c.concepts <= 6, "model.concepts: must be in [1, 6]");
    if (c.kind == ExperimentKind::glyph_mct && c.method == Method::mct) {
        need(c.concepts >= 2, "model.concepts: glyph-mct needs a space per true concept (at least 2)");
    }
    if (c.kind == ExperimentKind::confusing_regression && c.method != Method::baseline) {
        need(c.concepts >= kConfusingCurves, "model.concepts: confusing-regression needs at least 3 heads");
    }
    need(!c.hidden.empty() && std::all_of(c.hidden.begin(), c.hidden.end(), [](auto w) { return w > 0; }),
         "model.hidden: widths must be positive");
    need(c.embed_dim > 0, "model.embed_dim: must be positive");
    need(c.concept_dim > 0, "model.concept_dim: must be positive");
    need(std::isfinite(c.logit_scale) && c.logit_scale > 0.0, "model.logit_scale: must be positive");
    need(c.query_size > 0, "task.query_size: must be positive");
    need(c.shots > 0, "task.shots: must be positive");
    need(!c.train_shots.empty() && std::all_of(c.train_shots.begin(), c.train_shots.end(), [](auto k) { return k > 0; }),
         "task.train_shots: entries must be positive");
    need(c.noise_std >= 0.0 && std::isfinite(c.noise_std), "task.noise_std: must be non-negative");
    need(c.pixel_flip >= 0.0 && c.pixel_flip <= 0.5, "task.pixel_flip: must be in [0, 0.5]");
    if (c.kind == ExperimentKind::glyph_ood) {
        need(c.plan != DrawPlan::none, "task.plan: glyph-ood needs draw-class or draw-task");
    } else {
        need(c.plan == DrawPlan::none, "task.plan: only glyph-ood uses a draw plan");
    }
    if (is_glyph(c.kind)) {
        need(c.ways >= 2 && c.ways <= kGlyphShapes, "task.ways: must be in [2, " + std::to_string(kGlyphShapes) + "]");
    }
    need(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0, "train.learning_rate: must be non-negative");
    need(c.episodes > 0, "train.episodes: must be positive");
    need(std::isfinite(c.lambda) && c.lambda >= 0.0, "train.lambda: must be non-negative");
    need(std::isfinite(c.anchor_weight) && c.anchor_weight >= 0.0, "train.anchor_weight: must be non-negative");
    need(std::isfinite(c.mixture_width) && c.mixture_width > 0.0, "train.mixture_width: must be positive");
    need(c.warmup_steps == 0 || (c.kind == ExperimentKind::confusing_regression && c.method == Method::mct),
         "train.warmup_steps: only mct confusing-regression has a warm-up");
    need(c.trials >= 2, "eval.trials: must be at least 2");
    need(c.validation_trials >= 2, "eval.validation_trials: must be at least 2");
    need(c.threads >= 1, "eval.threads: must be at least 1");
    need(!c.out_dir.empty(), "output.dir: must not be empty");
    if (!p.empty()) throw ConfigError(std::move(p));
}

std::string to_ini(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "[experiment]\nkind = " << experiment_name(c.kind) << "\nseed = " << c.seed << '\n';
    std::string section = "experiment";
    for (const auto& f : fields()) {
        const std::string key = f.key;
        const auto dot = key.find('.');
        const auto sec = key.substr(0, dot);
        if (sec != section) {
            out << "\n[" << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << f.write(c) << '\n';
    }
    return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
    // FNV-1a over the canonical text; the output directory does not change results.
    auto copy = config;
    copy.out_dir = "";
    const auto text = to_ini(copy);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    return out;
}

}  // namespace ctxmeta
