#include "ctxmeta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "ctxmeta/error.hpp"

namespace ctxmeta {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'M', 'C', 'K', 'P', 'T'};
constexpr const char* kModelKind = "concept-model";
constexpr const char* kFlatKind = "flat-classifier";

using NamedValues = std::vector<std::pair<std::string, std::pair<std::vector<std::size_t>, std::vector<double>>>>;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<unsigned char>& buffer() { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class Reader {
public:
    Reader(const std::vector<unsigned char>& buf, std::size_t end) : buf_(buf), end_(end) {}

    void need(std::size_t n) const {
        if (pos_ + n > end_) throw CorruptionError("checkpoint is truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == end_; }

private:
    const std::vector<unsigned char>& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

struct Parsed {
    std::string kind;
    nlohmann::json config;
    NamedValues entries;
};

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

nlohmann::json model_config_json(const ModelConfig& c) {
    return {{"input_dim", c.input_dim},
            {"phi_hidden", c.phi_hidden},
            {"embed_dim", c.embed_dim},
            {"concept_dim", c.concept_dim},
            {"num_concepts", c.num_concepts},
            {"regression", c.regression},
            {"label_dim", c.label_dim},
            {"identity_backbone", c.identity_backbone},
            {"concept_map_noise", c.concept_map_noise},
            {"prototype_decay", c.prototype_decay},
            {"logit_scale", c.logit_scale}};
}

ModelConfig model_config_from(const nlohmann::json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.phi_hidden = j.at("phi_hidden").get<std::vector<std::size_t>>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.concept_dim = j.at("concept_dim").get<std::size_t>();
    c.num_concepts = j.at("num_concepts").get<std::size_t>();
    c.regression = j.at("regression").get<bool>();
    c.label_dim = j.at("label_dim").get<std::size_t>();
    c.identity_backbone = j.at("identity_backbone").get<bool>();
    c.concept_map_noise = j.at("concept_map_noise").get<double>();
    c.prototype_decay = j.at("prototype_decay").get<double>();
    c.logit_scale = j.at("logit_scale").get<double>();
    return c;
}

void write_file(const std::string& path, const std::string& kind, const nlohmann::json& config,
                const NamedValues& entries) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.str(kind);
    w.str(config.dump());
    w.u64(entries.size());
    for (const auto& [name, value] : entries) {
        const auto& [shape, data] = value;
        w.str(name);
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) w.u64(d);
        for (double v : data) w.f64(v);
    }
    auto& buf = w.buffer();
    w.u32(crc32_of(buf.data(), buf.size()));

    const std::filesystem::path target(path);
    const auto tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + path);
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!out) {
            std::filesystem::remove(tmp);
            throw IoError("failed writing checkpoint " + path);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
    }
}

Parsed read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);
    const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof kMagic || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        throw FormatError(path + " is not a checkpoint (bad magic)");
    }
    if (buf.size() < sizeof kMagic + 4) throw CorruptionError("checkpoint is truncated");
    Reader header(buf, buf.size());
    header.u64();  // magic
    const auto version = header.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    if (buf.size() < sizeof kMagic + 8) throw CorruptionError("checkpoint is truncated");
    const auto body = buf.size() - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(buf[body + static_cast<std::size_t>(i)]) << (8 * i);
    if (stored != crc32_of(buf.data(), body)) throw CorruptionError("checkpoint checksum mismatch (" + path + ")");

    Reader r(buf, body);
    r.u64();  // magic
    r.u32();  // version
    Parsed out;
    out.kind = r.str();
    try {
        out.config = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config record: ") + e.what());
    }
    const auto count = r.u64();
    for (std::uint64_t k = 0; k < count; ++k) {
        auto name = r.str();
        const auto rank = r.u32();
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.u64());
            n *= d;
        }
        r.need(8 * n);
        std::vector<double> data(n);
        for (auto& v : data) v = r.f64();
        out.entries.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    if (!r.done()) throw FormatError("checkpoint has trailing bytes before the checksum");
    return out;
}

void copy_into(const NamedValues& entries, const std::vector<std::pair<std::string, Tensor>>& params) {
    std::map<std::string, const std::pair<std::vector<std::size_t>, std::vector<double>>*> by_name;
    for (const auto& [name, value] : entries) by_name[name] = &value;
    for (const auto& [name, t] : params) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointMismatchError("checkpoint has no parameter " + name);
        const auto& [shape, data] = *it->second;
        if (shape != t.shape()) {
            throw CheckpointMismatchError("parameter " + name + ": checkpoint shape " + ad::shape_str(shape) +
                                          ", model shape " + ad::shape_str(t.shape()));
        }
        Tensor target = t;
        auto dst = target.mutable_data();
        std::copy(data.begin(), data.end(), dst.begin());
    }
}

NamedValues values_of(const std::vector<std::pair<std::string, Tensor>>& params) {
    NamedValues out;
    for (const auto& [name, t] : params) {
        out.emplace_back(name, std::make_pair(t.shape(), std::vector<double>(t.data().begin(), t.data().end())));
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> flat_named(const FlatClassifier& f) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < f.phi.layers.size(); ++i) {
        out.emplace_back("phi." + std::to_string(i) + ".weight", f.phi.layers[i].weight);
        out.emplace_back("phi." + std::to_string(i) + ".bias", f.phi.layers[i].bias);
    }
    out.emplace_back("head.weight", f.head.weight);
    out.emplace_back("head.bias", f.head.bias);
    return out;
}

void require_kind(const Parsed& p, const char* kind) {
    if (p.kind != kind) throw FormatError("checkpoint holds a " + p.kind + ", expected a " + kind);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& m, const std::string& config_hash) {
    auto config = model_config_json(m.config);
    config["config_hash"] = config_hash;
    config["prototypes"] = {{"num_concepts", m.prototypes.num_concepts},
                            {"vocab", m.prototypes.vocab},
                            {"dim", m.prototypes.dim}};
    auto entries = values_of(m.named_parameters());
    entries.emplace_back("prototypes.sums", std::make_pair(std::vector<std::size_t>{m.prototypes.sums.size()},
                                                           m.prototypes.sums));
    entries.emplace_back("prototypes.weights", std::make_pair(std::vector<std::size_t>{m.prototypes.weights.size()},
                                                              m.prototypes.weights));
    write_file(path, kModelKind, config, entries);
}

void save_checkpoint(const std::string& path, const FlatClassifier& f, const std::string& config_hash) {
    std::vector<std::size_t> hidden;
    for (std::size_t i = 0; i + 1 < f.phi.layers.size(); ++i) hidden.push_back(f.phi.layers[i].out());
    const nlohmann::json config{{"input_dim", f.phi.layers.front().in()},
                                {"hidden", hidden},
                                {"embed_dim", f.phi.layers.back().out()},
                                {"classes", f.head.out()},
                                {"config_hash", config_hash}};
    write_file(path, kFlatKind, config, values_of(flat_named(f)));
}

std::string checkpoint_kind(const std::string& path) { return read_file(path).kind; }

std::string checkpoint_config_hash(const std::string& path) {
    return read_file(path).config.value("config_hash", std::string{});
}

ModelParams load_checkpoint(const std::string& path) {
    const auto parsed = read_file(path);
    require_kind(parsed, kModelKind);
    ModelConfig config;
    try {
        config = model_config_from(parsed.config);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config record: ") + e.what());
    }
    ModelParams m(config, 0);
    copy_into(parsed.entries, m.named_parameters());
    const auto& proto = parsed.config.at("prototypes");
    m.prototypes.num_concepts = proto.at("num_concepts").get<std::size_t>();
    m.prototypes.vocab = proto.at("vocab").get<std::size_t>();
    m.prototypes.dim = proto.at("dim").get<std::size_t>();
    for (const auto& [name, value] : parsed.entries) {
        if (name == "prototypes.sums") m.prototypes.sums = value.second;
        if (name == "prototypes.weights") m.prototypes.weights = value.second;
    }
    if (m.prototypes.sums.size() != m.prototypes.num_concepts * m.prototypes.vocab * m.prototypes.dim ||
        m.prototypes.weights.size() != m.prototypes.num_concepts * m.prototypes.vocab) {
        throw FormatError("checkpoint prototype bank does not match its recorded dimensions");
    }
    return m;
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected) {
    auto m = load_checkpoint(path);
    const auto& got = m.config;
    auto check = [](const char* field, auto stored, auto wanted) {
        if (stored != wanted) {
            throw CheckpointMismatchError(std::string(field) + ": checkpoint has " + std::to_string(stored) +
                                          ", configuration expects " + std::to_string(wanted));
        }
    };
    check("input_dim", got.input_dim, expected.input_dim);
    check("num_concepts", got.num_concepts, expected.num_concepts);
    check("embed_dim", got.embed_dim, expected.embed_dim);
    check("concept_dim", got.concept_dim, expected.concept_dim);
    check("label_dim", got.label_dim, expected.label_dim);
    check("hidden layers", got.phi_hidden.size(), expected.phi_hidden.size());
    for (std::size_t i = 0; i < got.phi_hidden.size(); ++i) check("hidden width", got.phi_hidden[i], expected.phi_hidden[i]);
    if (got.regression != expected.regression) {
        throw CheckpointMismatchError(std::string("regression: checkpoint is a ") +
                                      (got.regression ? "regression" : "classification") + " model");
    }
    return m;
}

FlatClassifier load_flat_checkpoint(const std::string& path) {
    const auto parsed = read_file(path);
    require_kind(parsed, kFlatKind);
    const auto& c = parsed.config;
    FlatClassifier f(c.at("input_dim").get<std::size_t>(), c.at("hidden").get<std::vector<std::size_t>>(),
                     c.at("embed_dim").get<std::size_t>(), c.at("classes").get<std::size_t>(), 0);
    copy_into(parsed.entries, flat_named(f));
    return f;
}

}  // namespace ctxmeta
