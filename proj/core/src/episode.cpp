#include "ctxmeta/episode.hpp"

#include <bit>
#include <map>
#include <string>

#include "ctxmeta/error.hpp"
#include "ctxmeta/random.hpp"

namespace ctxmeta {

std::uint64_t content_hash(std::span<const double> values) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        h ^= std::bit_cast<std::uint64_t>(v);
        h *= 0x100000001b3ULL;
        h = mix64(h);
    }
    return h;
}

void validate_episode(const Episode& ep) {
    if (ep.kind != TaskKind::classification) {
        if (ep.support.empty()) throw EpisodeStructureError("regression episode has an empty support set");
        return;
    }
    if (ep.ways == 0 || ep.shots == 0) throw EpisodeStructureError("episode needs N >= 1 and K >= 1");
    if (ep.support.size() != ep.ways * ep.shots) {
        throw EpisodeStructureError("support holds " + std::to_string(ep.support.size()) + " instances, expected " +
                                    std::to_string(ep.ways) + " x " + std::to_string(ep.shots));
    }
    std::map<std::size_t, std::size_t> counts;
    for (const auto& inst : ep.support) {
        if (inst.label >= ep.ways) throw EpisodeStructureError("support label outside [0, N)");
        ++counts[inst.label];
    }
    for (const auto& [label, count] : counts) {
        if (count != ep.shots) {
            throw EpisodeStructureError("class " + std::to_string(label) + " has " + std::to_string(count) +
                                        " support instances, expected " + std::to_string(ep.shots));
        }
    }
    if (counts.size() != ep.ways) throw EpisodeStructureError("support does not cover all N classes");
    for (const auto& inst : ep.query) {
        if (!counts.contains(inst.label)) {
            throw EpisodeStructureError("query label " + std::to_string(inst.label) + " absent from support");
        }
    }
    if (!ep.class_ids.empty() && ep.class_ids.size() != ep.ways) {
        throw EpisodeStructureError("class_ids must list one global id per class");
    }
}

ad::Tensor feature_matrix(std::span<const Instance> instances) {
    if (instances.empty()) throw DimensionError("feature_matrix: no instances");
    const auto dim = instances.front().features.size();
    std::vector<double> data;
    data.reserve(instances.size() * dim);
    for (const auto& inst : instances) {
        if (inst.features.size() != dim) throw DimensionError("feature_matrix: ragged feature vectors");
        data.insert(data.end(), inst.features.begin(), inst.features.end());
    }
    return ad::Tensor::from({instances.size(), dim}, std::move(data));
}

ad::Tensor target_column(std::span<const Instance> instances) {
    if (instances.empty()) throw DimensionError("target_column: no instances");
    std::vector<double> data;
    data.reserve(instances.size());
    for (const auto& inst : instances) data.push_back(inst.target);
    return ad::Tensor::from({instances.size(), 1}, std::move(data));
}

std::size_t global_label(const Episode& ep, std::size_t local) {
    if (ep.class_ids.empty()) return local;
    if (local >= ep.class_ids.size()) throw IndexError("local class index out of range");
    return ep.class_ids[local];
}

}  // namespace ctxmeta
