#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxmeta {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes of operands do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// An input sits on a singularity of the operation (e.g. a zero-norm vector under cosine).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// A caller violated an API precondition that is not about shapes.
class ContractError : public Error {
public:
    using Error::Error;
};

/// An episode lacks the structure an operation needs (too few classes, missing label, ...).
class EpisodeStructureError : public Error {
public:
    using Error::Error;
};

/// Operation called in the wrong model mode (regression vs classification).
class ModeError : public Error {
public:
    using Error::Error;
};

class UnsupportedSizeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Configuration failed validation. Carries one message per offending field.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
    static std::string join(const std::vector<std::string>& items) {
        std::string out = "invalid configuration:";
        for (const auto& item : items) out += "\n  " + item;
        return out;
    }

    std::vector<std::string> problems_;
};

/// The training loss became NaN or infinite.
class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(std::uint64_t episode_seed, std::size_t episode_index)
        : Error("non-finite loss at episode " + std::to_string(episode_index) +
                " (episode seed " + std::to_string(episode_seed) + ")"),
          episode_seed_(episode_seed) {}

    std::uint64_t episode_seed() const noexcept { return episode_seed_; }

private:
    std::uint64_t episode_seed_;
};

/// Checkpoint is not a checkpoint (bad magic) or cannot be parsed.
class FormatError : public Error {
public:
    using Error::Error;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Checksum mismatch or truncated payload.
class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

/// A checkpoint was produced for a model whose dimensions differ from the requested one.
class CheckpointMismatchError : public Error {
public:
    using Error::Error;
};

}  // namespace ctxmeta
