#pragma once

// Single-file model container: magic, format version, scalar tag, ArchConfig,
// the parameters of f, F and D, and optionally the three Adam states.
// Parameters are stored as raw IEEE bytes so load(save(b)) is bit-exact.

#include "rbtn/networks.hpp"
#include "rbtn/optimizer.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace rbtn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct OptimizerStates {
    AdamState<T> D;
    AdamState<T> f;
    AdamState<T> F;

    bool operator==(const OptimizerStates&) const = default;
};

template <typename T>
OptimizerStates<T> fresh_optimizer_states(const ModelBundle<T>& bundle) {
    return {AdamState<T>(bundle.D.params()), AdamState<T>(bundle.f.params()), AdamState<T>(bundle.F.params())};
}

template <typename T>
struct Checkpoint {
    ModelBundle<T> bundle;
    std::optional<OptimizerStates<T>> optimizer;
    std::int64_t epoch = 0;
};

template <typename T>
std::string serialize_checkpoint(const ModelBundle<T>& bundle, const OptimizerStates<T>* optimizer = nullptr,
                                 std::int64_t epoch = 0);

// Accepts checkpoints saved with either scalar type and converts on load.
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes);

// Writes to a temporary sibling and renames, so a crash never leaves a torn file.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelBundle<T>& bundle,
                     const OptimizerStates<T>* optimizer = nullptr, std::int64_t epoch = 0);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

} // namespace rbtn
