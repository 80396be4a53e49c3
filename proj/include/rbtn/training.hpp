#pragma once

#include "rbtn/checkpoint.hpp"
#include "rbtn/image.hpp"
#include "rbtn/networks.hpp"
#include "rbtn/optimizer.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rbtn {

struct TrainConfig {
    double lambda = 100.0;
    double adam_alpha = 0.0002;
    double adam_beta1 = 0.5;
    int d_updates_per_gen = 3;
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
    AdamConfig adam() const { return {adam_alpha, adam_beta1, 0.999, 1e-8}; }
};

// Flat "key = value" document, '#' starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& cfg);

template <typename T>
struct RoundTrip {
    Image<T> x_S0;  // f(x_I)
    Image<T> x_I1;  // F(f(x_I))
    Image<T> x_I0;  // F(x_S)
    Image<T> x_S1;  // f(F(x_S))
};

template <typename T>
RoundTrip<T> round_trip(const Image<T>& x_I, const Image<T>& x_S, const ModelBundle<T>& bundle);

enum class FakeKind { I_S0, I1_S0, I0_S, I0_S1 };

const char* to_string(FakeKind k);

// Kinds whose sketch comes from f (the f-update subset) or whose face comes
// from F (the F-update subset).
inline bool in_f_subset(FakeKind k) { return k == FakeKind::I_S0 || k == FakeKind::I0_S1; }
inline bool in_F_subset(FakeKind k) { return k == FakeKind::I0_S || k == FakeKind::I1_S0; }

template <typename T>
struct FakePair {
    Image<T> face;
    Image<T> sketch;
    FakeKind kind;
};

template <typename T>
struct FakePairSet {
    std::vector<FakePair<T>> pairs;  // ordered I_S0, I1_S0, I0_S, I0_S1

    std::vector<const FakePair<T>*> omega_f() const;
    std::vector<const FakePair<T>*> omega_F() const;
};

template <typename T>
FakePairSet<T> fake_pair_set(const Image<T>& x_I, const Image<T>& x_S, const ModelBundle<T>& bundle);

struct DiscriminatorMetrics {
    double loss = 0.0;
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
    int clamped = 0;
};

struct GeneratorObjective {
    double adversarial = 0.0;     // -mean log D over the subset
    double reconstruction = 0.0;  // sum of the two mean |.| terms, without lambda
    double total = 0.0;           // adversarial + lambda * reconstruction
};

// Discriminator objective on one batch and its gradient (accumulated into grads).
template <typename T>
DiscriminatorMetrics discriminator_objective(std::span<const ImagePair<T>> batch, const ModelBundle<T>& bundle,
                                             ParamSet<T>* grads);

// f objective: adversarial term over the f subset + lambda * sum_i mean|x_S - x_S^i|.
template <typename T>
GeneratorObjective generator_objective_f(std::span<const ImagePair<T>> batch, const ModelBundle<T>& bundle,
                                         const TrainConfig& cfg, ParamSet<T>* grads);

// F objective: adversarial term over the F subset + lambda * sum_i mean|x_I - x_I^i|.
template <typename T>
GeneratorObjective generator_objective_F(std::span<const ImagePair<T>> batch, const ModelBundle<T>& bundle,
                                         const TrainConfig& cfg, ParamSet<T>* grads);

// One Adam update of a single network. Throws NumericError and leaves the
// parameters untouched when the objective or its gradient is not finite.
template <typename T>
DiscriminatorMetrics discriminator_step(std::span<const ImagePair<T>> batch, ModelBundle<T>& bundle,
                                        AdamState<T>& opt, const TrainConfig& cfg);

template <typename T>
GeneratorObjective generator_step_f(std::span<const ImagePair<T>> batch, ModelBundle<T>& bundle, AdamState<T>& opt,
                                    const TrainConfig& cfg);

template <typename T>
GeneratorObjective generator_step_F(std::span<const ImagePair<T>> batch, ModelBundle<T>& bundle, AdamState<T>& opt,
                                    const TrainConfig& cfg);

// One record per outer step. l_rec is the f-batch sketch terms plus the F-batch
// face terms; l_adv and the D means come from the last discriminator update.
struct StepRecord {
    long step = 0;
    int epoch = 0;
    double l_rec = 0.0;
    double l_adv = 0.0;
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
    int clamped = 0;
    double wall_seconds = 0.0;

    bool same_values(const StepRecord& o) const;
};

struct TrainHistory {
    std::vector<StepRecord> records;

    // Columns: step,epoch,l_rec,l_adv,d_real_mean,d_fake_mean
    void write_csv(std::ostream& out) const;
    void write_csv(const std::filesystem::path& path) const;
    bool same_values(const TrainHistory& o) const;
};

// Alternating schedule: per outer step, d_updates_per_gen discriminator updates,
// then one f update, then one F update, each on its own batch drawn from a
// seeded shuffle of the dataset.
template <typename T>
class Trainer {
public:
    Trainer(ModelBundle<T> bundle, TrainConfig cfg, std::span<const ImagePair<T>> dataset,
            std::optional<OptimizerStates<T>> optimizer = std::nullopt);

    StepRecord step();
    int steps_per_epoch() const;

    const ModelBundle<T>& bundle() const { return bundle_; }
    const OptimizerStates<T>& optimizer() const { return opt_; }
    const TrainHistory& history() const { return history_; }
    long steps_done() const { return steps_; }

    std::int64_t d_updates() const { return opt_.D.step; }
    std::int64_t f_updates() const { return opt_.f.step; }
    std::int64_t F_updates() const { return opt_.F.step; }

private:
    std::vector<ImagePair<T>> next_batch();

    ModelBundle<T> bundle_;
    TrainConfig cfg_;
    std::span<const ImagePair<T>> data_;
    OptimizerStates<T> opt_;
    TrainHistory history_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    long steps_ = 0;
};

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint;  // rewritten after every epoch
    std::function<void(int epoch, const StepRecord& last)> on_epoch;
};

template <typename T>
struct TrainResult {
    ModelBundle<T> bundle;
    OptimizerStates<T> optimizer;
    TrainHistory history;
};

// Builds fresh models from arch and runs cfg.epochs epochs. Throws DataError on
// an empty dataset and NumericError on a non-finite loss; in the latter case
// the checkpoint file (if any) still holds the last completed epoch.
template <typename T>
TrainResult<T> train(std::span<const ImagePair<T>> dataset, const ArchConfig& arch, const TrainConfig& cfg,
                     const TrainOptions& options = {});

} // namespace rbtn
