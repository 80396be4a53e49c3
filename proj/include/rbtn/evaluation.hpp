#pragma once

#include "rbtn/data.hpp"
#include "rbtn/detector.hpp"
#include "rbtn/inference.hpp"
#include "rbtn/networks.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace rbtn {

// Entry k-1 holds r^k = x_I^k - x_I^(k-1) summarized over pixels and channels.
struct ResidualCurve {
    std::vector<double> mean_r;
    std::vector<double> mean_abs_r;
    std::size_t length() const { return mean_r.size(); }
};

// Uses consecutive recorded face frames; throws UsageError with fewer than two.
template <typename T>
ResidualCurve residual_stats(const GenerationTrace<T>& trace);

// Pointwise mean of equal-length curves.
ResidualCurve mean_curve(std::span<const ResidualCurve> curves);

// Encoder half of a small convolutional autoencoder. The feature is the
// global average of the bottleneck activations.
class Embedder {
public:
    struct Config {
        int image_size = 64;
        int depth = 3;
        int base_channels = 8;
        int train_faces = 512;
        int epochs = 6;
        int batch_size = 16;
        double learning_rate = 1e-3;
        std::uint64_t seed = 0;
    };

    Embedder() = default;

    static Embedder train(const Config& cfg);
    bool trained() const { return !encoder_.values.empty(); }
    const Config& config() const { return cfg_; }
    int feature_size() const;

    template <typename T>
    Eigen::VectorXd embed(const Image<T>& x) const;

    // Mean squared reconstruction error of the full autoencoder.
    double reconstruction_error(std::span<const Image<double>> images) const;

    void save(const std::filesystem::path& path) const;
    static Embedder load(const std::filesystem::path& path);

    struct Tape;

private:
    FeatureMap<double> encode(const FeatureMap<double>& x, Tape* tape) const;
    FeatureMap<double> decode(const FeatureMap<double>& z, Tape* tape) const;

    Config cfg_;
    ParamSet<double> encoder_;
    ParamSet<double> decoder_;
};

double embedding_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct SimilarityPoint {
    double missing = 0.0;
    double self_mean = 0.0, self_std = 0.0;
    double mutual_mean = 0.0, mutual_std = 0.0;
    int self_pairs = 0, mutual_pairs = 0;
};

struct SimilarityStudy {
    std::vector<SimilarityPoint> points;
    // First missing percentage where mutual - self <= 0, if any.
    std::optional<double> intersection() const;
    void write_csv(std::ostream& out) const;
};

// For each identity, generates faces from eye_left, eye_right and mouth patches
// at each missing percentage. Self distances compare faces of one identity;
// mutual distances compare same-kind faces of different identities.
template <typename T>
SimilarityStudy similarity_diversity_study(const ModelBundle<T>& bundle, std::span<const FaceSpec> identities,
                                           std::span<const double> percentages, const Embedder& embedder,
                                           const GenerationOptions& opts);

inline constexpr std::array<double, 5> kDefaultMissing{0.20, 0.40, 0.60, 0.80, 0.95};

// Anchored single pass: anchoring on, no adversarial adjustment, one F∘f.
GenerationOptions unidirectional_baseline();

struct SweepBucket {
    double missing = 0.0;
    int samples = 0;
    double frr = 0.0;
    double baseline_frr = 0.0;
    ResidualCurve residuals;  // averaged over samples
    std::vector<DetectionResult> detections;
    std::vector<DetectionResult> baseline_detections;
};

struct SweepReport {
    std::vector<SweepBucket> buckets;
    int iterations = 0;

    const SweepBucket& bucket(double missing) const;
    void write_csv(std::ostream& out) const;            // missing,method,frr,samples
    void write_residual_csv(std::ostream& out) const;   // missing,k,mean_r,mean_abs_r
};

struct SweepOptions {
    GenerationOptions generation;
    bool run_baseline = true;
};

// Face-domain centered RECT patches from each test face at each percentage.
template <typename T>
SweepReport run_missing_sweep(const ModelBundle<T>& bundle, std::span<const ImagePair<T>> test_pairs,
                              std::span<const double> percentages, const SweepOptions& opts);

// CSV files plus PNG line plots under dir.
void export_report(const std::filesystem::path& dir, const SweepReport& sweep, const SimilarityStudy* study);

} // namespace rbtn
