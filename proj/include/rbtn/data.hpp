#pragma once

// Procedural paired face/sketch data, dataset manifests on disk, and
// missing-percentage masks.

#include "rbtn/image.hpp"
#include "rbtn/raster.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rbtn {

// Geometry is in normalized image coordinates: (0, 0) is the center of the top
// left pixel's top left corner and (1, 1) the opposite corner.
struct FaceSpec {
    Point face_center{0.5, 0.55};
    double face_ax = 0.30;
    double face_ay = 0.37;
    Rgb skin{0.93, 0.76, 0.62};

    Point hair_center{0.5, 0.4};
    double hair_ax = 0.35;
    double hair_ay = 0.34;
    Rgb hair{0.3, 0.2, 0.1};

    Point eye_left{0.39, 0.46};   // smaller x
    Point eye_right{0.61, 0.46};
    double eye_radius = 0.042;
    Rgb iris{0.25, 0.4, 0.7};

    std::array<Point, 3> nose{Point{0.5, 0.5}, Point{0.52, 0.6}, Point{0.49, 0.62}};

    Point mouth_center{0.5, 0.74};
    double mouth_half_width = 0.09;
    double mouth_curve = 0.015;  // corner lift; positive smiles
    double mouth_thickness = 0.025;
    Rgb lips{0.8, 0.2, 0.25};

    std::uint64_t seed = 0;

    // Throws DataError when a landmark falls outside [0, 1).
    void validate() const;

    Point chin() const { return {face_center.x, face_center.y + face_ay}; }
    std::vector<Point> mouth_polyline() const;
};

enum class Feature { eye_left, eye_right, nose, mouth };
const char* to_string(Feature f);
Feature parse_feature(const std::string& s);

// Landmarks in pixel coordinates of a size x size rendering.
struct Landmarks {
    Point eye_left, eye_right, nose, mouth, chin;
};
Landmarks landmarks(const FaceSpec& spec, int size);

// Pixel-space box [x0, x1] x [y0, y1] a feature occupies.
struct Box {
    double x0, y0, x1, y1;
};
Box feature_box(const FaceSpec& spec, Feature f, int size);

FaceSpec random_face_spec(std::uint64_t seed);
// Small jitter of pose and color around one identity.
FaceSpec render_variant(const FaceSpec& identity, std::uint64_t variant_seed);

template <typename T>
ImagePair<T> synth_pair(const FaceSpec& spec, int size);

struct ManifestEntry {
    std::string id;
    std::string split;                  // "train" or "test"
    std::optional<std::uint64_t> seed;  // absent for ingested pairs
    std::string face_path;    // relative to the dataset root
    std::string sketch_path;
    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;
    int image_size = 0;

    std::vector<ManifestEntry> split(const std::string& name) const;
    bool operator==(const DatasetManifest&) const = default;
};

DatasetManifest make_dataset(int n, int size, std::uint64_t seed, double test_fraction = 0.1);

// Renders every entry into <root>/faces, <root>/sketches and writes manifest.csv.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& root);
DatasetManifest read_manifest(const std::filesystem::path& root);

// Synthetic entries are re-rendered from their seeds; ingested entries are read.
template <typename T>
std::vector<ImagePair<T>> render_pairs(const DatasetManifest& manifest, const std::string& split);

template <typename T>
std::vector<ImagePair<T>> load_pairs(const DatasetManifest& manifest, const std::filesystem::path& root,
                                     const std::string& split);

struct IngestFailure {
    std::string id;
    std::string reason;
};

struct IngestReport {
    DatasetManifest manifest;
    std::vector<IngestFailure> failures;
    bool ok() const { return failures.empty(); }
};

// Pairs <dir>/faces/<id>.png with <dir>/sketches/<id>.png by basename. Every
// pair lands in the train split; failures are itemized rather than thrown.
IngestReport ingest_pairs(const std::filesystem::path& dir);

struct MaskSpec {
    enum class Kind { rect, feature };
    Kind kind = Kind::rect;
    Feature feature = Feature::eye_left;
    double target_missing = 0.5;
    void validate() const;
};

// Kept region is a rectangle of round((1 - target) * size^2) pixels, topped up
// by a partial row or column so the count is exact. RECT is centered; FEATURE
// is centered on the feature box and must contain it.
Mask make_mask(const MaskSpec& spec, const FaceSpec& face, int size);
Mask make_mask(const MaskSpec& spec, int size);

double missing_percentage(const Mask& mask);

} // namespace rbtn
