#pragma once

// Landmark detector for the procedural face family. Eyes, nose and mouth are
// found by normalized cross-correlation against templates averaged from clean
// renders; the chin is the first background row below the mouth. Success needs
// every score above threshold and a plausible face layout.

#include "rbtn/data.hpp"
#include "rbtn/image.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rbtn {

struct DetectionThresholds {
    double eye = 0.5;
    double nose = 0.3;
    double mouth = 0.5;
};

struct DetectionResult {
    bool success = false;
    std::optional<Point> eye_left, eye_right, nose, mouth, chin;
    double eye_left_score = 0.0, eye_right_score = 0.0, nose_score = 0.0, mouth_score = 0.0;
    std::string failure;  // first failed check, empty on success
};

class StructureDetector {
public:
    explicit StructureDetector(int image_size, DetectionThresholds thresholds = {});

    int image_size() const { return size_; }
    const DetectionThresholds& thresholds() const { return thresholds_; }

    template <typename T>
    DetectionResult detect(const Image<T>& face) const;

    struct Template {
        Matrix<double> values;  // zero mean, unit norm
        int cx = 0, cy = 0;     // anchor offset inside the template
    };

private:
    int size_;
    DetectionThresholds thresholds_;
    std::vector<Template> eyes_;
    Template nose_, mouth_;
};

// Uses a shared detector per image size with default thresholds.
template <typename T>
DetectionResult detect_structure(const Image<T>& face);

// successes / total; throws UsageError on an empty list.
double frr(std::span<const DetectionResult> results);

} // namespace rbtn
