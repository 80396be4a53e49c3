#include "rbtn/detector.hpp"

#include "rbtn/error.hpp"
#include "rbtn/seed.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>

namespace rbtn {

namespace {

constexpr int kTemplateFaces = 128;
constexpr std::uint64_t kTemplateSeed = 0x7E3D1A7E;

enum class Channel { luminance, redness };

Matrix<double> channel(const Matrix<double>& rgb, int size, Channel ch) {
    Matrix<double> out(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const auto n = Eigen::Index(y) * size + x;
            const double r = rgb(0, n), g = rgb(1, n), b = rgb(2, n);
            out(y, x) = ch == Channel::luminance ? 0.299 * r + 0.587 * g + 0.114 * b : r - 0.5 * (g + b);
        }
    return out;
}

int scaled(double frac, int size, int lo) { return std::max(lo, int(std::lround(frac * size))); }

bool normalize(Matrix<double>& m) {
    m.array() -= m.mean();
    const double n = m.norm();
    if (n < 1e-9) return false;
    m /= n;
    return true;
}

struct Match {
    double score = -1.0;
    int x = 0, y = 0;
};

// Best NCC of tpl anchored at (x, y) for x in [x0, x1], y in [y0, y1].
Match best_match(const Matrix<double>& img, const StructureDetector::Template& tpl, int x0, int x1, int y0, int y1) {
    const int th = int(tpl.values.rows()), tw = int(tpl.values.cols());
    const int size = int(img.rows());
    Match best;
    x0 = std::max(x0, tpl.cx);
    y0 = std::max(y0, tpl.cy);
    x1 = std::min(x1, size - tw + tpl.cx);
    y1 = std::min(y1, size - th + tpl.cy);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            Matrix<double> win = img.block(y - tpl.cy, x - tpl.cx, th, tw);
            if (!normalize(win)) continue;
            const double s = (win.array() * tpl.values.array()).sum();
            if (s > best.score) best = {s, x, y};
        }
    return best;
}

// Parabolic sub-pixel refinement of a match along both axes.
Point refine(const Matrix<double>& img, const StructureDetector::Template& tpl, const Match& m) {
    auto score_at = [&](int x, int y) { return best_match(img, tpl, x, x, y, y).score; };
    auto offset = [](double l, double c, double r) {
        const double d = l - 2 * c + r;
        return (d < 0 && l > -1 && r > -1) ? std::clamp(0.5 * (l - r) / d, -0.5, 0.5) : 0.0;
    };
    const double c = m.score;
    return {m.x + offset(score_at(m.x - 1, m.y), c, score_at(m.x + 1, m.y)),
            m.y + offset(score_at(m.x, m.y - 1), c, score_at(m.x, m.y + 1))};
}

// Averages normalized crops around anchor(spec) over faces accepted by keep.
StructureDetector::Template build_template(int size, Channel ch, int hx, int hy,
                                           const std::function<Point(const FaceSpec&)>& anchor,
                                           const std::function<bool(const FaceSpec&)>& keep = {}) {
    StructureDetector::Template t;
    t.values = Matrix<double>::Zero(2 * hy + 1, 2 * hx + 1);
    t.cx = hx;
    t.cy = hy;
    int used = 0;
    for (int i = 0; used < kTemplateFaces && i < 50 * kTemplateFaces; ++i) {
        const FaceSpec spec = random_face_spec(mix_seed(kTemplateSeed, std::uint64_t(i)));
        if (keep && !keep(spec)) continue;
        const Point p = anchor(spec);
        const int x = int(std::lround(p.x)), y = int(std::lround(p.y));
        if (x - hx < 0 || y - hy < 0 || x + hx >= size || y + hy >= size) continue;
        const auto img = channel(synth_pair<double>(spec, size).face.pixels, size, ch);
        Matrix<double> win = img.block(y - hy, x - hx, 2 * hy + 1, 2 * hx + 1);
        if (!normalize(win)) continue;
        t.values += win;
        ++used;
    }
    if (used == 0 || !normalize(t.values)) throw DataError("detector: could not build template");
    return t;
}

Match best_of(const Matrix<double>& img, const std::vector<StructureDetector::Template>& bank, int x0, int x1,
              int y0, int y1, const StructureDetector::Template** which) {
    Match best;
    for (const auto& t : bank) {
        const Match m = best_match(img, t, x0, x1, y0, y1);
        if (m.score > best.score) {
            best = m;
            *which = &t;
        }
    }
    return best;
}

} // namespace

StructureDetector::StructureDetector(int image_size, DetectionThresholds thresholds)
    : size_(image_size), thresholds_(thresholds) {
    if (image_size < 16) throw ConfigError("detector: image size must be >= 16");
    const int S = image_size;
    // Eye appearance varies most with radius and iris brightness; one template per bin.
    const std::array<double, 4> radius_edges{0.0, 0.04, 0.045, 1.0};
    for (int rb = 0; rb < 3; ++rb)
        for (bool dark : {true, false})
            eyes_.push_back(build_template(
                S, Channel::luminance, scaled(0.09, S, 3), scaled(0.06, S, 2),
                [S](const FaceSpec& f) { return landmarks(f, S).eye_left; },
                [&, rb, dark](const FaceSpec& f) {
                    return f.eye_radius >= radius_edges[rb] && f.eye_radius < radius_edges[rb + 1] &&
                           (f.iris.luminance() < 0.3) == dark;
                }));
    nose_ = build_template(S, Channel::luminance, scaled(0.06, S, 2), scaled(0.08, S, 2),
                           [S](const FaceSpec& f) { return landmarks(f, S).nose; });
    mouth_ = build_template(S, Channel::redness, scaled(0.14, S, 3), scaled(0.06, S, 2),
                            [S](const FaceSpec& f) { return landmarks(f, S).mouth; });
}

template <typename T>
DetectionResult StructureDetector::detect(const Image<T>& face) const {
    DetectionResult r;
    if (face.domain != Domain::face) throw UsageError("detect_structure: expects a face-domain image");
    if (face.size != size_) throw ShapeError("detect_structure: image size does not match the detector");
    const int S = size_;
    const Matrix<double> rgb = face.pixels.template cast<double>();
    const Matrix<double> lum = channel(rgb, S, Channel::luminance);
    const Matrix<double> red = channel(rgb, S, Channel::redness);
    auto fail = [&](const char* why) {
        r.failure = why;
        return r;
    };
    auto at = [S](double f) { return int(std::lround(f * S)); };

    const Template *tl = nullptr, *tr = nullptr;
    const Match el = best_of(lum, eyes_, at(0.12), at(0.5) - 1, at(0.22), at(0.62), &tl);
    const Match er = best_of(lum, eyes_, at(0.5), at(0.88), at(0.22), at(0.62), &tr);
    r.eye_left_score = el.score;
    r.eye_right_score = er.score;
    if (el.score < thresholds_.eye || er.score < thresholds_.eye) return fail("eyes");
    r.eye_left = refine(lum, *tl, el);
    r.eye_right = refine(lum, *tr, er);
    const Point eL = *r.eye_left, eR = *r.eye_right;
    const double sep = eR.x - eL.x;
    if (std::abs(eL.y - eR.y) > 0.06 * S || sep < 0.12 * S || sep > 0.42 * S) return fail("eye geometry");
    const double mid_x = 0.5 * (eL.x + eR.x), eye_y = 0.5 * (eL.y + eR.y);

    const Match mo = best_match(red, mouth_, int(mid_x - 0.1 * S), int(mid_x + 0.1 * S), int(eye_y + 0.15 * S),
                                int(eye_y + 0.45 * S));
    r.mouth_score = mo.score;
    if (mo.score < thresholds_.mouth) return fail("mouth");
    r.mouth = refine(red, mouth_, mo);

    const Match no = best_match(lum, nose_, int(mid_x - 0.08 * S), int(mid_x + 0.08 * S), int(eye_y + 0.04 * S),
                                int(r.mouth->y - 0.04 * S));
    r.nose_score = no.score;
    if (no.score < thresholds_.nose) return fail("nose");
    r.nose = refine(lum, nose_, no);
    if (!(eye_y < r.nose->y && r.nose->y < r.mouth->y)) return fail("ordering");

    // Chin: first near-white row below the mouth along the face midline.
    const int col = std::clamp(int(std::lround(mid_x)), 1, S - 2);
    for (int y = int(std::ceil(r.mouth->y)) + 1; y < S; ++y) {
        double m = 0.0;
        for (int dx = -1; dx <= 1; ++dx) m += lum(y, col + dx) / 3.0;
        if (m > 0.8) {
            r.chin = Point{mid_x, y - 0.5};
            break;
        }
    }
    if (!r.chin) return fail("chin");
    const double chin_gap = r.chin->y - r.mouth->y;
    if (chin_gap < 0.04 * S || chin_gap > 0.35 * S) return fail("chin geometry");

    r.success = true;
    return r;
}

template DetectionResult StructureDetector::detect<float>(const Image<float>&) const;
template DetectionResult StructureDetector::detect<double>(const Image<double>&) const;

template <typename T>
DetectionResult detect_structure(const Image<T>& face) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<StructureDetector>> cache;
    const StructureDetector* det;
    {
        std::lock_guard lock(mu);
        auto& slot = cache[face.size];
        if (!slot) slot = std::make_unique<StructureDetector>(face.size);
        det = slot.get();
    }
    return det->detect(face);
}

template DetectionResult detect_structure<float>(const Image<float>&);
template DetectionResult detect_structure<double>(const Image<double>&);

double frr(std::span<const DetectionResult> results) {
    if (results.empty()) throw UsageError("frr: empty result list");
    const auto ok = std::count_if(results.begin(), results.end(), [](const DetectionResult& r) { return r.success; });
    return double(ok) / double(results.size());
}

} // namespace rbtn
