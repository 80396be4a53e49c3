#include "rbtn/data.hpp"

#include "rbtn/error.hpp"
#include "rbtn/png_io.hpp"
#include "rbtn/seed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace rbtn {

namespace {

constexpr Rgb kWhite{1.0, 1.0, 1.0};
constexpr Rgb kInk{0.075, 0.075, 0.075};  // -0.85 after mapping to [-1, 1]
constexpr Rgb kPupil{0.05, 0.05, 0.05};
constexpr Rgb kSclera{0.97, 0.97, 0.97};

constexpr double kScleraAspect = 1.6;
constexpr double kIrisScale = 0.85;
constexpr double kPupilScale = 0.4;

const std::array<Rgb, 5> kSkinTones{{{0.96, 0.82, 0.70}, {0.90, 0.72, 0.58}, {0.78, 0.58, 0.42},
                                     {0.62, 0.44, 0.31}, {0.47, 0.32, 0.22}}};
const std::array<Rgb, 5> kHairTones{{{0.08, 0.07, 0.06}, {0.35, 0.22, 0.12}, {0.85, 0.72, 0.42},
                                     {0.60, 0.25, 0.10}, {0.62, 0.62, 0.62}}};
const std::array<Rgb, 5> kIrisTones{{{0.40, 0.25, 0.10}, {0.25, 0.45, 0.75}, {0.30, 0.55, 0.35},
                                     {0.45, 0.50, 0.55}, {0.15, 0.10, 0.08}}};

double px(double v, int size) { return v * size - 0.5; }
Point px(const Point& p, int size) { return {px(p.x, size), px(p.y, size)}; }

class Sampler {
public:
    explicit Sampler(std::uint64_t seed) : rng_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
    Rgb jitter(const Rgb& c, double amount) {
        auto j = [&](double v) { return std::clamp(v + uniform(-amount, amount), 0.0, 1.0); };
        return {j(c.r), j(c.g), j(c.b)};
    }

private:
    std::mt19937_64 rng_;
};

bool inside_unit(const Point& p) { return p.x >= 0.0 && p.x < 1.0 && p.y >= 0.0 && p.y < 1.0; }

void shift(Point& p, double dx, double dy) {
    p.x += dx;
    p.y += dy;
}

} // namespace

const char* to_string(Feature f) {
    switch (f) {
    case Feature::eye_left: return "eye_left";
    case Feature::eye_right: return "eye_right";
    case Feature::nose: return "nose";
    case Feature::mouth: return "mouth";
    }
    return "?";
}

Feature parse_feature(const std::string& s) {
    for (Feature f : {Feature::eye_left, Feature::eye_right, Feature::nose, Feature::mouth})
        if (s == to_string(f)) return f;
    throw ConfigError("unknown feature '" + s + "' (expected eye_left, eye_right, nose or mouth)");
}

std::vector<Point> FaceSpec::mouth_polyline() const {
    std::vector<Point> pts;
    constexpr int kSegments = 8;
    for (int i = 0; i <= kSegments; ++i) {
        const double t = -1.0 + 2.0 * i / kSegments;
        pts.push_back({mouth_center.x + t * mouth_half_width, mouth_center.y - mouth_curve * t * t});
    }
    return pts;
}

void FaceSpec::validate() const {
    if (face_ax <= 0 || face_ay <= 0 || hair_ax <= 0 || hair_ay <= 0 || eye_radius <= 0 || mouth_half_width <= 0 ||
        mouth_thickness <= 0)
        throw DataError("face spec: non-positive extent");
    std::vector<std::pair<const char*, Point>> marks{{"eye_left", eye_left}, {"eye_right", eye_right},
                                                     {"nose", nose[0]},     {"nose", nose[1]},
                                                     {"nose", nose[2]},     {"chin", chin()}};
    const auto mouth = mouth_polyline();
    marks.emplace_back("mouth", mouth.front());
    marks.emplace_back("mouth", mouth.back());
    marks.emplace_back("mouth", mouth_center);
    for (const auto& [name, p] : marks)
        if (!inside_unit(p)) throw DataError(std::string("face spec: landmark ") + name + " out of bounds");
    if (eye_left.x >= eye_right.x) throw DataError("face spec: eye_left must be left of eye_right");
}

Landmarks landmarks(const FaceSpec& spec, int size) {
    return {px(spec.eye_left, size), px(spec.eye_right, size), px(spec.nose[1], size),
            px(spec.mouth_center, size), px(spec.chin(), size)};
}

Box feature_box(const FaceSpec& spec, Feature f, int size) {
    Box b{};
    switch (f) {
    case Feature::eye_left:
    case Feature::eye_right: {
        const Point c = f == Feature::eye_left ? spec.eye_left : spec.eye_right;
        const double rx = spec.eye_radius * kScleraAspect, ry = spec.eye_radius;
        b = {c.x - rx, c.y - ry, c.x + rx, c.y + ry};
        break;
    }
    case Feature::nose: {
        b = {spec.nose[0].x, spec.nose[0].y, spec.nose[0].x, spec.nose[0].y};
        for (const auto& p : spec.nose) b = {std::min(b.x0, p.x), std::min(b.y0, p.y), std::max(b.x1, p.x), std::max(b.y1, p.y)};
        break;
    }
    case Feature::mouth: {
        const auto pts = spec.mouth_polyline();
        b = {pts.front().x, pts.front().y, pts.back().x, pts.back().y};
        for (const auto& p : pts) b = {std::min(b.x0, p.x), std::min(b.y0, p.y), std::max(b.x1, p.x), std::max(b.y1, p.y)};
        const double half = spec.mouth_thickness / 2;
        b = {b.x0 - half, b.y0 - half, b.x1 + half, b.y1 + half};
        break;
    }
    }
    return {std::max(0.0, px(b.x0, size) - 1.0), std::max(0.0, px(b.y0, size) - 1.0),
            std::min(size - 1.0, px(b.x1, size) + 1.0), std::min(size - 1.0, px(b.y1, size) + 1.0)};
}

FaceSpec random_face_spec(std::uint64_t seed) {
    Sampler s(seed);
    FaceSpec f;
    f.seed = seed;
    f.face_center = {0.5 + s.uniform(-0.02, 0.02), 0.55 + s.uniform(-0.02, 0.02)};
    f.face_ax = s.uniform(0.27, 0.33);
    f.face_ay = s.uniform(0.34, 0.40);
    f.skin = s.jitter(kSkinTones[s.index(int(kSkinTones.size()))], 0.03);

    f.hair_center = {f.face_center.x, f.face_center.y - f.face_ay * s.uniform(0.25, 0.4)};
    f.hair_ax = f.face_ax * s.uniform(1.08, 1.25);
    f.hair_ay = f.face_ay * s.uniform(0.85, 1.0);
    f.hair = s.jitter(kHairTones[s.index(int(kHairTones.size()))], 0.04);

    const double eye_y = f.face_center.y - f.face_ay * s.uniform(0.22, 0.32);
    const double eye_dx = f.face_ax * s.uniform(0.36, 0.46);
    f.eye_left = {f.face_center.x - eye_dx, eye_y + s.uniform(-0.004, 0.004)};
    f.eye_right = {f.face_center.x + eye_dx, eye_y + s.uniform(-0.004, 0.004)};
    f.eye_radius = s.uniform(0.035, 0.05);
    f.iris = s.jitter(kIrisTones[s.index(int(kIrisTones.size()))], 0.04);

    const double side = s.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    const double nose_y = f.face_center.y + f.face_ay * s.uniform(0.0, 0.1);
    f.nose = {Point{f.face_center.x, eye_y + 0.03}, Point{f.face_center.x + side * s.uniform(0.02, 0.04), nose_y},
              Point{f.face_center.x - side * 0.01, nose_y + s.uniform(0.015, 0.025)}};

    f.mouth_center = {f.face_center.x, f.face_center.y + f.face_ay * s.uniform(0.42, 0.54)};
    f.mouth_half_width = s.uniform(0.07, 0.11);
    f.mouth_curve = s.uniform(-0.015, 0.03);
    f.mouth_thickness = s.uniform(0.02, 0.03);
    f.lips = s.jitter({0.80, 0.22, 0.26}, 0.06);
    return f;
}

FaceSpec render_variant(const FaceSpec& identity, std::uint64_t variant_seed) {
    Sampler s(mix_seed(identity.seed ^ 0xA5A5A5A5ULL, variant_seed));
    FaceSpec f = identity;
    const double dx = s.uniform(-0.015, 0.015), dy = s.uniform(-0.015, 0.015);
    for (Point* p : {&f.face_center, &f.hair_center, &f.eye_left, &f.eye_right, &f.mouth_center, &f.nose[0],
                     &f.nose[1], &f.nose[2]})
        shift(*p, dx, dy);
    f.mouth_curve += s.uniform(-0.005, 0.005);
    f.skin = s.jitter(f.skin, 0.02);
    f.hair = s.jitter(f.hair, 0.02);
    f.lips = s.jitter(f.lips, 0.02);
    return f;
}

template <typename T>
ImagePair<T> synth_pair(const FaceSpec& spec, int size) {
    spec.validate();
    if (size < 8) throw ConfigError("synth_pair: size must be at least 8");
    const double S = size;
    const Point fc = px(spec.face_center, size), hc = px(spec.hair_center, size);
    const double fax = spec.face_ax * S, fay = spec.face_ay * S;
    const double hax = spec.hair_ax * S, hay = spec.hair_ay * S;
    const double r = spec.eye_radius * S;
    std::vector<Point> nose, mouth;
    for (const auto& p : spec.nose) nose.push_back(px(p, size));
    for (const auto& p : spec.mouth_polyline()) mouth.push_back(px(p, size));
    const double nose_width = std::max(1.2, 0.018 * S);

    Raster face(size, size, kWhite);
    face.fill_ellipse(hc.x, hc.y, hax, hay, spec.hair);
    face.fill_ellipse(fc.x, fc.y, fax, fay, spec.skin);
    for (const Point& e : {px(spec.eye_left, size), px(spec.eye_right, size)}) {
        face.fill_ellipse(e.x, e.y, r * kScleraAspect, r, kSclera);
        face.fill_circle(e.x, e.y, r * kIrisScale, spec.iris);
        face.fill_circle(e.x, e.y, r * kPupilScale, kPupil);
    }
    face.stroke_polyline(nose, nose_width, spec.skin.scaled(0.55));
    face.stroke_polyline(mouth, spec.mouth_thickness * S, spec.lips);

    Raster sketch(size, size, kWhite);
    constexpr double w = 1.0;
    sketch.stroke_ellipse(fc.x, fc.y, fax, fay, w, kInk);
    sketch.stroke_ellipse(hc.x, hc.y, hax, hay, w, kInk,
                          [&](int x, int y) { return ellipse_distance(x - fc.x, y - fc.y, fax, fay) > 0.0; });
    for (const Point& e : {px(spec.eye_left, size), px(spec.eye_right, size)}) {
        sketch.stroke_ellipse(e.x, e.y, r * kScleraAspect, r, w, kInk);
        sketch.stroke_ellipse(e.x, e.y, r * kIrisScale, r * kIrisScale, w, kInk);
        sketch.fill_circle(e.x, e.y, r * kPupilScale, kInk);
    }
    sketch.stroke_polyline(nose, w, kInk);
    const double half = spec.mouth_thickness * S / 2;
    std::vector<Point> upper, lower;
    for (const auto& p : mouth) {
        upper.push_back({p.x, p.y - half});
        lower.push_back({p.x, p.y + half});
    }
    std::vector<Point> outline(upper.begin(), upper.end());
    outline.insert(outline.end(), lower.rbegin(), lower.rend());
    outline.push_back(upper.front());
    sketch.stroke_polyline(outline, w, kInk);

    return {face.to_image<T>(Domain::face), sketch.to_image<T>(Domain::sketch)};
}

template ImagePair<float> synth_pair<float>(const FaceSpec&, int);
template ImagePair<double> synth_pair<double>(const FaceSpec&, int);

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [&](const ManifestEntry& e) { return name.empty() || e.split == name; });
    return out;
}

namespace {

ManifestEntry entry_for(const std::string& id, const std::string& split, std::optional<std::uint64_t> seed) {
    return {id, split, seed, "faces/" + id + ".png", "sketches/" + id + ".png"};
}

std::string format_id(int i) {
    std::ostringstream ss;
    ss.width(5);
    ss.fill('0');
    ss << i;
    return ss.str();
}

} // namespace

DatasetManifest make_dataset(int n, int size, std::uint64_t seed, double test_fraction) {
    if (n < 1) throw ConfigError("make_dataset: n must be >= 1");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("make_dataset: test_fraction must be in [0, 1)");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed, 0x5917));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(n * test_fraction));
    std::vector<bool> is_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    DatasetManifest m;
    m.seed = seed;
    m.image_size = size;
    for (int i = 0; i < n; ++i)
        m.entries.push_back(entry_for(format_id(i), is_test[i] ? "test" : "train", mix_seed(seed, std::uint64_t(i))));
    return m;
}

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    fs::create_directories(root / "faces");
    fs::create_directories(root / "sketches");
    std::ofstream csv(root / "manifest.csv");
    if (!csv) throw IoError("cannot write " + (root / "manifest.csv").string());
    csv << "id,split,seed\n";
    for (const auto& e : manifest.entries) {
        csv << e.id << ',' << e.split << ',';
        if (e.seed) csv << *e.seed;
        csv << '\n';
        if (!e.seed) continue;
        const auto pair = synth_pair<double>(random_face_spec(*e.seed), manifest.image_size);
        save_image(root / e.face_path, pair.face);
        save_image(root / e.sketch_path, pair.sketch);
    }
}

DatasetManifest read_manifest(const std::filesystem::path& root) {
    std::ifstream in(root / "manifest.csv");
    if (!in) throw IoError("cannot open " + (root / "manifest.csv").string());
    std::string line;
    std::getline(in, line);
    if (line != "id,split,seed") throw DataError("manifest.csv: unexpected header '" + line + "'");
    DatasetManifest m;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, split, seed;
        std::getline(ss, id, ',');
        std::getline(ss, split, ',');
        std::getline(ss, seed);
        if (id.empty() || (split != "train" && split != "test"))
            throw DataError("manifest.csv:" + std::to_string(lineno) + ": malformed row");
        std::optional<std::uint64_t> s;
        if (!seed.empty()) {
            try {
                s = std::stoull(seed);
            } catch (const std::exception&) {
                throw DataError("manifest.csv:" + std::to_string(lineno) + ": bad seed '" + seed + "'");
            }
        }
        m.entries.push_back(entry_for(id, split, s));
    }
    if (!m.entries.empty()) m.image_size = read_png(root / m.entries.front().face_path).width;
    return m;
}

template <typename T>
std::vector<ImagePair<T>> render_pairs(const DatasetManifest& manifest, const std::string& split) {
    std::vector<ImagePair<T>> out;
    for (const auto& e : manifest.split(split)) {
        if (!e.seed) throw DataError("entry " + e.id + " has no seed; load it from disk instead");
        out.push_back(synth_pair<T>(random_face_spec(*e.seed), manifest.image_size));
    }
    return out;
}

template <typename T>
std::vector<ImagePair<T>> load_pairs(const DatasetManifest& manifest, const std::filesystem::path& root,
                                     const std::string& split) {
    std::vector<ImagePair<T>> out;
    for (const auto& e : manifest.split(split)) {
        ImagePair<T> p{load_image<T>(root / e.face_path, Domain::face), load_image<T>(root / e.sketch_path, Domain::sketch)};
        if (p.face.size != p.sketch.size) throw DataError("entry " + e.id + ": face and sketch sizes differ");
        out.push_back(std::move(p));
    }
    return out;
}

template std::vector<ImagePair<float>> render_pairs<float>(const DatasetManifest&, const std::string&);
template std::vector<ImagePair<double>> render_pairs<double>(const DatasetManifest&, const std::string&);
template std::vector<ImagePair<float>> load_pairs<float>(const DatasetManifest&, const std::filesystem::path&,
                                                         const std::string&);
template std::vector<ImagePair<double>> load_pairs<double>(const DatasetManifest&, const std::filesystem::path&,
                                                           const std::string&);

IngestReport ingest_pairs(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    auto scan = [&](const char* sub) {
        std::set<std::string> ids;
        if (fs::is_directory(dir / sub))
            for (const auto& f : fs::directory_iterator(dir / sub))
                if (f.is_regular_file() && f.path().extension() == ".png") ids.insert(f.path().stem().string());
        return ids;
    };
    const auto faces = scan("faces"), sketches = scan("sketches");
    std::set<std::string> all(faces);
    all.insert(sketches.begin(), sketches.end());

    IngestReport report;
    for (const auto& id : all) {
        if (!faces.count(id)) {
            report.failures.push_back({id, "no face for sketch"});
            continue;
        }
        if (!sketches.count(id)) {
            report.failures.push_back({id, "no sketch for face"});
            continue;
        }
        const ManifestEntry e = entry_for(id, "train", std::nullopt);
        Rgb8Image face, sketch;
        try {
            face = read_png(dir / e.face_path);
            sketch = read_png(dir / e.sketch_path);
        } catch (const Error& err) {
            report.failures.push_back({id, err.what()});
            continue;
        }
        if (face.width != face.height || sketch.width != sketch.height) {
            report.failures.push_back({id, "non-square image"});
            continue;
        }
        if (face.width != sketch.width) {
            report.failures.push_back({id, "face " + std::to_string(face.width) + "px vs sketch " +
                                               std::to_string(sketch.width) + "px"});
            continue;
        }
        if (report.manifest.image_size == 0) report.manifest.image_size = face.width;
        if (face.width != report.manifest.image_size) {
            report.failures.push_back({id, "size " + std::to_string(face.width) + " differs from dataset size " +
                                               std::to_string(report.manifest.image_size)});
            continue;
        }
        report.manifest.entries.push_back(e);
    }
    return report;
}

void MaskSpec::validate() const {
    if (!(target_missing >= 0.0 && target_missing < 1.0))
        throw ConfigError("mask: target_missing must be in [0, 1)");
}

namespace {

// Kept region of exactly `area` pixels: a w x h rectangle plus a partial row or
// column, placed so [min_x, max_x] x [min_y, max_y] is covered and the center
// lands as close to (cx, cy) as bounds allow.
Mask kept_region(int S, long area, double cx, double cy, int min_x, int min_y, int max_x, int max_y) {
    const int need_w = max_x - min_x + 1, need_h = max_y - min_y + 1;
    int w = std::clamp(int(std::lround(std::sqrt(double(area)))), std::max(need_w, 1), S);
    if (area > long(w) * S) w = int((area + S - 1) / S);
    int h = int(area / w);
    long rem = area - long(w) * h;
    if (h < need_h) {
        // Trade width for height while the box still fits.
        h = need_h;
        w = int(area / h);
        rem = area - long(w) * h;
        if (w < need_w) throw DataError("mask: kept area too small to contain the feature");
    }
    const bool extra_row = rem > 0 && h < S;
    const bool extra_col = rem > 0 && !extra_row;

    // Start of the core rectangle along one axis; the partial line goes after
    // it when it fits, otherwise before.
    auto place = [&](double c, int core, bool extra, int lo_need, int hi_need, bool& before) {
        before = false;
        for (int side = 0; side < 2; ++side) {
            const int lo = std::max(extra && side == 1 ? 1 : 0, hi_need - core + 1);
            const int hi = std::min(S - core - (extra && side == 0 ? 1 : 0), lo_need);
            if (lo <= hi) {
                before = side == 1;
                return std::clamp(int(std::lround(c - (core - 1) / 2.0)), lo, hi);
            }
            if (!extra) break;
        }
        throw DataError("mask: cannot place kept region inside the image");
    };
    bool row_before = false, col_before = false;
    const int x0 = place(cx, w, extra_col, min_x, max_x, col_before);
    const int y0 = place(cy, h, extra_row, min_y, max_y, row_before);

    Mask m(S);
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) m.at(y, x) = 1;
    for (long i = 0; i < rem; ++i) {
        if (extra_row) m.at(row_before ? y0 - 1 : y0 + h, x0 + int(i)) = 1;
        else m.at(y0 + int(i), col_before ? x0 - 1 : x0 + w) = 1;
    }
    return m;
}

long kept_area(double target, int size) {
    const long total = long(size) * size;
    return std::clamp(std::lround((1.0 - target) * total), 1L, total);
}

} // namespace

Mask make_mask(const MaskSpec& spec, int size) {
    spec.validate();
    if (size < 1) throw ConfigError("mask: size must be positive");
    if (spec.kind != MaskSpec::Kind::rect) throw ConfigError("mask: feature masks need a face spec");
    const double c = (size - 1) / 2.0;
    return kept_region(size, kept_area(spec.target_missing, size), c, c, int(c), int(c), int(c), int(c));
}

Mask make_mask(const MaskSpec& spec, const FaceSpec& face, int size) {
    if (spec.kind == MaskSpec::Kind::rect) return make_mask(spec, size);
    spec.validate();
    face.validate();
    const Box b = feature_box(face, spec.feature, size);
    const int x0 = int(std::floor(b.x0)), y0 = int(std::floor(b.y0));
    const int x1 = int(std::ceil(b.x1)), y1 = int(std::ceil(b.y1));
    return kept_region(size, kept_area(spec.target_missing, size), (b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2, x0, y0, x1, y1);
}

double missing_percentage(const Mask& mask) {
    if (mask.size <= 0 || mask.map.size() != Eigen::Index(mask.size) * mask.size) throw ShapeError("mask: bad shape");
    if (!mask.binary()) throw DataError("mask: not binary");
    return double((mask.map == 0).count()) / double(mask.map.size());
}

} // namespace rbtn
