#include "support.hpp"

#include "rbtn/detector.hpp"
#include "rbtn/evaluation.hpp"
#include "rbtn/plot.hpp"
#include "rbtn/png_io.hpp"
#include "rbtn/seed.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace rbtn;
using rbtn::test::tiny_arch;

namespace {

const Embedder& small_embedder() {
    static const Embedder e = [] {
        Embedder::Config c;
        c.train_faces = 128;
        c.epochs = 3;
        c.seed = 5;
        return Embedder::train(c);
    }();
    return e;
}

GenerationTrace<double> trace_of(const std::vector<Image<double>>& faces) {
    GenerationTrace<double> t;
    for (std::size_t k = 0; k < faces.size(); ++k) t.frames.push_back({int(k), faces[k], faces[k]});
    return t;
}

DetectionResult result(bool ok) {
    DetectionResult r;
    r.success = ok;
    return r;
}

Image<float> flipped(const Image<float>& x) {
    Image<float> out = x;
    for (int y = 0; y < x.size; ++y)
        for (int c = 0; c < x.size; ++c) out.pixels.col(out.index(y, c)) = x.pixels.col(x.index(x.size - 1 - y, c));
    return out;
}

} // namespace

TEST_CASE("frr counts successes") {
    std::vector<DetectionResult> all(10, result(true));
    CHECK(frr(all) == 1.0);
    std::vector<DetectionResult> half;
    for (int i = 0; i < 300; ++i) half.push_back(result(i < 150));
    CHECK(frr(half) == 0.5);
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        std::vector<DetectionResult> v;
        int ok = 0;
        const int n = 1 + int(rng() % 50);
        for (int i = 0; i < n; ++i) {
            const bool s = rng() % 3 == 0;
            ok += s;
            v.push_back(result(s));
        }
        CHECK(frr(v) == double(ok) / n);
    }
    CHECK_THROWS_AS(frr(std::vector<DetectionResult>{}), UsageError);
}

TEST_CASE("residual_stats: constant frames give zeros") {
    const Image<double> x(8, Domain::face, 0.25);
    const auto c = residual_stats(trace_of({x, x, x}));
    REQUIRE(c.length() == 2);
    CHECK(c.mean_r == std::vector<double>{0.0, 0.0});
    CHECK(c.mean_abs_r == std::vector<double>{0.0, 0.0});
}

TEST_CASE("residual_stats: an alternating checkerboard has zero mean and 2c absolute mean") {
    const double c = 0.3;
    std::vector<Image<double>> frames;
    for (int k = 0; k < 5; ++k) {
        Image<double> x(8, Domain::face);
        for (int y = 0; y < 8; ++y)
            for (int xx = 0; xx < 8; ++xx)
                x.pixels.col(x.index(y, xx)).setConstant(((y + xx + k) % 2 ? 1.0 : -1.0) * c);
        frames.push_back(x);
    }
    const auto r = residual_stats(trace_of(frames));
    REQUIRE(r.length() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(std::abs(r.mean_r[k]) < 1e-15);
        CHECK(r.mean_abs_r[k] == doctest::Approx(2 * c));
    }
}

TEST_CASE("residual_stats matches an elementwise recomputation") {
    std::mt19937_64 rng(2);
    std::vector<Image<double>> frames;
    for (int k = 0; k < 6; ++k) frames.push_back(test::random_image<double>(8, Domain::face, rng));
    const auto r = residual_stats(trace_of(frames));
    for (std::size_t k = 1; k < frames.size(); ++k) {
        double s = 0, a = 0;
        for (int ch = 0; ch < 3; ++ch)
            for (int n = 0; n < 64; ++n) {
                const double d = frames[k].pixels(ch, n) - frames[k - 1].pixels(ch, n);
                s += d;
                a += std::abs(d);
            }
        CHECK(std::abs(r.mean_r[k - 1] - s / 192) <= 1e-12);
        CHECK(std::abs(r.mean_abs_r[k - 1] - a / 192) <= 1e-12);
    }
    CHECK_THROWS_AS(residual_stats(trace_of({frames[0]})), UsageError);
}

TEST_CASE("mean_curve averages pointwise") {
    const ResidualCurve a{{1.0, 2.0}, {3.0, 4.0}}, b{{3.0, 0.0}, {1.0, 0.0}};
    const std::vector<ResidualCurve> v{a, b};
    const auto m = mean_curve(v);
    CHECK(m.mean_r == std::vector<double>{2.0, 1.0});
    CHECK(m.mean_abs_r == std::vector<double>{2.0, 2.0});
    const std::vector<ResidualCurve> bad{a, ResidualCurve{{1.0}, {1.0}}};
    CHECK_THROWS_AS(mean_curve(bad), ShapeError);
}

TEST_CASE("detector: clean faces succeed with accurate landmarks") {
    int ok = 0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        const auto spec = random_face_spec(mix_seed(31, std::uint64_t(i)));
        const auto r = detect_structure(synth_pair<float>(spec, 64).face);
        if (!r.success) continue;
        ++ok;
        REQUIRE((r.eye_left && r.eye_right && r.nose && r.mouth && r.chin));
        for (const Point& p : std::vector<Point>{*r.eye_left, *r.eye_right, *r.nose, *r.mouth, *r.chin}) {
            CHECK(p.x >= 0.0);
            CHECK(p.x < 64.0);
            CHECK(p.y >= 0.0);
            CHECK(p.y < 64.0);
        }
        CHECK(r.failure.empty());
    }
    MESSAGE("clean success " << ok << "/" << n);
    CHECK(ok >= 990);
}

TEST_CASE("detector: white and noise images fail") {
    std::mt19937_64 rng(3);
    int ok = 0;
    for (int i = 0; i < 1000; ++i) {
        const Image<float> x = i % 4 == 0 ? Image<float>(64, Domain::face, 1.0f)
                                          : test::random_image<float>(64, Domain::face, rng);
        const auto r = detect_structure(x);
        ok += r.success;
        if (!r.success) CHECK_FALSE(r.failure.empty());
    }
    CHECK(ok <= 10);
    CHECK_FALSE(detect_structure(Image<float>(64, Domain::face, 1.0f)).success);
}

TEST_CASE("detector: vertically flipped faces fail") {
    int ok = 0;
    for (int i = 0; i < 50; ++i) ok += detect_structure(flipped(synth_pair<float>(random_face_spec(i), 64).face)).success;
    CHECK(ok == 0);
}

TEST_CASE("detector works at other sizes") {
    int ok = 0;
    for (int i = 0; i < 20; ++i) ok += detect_structure(synth_pair<float>(random_face_spec(i), 128).face).success;
    CHECK(ok >= 19);
}

TEST_CASE("embedder: deterministic, zero self distance, identities separate") {
    const Embedder& e = small_embedder();
    REQUIRE(e.trained());
    const auto x = synth_pair<double>(random_face_spec(9), 64).face;
    const auto v = e.embed(x);
    CHECK(v.size() == e.feature_size());
    CHECK(e.embed(x) == v);
    CHECK(embedding_distance(v, e.embed(x)) == 0.0);

    for (std::uint64_t id = 0; id < 3; ++id) {
        const FaceSpec A = random_face_spec(2000 + 2 * id), B = random_face_spec(2001 + 2 * id);
        std::vector<Eigen::VectorXd> a, b;
        for (int i = 0; i < 20; ++i) {
            a.push_back(e.embed(synth_pair<double>(render_variant(A, i), 64).face));
            b.push_back(e.embed(synth_pair<double>(render_variant(B, i), 64).face));
        }
        double intra = 0, inter = 0;
        int ni = 0, nx = 0;
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j) {
                if (i < j) {
                    intra += embedding_distance(a[i], a[j]) + embedding_distance(b[i], b[j]);
                    ni += 2;
                }
                inter += embedding_distance(a[i], b[j]);
                ++nx;
            }
        CHECK(inter / nx > intra / ni);
    }
}

TEST_CASE("embedder: errors and persistence") {
    Embedder blank;
    CHECK_FALSE(blank.trained());
    CHECK_THROWS_AS(blank.embed(Image<double>(64, Domain::face)), UsageError);
    const Embedder& e = small_embedder();
    CHECK_THROWS_AS(e.embed(Image<double>(32, Domain::face)), ShapeError);
    test::TempDir dir("emb");
    e.save(dir / "e.bin");
    const Embedder back = Embedder::load(dir / "e.bin");
    const auto x = synth_pair<double>(random_face_spec(10), 64).face;
    CHECK(back.embed(x) == e.embed(x));
    CHECK_THROWS_AS(Embedder::load(dir / "missing.bin"), IoError);
    CHECK_THROWS_AS(embedding_distance(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("similarity study: shape of the result and its errors") {
    const auto bundle = build_models<float>(tiny_arch(64, 4, 2, 3));
    const std::vector<FaceSpec> ids{random_face_spec(1), random_face_spec(2), random_face_spec(3)};
    const std::vector<double> pct{0.3, 0.95};
    GenerationOptions g;
    g.iterations = 2;
    const auto s = similarity_diversity_study<float>(bundle, ids, pct, small_embedder(), g);
    REQUIRE(s.points.size() == 2);
    CHECK(s.points[0].missing == 0.3);
    CHECK(s.points[0].self_pairs == 9);
    CHECK(s.points[0].mutual_pairs == 9);
    CHECK(s.points[0].self_mean > 0.0);
    std::ostringstream csv;
    s.write_csv(csv);
    CHECK(csv.str().rfind("missing,self_mean,self_std,mutual_mean,mutual_std,self_pairs,mutual_pairs\n", 0) == 0);

    const std::vector<FaceSpec> one{ids[0]};
    CHECK_THROWS_AS(similarity_diversity_study<float>(bundle, one, pct, small_embedder(), g), UsageError);
    CHECK_THROWS_AS(similarity_diversity_study<float>(bundle, ids, pct, Embedder{}, g), UsageError);
}

TEST_CASE("similarity intersection is the first point where mutual <= self") {
    SimilarityStudy s;
    s.points = {{0.1, 1.0, 0, 2.0, 0, 3, 3}, {0.5, 1.5, 0, 1.6, 0, 3, 3}, {0.9, 1.7, 0, 1.6, 0, 3, 3}};
    REQUIRE(s.intersection().has_value());
    CHECK(*s.intersection() == 0.9);
    s.points.pop_back();
    CHECK_FALSE(s.intersection().has_value());
}

TEST_CASE("missing sweep on a small model") {
    const auto bundle = build_models<float>(tiny_arch(64, 4, 2, 4));
    const auto m = make_dataset(4, 64, 2, 0.5);
    const auto test_pairs = render_pairs<float>(m, "test");
    REQUIRE(test_pairs.size() == 2);
    SweepOptions o;
    o.generation.iterations = 3;
    const std::vector<double> pct(kDefaultMissing.begin(), kDefaultMissing.end());
    const auto rep = run_missing_sweep<float>(bundle, test_pairs, pct, o);
    REQUIRE(rep.buckets.size() == 5);
    CHECK(rep.iterations == 3);
    for (const auto& b : rep.buckets) {
        CHECK(b.samples == 2);
        CHECK(b.frr >= 0.0);
        CHECK(b.frr <= 1.0);
        CHECK(b.baseline_frr >= 0.0);
        CHECK(b.baseline_frr <= 1.0);
        CHECK(b.residuals.length() == 3);
        CHECK(b.detections.size() == 2);
        CHECK(b.baseline_detections.size() == 2);
    }
    CHECK(rep.bucket(0.6).missing == 0.6);
    CHECK_THROWS_AS(rep.bucket(0.33), UsageError);

    std::ostringstream csv, res;
    rep.write_csv(csv);
    rep.write_residual_csv(res);
    CHECK(csv.str().rfind("missing,method,frr,samples\n", 0) == 0);
    const std::string cs = csv.str(), rs = res.str();
    CHECK(std::count(cs.begin(), cs.end(), '\n') == 11);
    CHECK(std::count(rs.begin(), rs.end(), '\n') == 16);

    test::TempDir dir("report");
    SimilarityStudy study;
    study.points = {{0.1, 1.0, 0.1, 2.0, 0.2, 3, 3}};
    export_report(dir.path(), rep, &study);
    for (const char* f : {"sweep.csv", "residuals.csv", "similarity.csv", "frr.png", "residual_mean.png",
                          "residual_abs.png", "similarity.png"})
        CHECK(std::filesystem::exists(dir / f));
    const auto png = read_png(dir / "frr.png");
    CHECK(png.width == 480);
    CHECK(png.height == 320);
}

TEST_CASE("baseline options are a single anchored pass") {
    const auto b = unidirectional_baseline();
    CHECK(b.iterations == 1);
    CHECK(b.use_patch_anchor);
    CHECK_FALSE(b.use_adv_adjust);
}

TEST_CASE("line plots render labelled series") {
    PlotSpec p;
    p.title = "t";
    p.series.push_back({"a", {0, 1, 2}, {0, 1, 0}, palette(0)});
    p.width = 200;
    p.height = 100;
    const auto img = render_line_plot(p);
    CHECK(img.width == 200);
    CHECK(img.height == 100);
    std::size_t dark = 0;
    for (auto v : img.rgb) dark += v < 128;
    CHECK(dark > 0);
}
