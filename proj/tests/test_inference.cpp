#include "support.hpp"

#include "rbtn/inference.hpp"

#include <doctest.h>

#include <algorithm>

using namespace rbtn;
using rbtn::test::random_image;
using rbtn::test::tiny_arch;

namespace {

template <typename T>
bool same_trace(const GenerationTrace<T>& a, const GenerationTrace<T>& b) {
    if (a.frames.size() != b.frames.size() || a.residuals.size() != b.residuals.size()) return false;
    for (std::size_t i = 0; i < a.frames.size(); ++i)
        if (a.frames[i].k != b.frames[i].k || !(a.frames[i].face == b.frames[i].face) ||
            !(a.frames[i].sketch == b.frames[i].sketch))
            return false;
    for (std::size_t i = 0; i < a.residuals.size(); ++i)
        if (a.residuals[i].mean_r != b.residuals[i].mean_r || a.residuals[i].mean_abs_r != b.residuals[i].mean_abs_r)
            return false;
    return true;
}

GenerationOptions opts(int iterations, bool anchor = true, bool adv = true) {
    GenerationOptions o;
    o.iterations = iterations;
    o.use_patch_anchor = anchor;
    o.use_adv_adjust = adv;
    return o;
}

struct Fixture {
    ModelBundle<double> bundle = build_models<double>(tiny_arch(16, 3, 4, 5));
    std::mt19937_64 rng{42};
    Image<double> face_a = random_image<double>(16, Domain::face, rng);
    Image<double> sketch_b = random_image<double>(16, Domain::sketch, rng);
};

} // namespace

TEST_CASE("apply_patch: full, single-pixel and half-plane masks") {
    std::mt19937_64 rng(1);
    auto x = random_image<double>(16, Domain::face, rng);
    auto src = random_image<double>(16, Domain::face, rng);

    const auto full = make_patch(src, Mask(16, 1));
    CHECK(apply_patch(x, full) == src);

    Mask one(16, 0);
    one.at(5, 7) = 1;
    const auto out1 = apply_patch(x, make_patch(src, one));
    for (int y = 0; y < 16; ++y)
        for (int xx = 0; xx < 16; ++xx) {
            const auto n = x.index(y, xx);
            if (y == 5 && xx == 7) CHECK(out1.pixels.col(n) == src.pixels.col(n));
            else CHECK(out1.pixels.col(n) == x.pixels.col(n));
        }

    const Mask half = Mask::rect(16, 0, 0, 16, 8);
    const auto out2 = apply_patch(x, make_patch(src, half));
    for (Eigen::Index n = 0; n < half.map.size(); ++n)
        CHECK(out2.pixels.col(n) == (half.map(n) ? src.pixels.col(n) : x.pixels.col(n)));
}

TEST_CASE("apply_patch and Patch reject contract violations") {
    std::mt19937_64 rng(2);
    auto face = random_image<double>(16, Domain::face, rng);
    auto sketch = random_image<double>(16, Domain::sketch, rng);
    const auto p = make_patch(face, Mask::rect(16, 0, 0, 4, 4));
    CHECK_THROWS_AS(apply_patch(sketch, p), UsageError);
    CHECK_THROWS_AS(make_patch(face, Mask(16, 0)), UsageError);
    CHECK_THROWS_AS(make_patch(face, Mask(8, 1)), ShapeError);
    Patch<double> leaky;
    leaky.pixels = face;
    leaky.mask = Mask::rect(16, 0, 0, 4, 4);
    CHECK_THROWS_AS(leaky.validate(), UsageError);
}

TEST_CASE("init_canvas: background, full patch and order independence") {
    std::mt19937_64 rng(3);
    auto face = random_image<double>(16, Domain::face, rng);
    auto other = random_image<double>(16, Domain::face, rng);
    auto sketch = random_image<double>(16, Domain::sketch, rng);

    const std::vector<Patch<double>> only_sketch{make_patch(sketch, Mask::rect(16, 0, 0, 5, 5))};
    const auto bg = init_canvas<double>(only_sketch, Domain::face, 16);
    CHECK(bg.domain == Domain::face);
    CHECK((bg.pixels.array() == 1.0).all());

    const std::vector<Patch<double>> whole{make_patch(face, Mask(16, 1))};
    CHECK(init_canvas<double>(whole, Domain::face, 16) == face);

    const auto p1 = make_patch(face, Mask::rect(16, 0, 0, 8, 8));
    const auto p2 = make_patch(other, Mask::rect(16, 8, 8, 8, 8));
    const std::vector<Patch<double>> ab{p1, p2}, ba{p2, p1};
    const Image<double> blank(16, Domain::face, 1.0);
    const auto seq = apply_patch(apply_patch(blank, p1), p2);
    CHECK(init_canvas<double>(ab, Domain::face, 16) == seq);
    CHECK(init_canvas<double>(ba, Domain::face, 16) == seq);
}

TEST_CASE("same-domain overlap is rejected with the patch indices; cross-domain overlap is allowed") {
    std::mt19937_64 rng(4);
    auto face = random_image<double>(16, Domain::face, rng);
    auto sketch = random_image<double>(16, Domain::sketch, rng);
    const std::vector<Patch<double>> clash{make_patch(face, Mask::rect(16, 0, 0, 8, 8)),
                                           make_patch(sketch, Mask::rect(16, 0, 0, 8, 8)),
                                           make_patch(face, Mask::rect(16, 4, 4, 8, 8))};
    try {
        validate_patches<double>(clash, 16);
        FAIL("expected an overlap error");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("(0, 2)") != std::string::npos);
    }
    const std::vector<Patch<double>> cross{clash[0], clash[1]};
    CHECK_NOTHROW(validate_patches<double>(cross, 16));
    CHECK_THROWS_AS(validate_patches<double>(std::span<const Patch<double>>{}, 16), UsageError);
    CHECK_THROWS_AS(validate_patches<double>(cross, 32), ShapeError);
}

TEST_CASE("adjust_by_discriminator: zero step, constant D, small ascent step") {
    Fixture fx;
    const auto s = forward_f(fx.face_a, fx.bundle);
    CHECK(adjust_by_discriminator(fx.face_a, s, fx.bundle, 0.0) == s);

    auto constant = fx.bundle;
    const std::size_t fc = constant.D.params().size() - 2;
    constant.D.params().values[fc].setZero();
    CHECK(adjust_by_discriminator(fx.face_a, s, constant, 1.0) == s);

    for (int t = 0; t < 5; ++t) {
        auto sk = random_image<double>(16, Domain::sketch, fx.rng, -0.9, 0.9);
        const double before = discriminate(fx.face_a, sk, fx.bundle);
        const auto adj = adjust_by_discriminator(fx.face_a, sk, fx.bundle, 1e-3);
        CHECK(discriminate(fx.face_a, adj, fx.bundle) >= before);
        const auto down = adjust_by_discriminator(fx.face_a, sk, fx.bundle, 1e-3, true);
        CHECK(discriminate(fx.face_a, down, fx.bundle) <= before);
    }
    CHECK_THROWS_AS(adjust_by_discriminator(fx.face_a, s, fx.bundle, -1.0), ConfigError);
}

TEST_CASE("adjust_by_discriminator clamps to [-1, 1]") {
    Fixture fx;
    const auto adj = adjust_by_discriminator(fx.face_a, fx.sketch_b, fx.bundle, 1e6);
    CHECK(adj.pixels.maxCoeff() <= 1.0);
    CHECK(adj.pixels.minCoeff() >= -1.0);
}

TEST_CASE("generate_step: anchoring and the plain round trip") {
    Fixture fx;
    const Mask m = Mask::rect(16, 4, 4, 6, 6);
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, m)};
    std::mt19937_64 rng(5);
    const auto x = random_image<double>(16, Domain::face, rng);

    const auto on = generate_step<double>(x, patches, fx.bundle, opts(1));
    CHECK(anchor_holds(on.face, patches[0]));
    CHECK(on.next_face == forward_F(on.sketch, fx.bundle));

    const auto off = generate_step<double>(x, patches, fx.bundle, opts(1, false, false));
    CHECK(off.face == x);
    CHECK(off.sketch == forward_f(x, fx.bundle));
    CHECK(off.next_face == forward_F(forward_f(x, fx.bundle), fx.bundle));

    const auto noadv = generate_step<double>(x, patches, fx.bundle, opts(1, true, false));
    CHECK(noadv.sketch == forward_f(apply_patch(x, patches[0]), fx.bundle));
}

TEST_CASE("generate: frame bookkeeping and residual identity") {
    Fixture fx;
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, Mask::rect(16, 2, 2, 8, 8))};
    auto o = opts(7);
    o.record_every = 3;
    const auto t = generate<double>(patches, fx.bundle, o);
    std::vector<int> ks;
    for (const auto& f : t.frames) ks.push_back(f.k);
    CHECK(ks == std::vector<int>{0, 3, 6, 7});
    CHECK(t.residuals.size() == 7);
    CHECK_FALSE(t.cancelled);

    o.record_every = 1;
    const auto full = generate<double>(patches, fx.bundle, o);
    REQUIRE(full.frames.size() == 8);
    for (int k = 1; k <= 7; ++k) {
        const auto& r = full.residuals[k - 1];
        CHECK(r.k == k);
        const Matrix<double> d = full.frames[k].face.pixels - full.frames[k - 1].face.pixels;
        CHECK(std::abs(r.mean_r - d.mean()) <= 1e-15);
        CHECK(std::abs(r.mean_abs_r - d.cwiseAbs().mean()) <= 1e-15);
    }
    for (const auto& f : full.frames) {
        CHECK(f.face.pixels.cwiseAbs().maxCoeff() <= 1.0);
        CHECK(f.sketch.pixels.cwiseAbs().maxCoeff() <= 1.0);
    }
    // Frame k's face is F of frame k-1's sketch, re-anchored.
    for (int k = 1; k <= 7; ++k)
        CHECK(full.frames[k].face == apply_patch(forward_F(full.frames[k - 1].sketch, fx.bundle), patches[0]));
    CHECK_THROWS_AS(generate<double>(patches, fx.bundle, opts(0)), ConfigError);
}

TEST_CASE("generate: deterministic and anchored in every frame") {
    Fixture fx;
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, Mask::rect(16, 3, 5, 9, 4))};
    const auto a = generate<double>(patches, fx.bundle, opts(20));
    const auto b = generate<double>(patches, fx.bundle, opts(20));
    CHECK(same_trace(a, b));
    for (const auto& f : a.frames) CHECK(anchor_holds(f.face, patches[0]));
}

TEST_CASE("generate: both toggles off iterates F o f from the canvas") {
    Fixture fx;
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, Mask::rect(16, 0, 0, 10, 10))};
    const auto t = generate<double>(patches, fx.bundle, opts(6, false, false));
    Image<double> x = init_canvas<double>(patches, Domain::face, 16);
    for (const auto& f : t.frames) {
        CHECK(f.face == x);
        CHECK(f.sketch == forward_f(x, fx.bundle));
        x = forward_F(forward_f(x, fx.bundle), fx.bundle);
    }
}

TEST_CASE("composite: cross-person, cross-domain anchors hold bit-exactly") {
    Fixture fx;
    const Mask eyes = Mask::rect(16, 2, 3, 12, 4);
    const Mask mouth = Mask::rect(16, 4, 11, 8, 3);
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, eyes), make_patch(fx.sketch_b, mouth)};
    auto o = opts(12);
    o.record_every = 2;
    const auto t = composite<double>(patches, fx.bundle, o);
    CHECK(t.frames.size() == 7);
    for (const auto& f : t.frames) {
        CHECK(anchor_holds(f.face, patches[0]));
        CHECK(anchor_holds(f.sketch, patches[1]));
    }
    const std::vector<Patch<double>> swapped{patches[1], patches[0]};
    CHECK(same_trace(t, composite<double>(swapped, fx.bundle, o)));

    const std::vector<Patch<double>> single{patches[0]};
    CHECK(same_trace(composite<double>(single, fx.bundle, o), generate<double>(single, fx.bundle, o)));

    const std::vector<Patch<double>> overlapping{patches[0], make_patch(fx.face_a, Mask::rect(16, 0, 0, 4, 4))};
    CHECK_THROWS_AS(composite<double>(overlapping, fx.bundle, o), UsageError);
}

TEST_CASE("composite: cross-domain overlapping patches are both anchored") {
    Fixture fx;
    const Mask m = Mask::rect(16, 4, 4, 8, 8);
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, m), make_patch(fx.sketch_b, m)};
    const auto t = composite<double>(patches, fx.bundle, opts(5));
    for (const auto& f : t.frames) {
        CHECK(anchor_holds(f.face, patches[0]));
        CHECK(anchor_holds(f.sketch, patches[1]));
    }
}

TEST_CASE("anchoring off lets a sketch patch seed only the first iteration") {
    Fixture fx;
    const std::vector<Patch<double>> patches{make_patch(fx.sketch_b, Mask::rect(16, 0, 0, 16, 8))};
    const auto t = generate<double>(patches, fx.bundle, opts(3, false, false));
    CHECK(anchor_holds(t.frames[0].sketch, patches[0]));
    CHECK((t.frames[0].face.pixels.array() == 1.0).all());
    CHECK(t.frames[1].sketch == forward_f(t.frames[1].face, fx.bundle));
}

TEST_CASE("progress callback sees every k and can cancel") {
    Fixture fx;
    const std::vector<Patch<double>> patches{make_patch(fx.face_a, Mask::rect(16, 2, 2, 8, 8))};
    std::vector<int> seen;
    int recorded = 0;
    auto o = opts(10);
    o.record_every = 4;
    const auto t = generate<double>(patches, fx.bundle, o, [&](int k, const Frame<double>* f) {
        seen.push_back(k);
        if (f) ++recorded;
        return k < 5;
    });
    CHECK(seen == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK(recorded == 2);
    CHECK(t.cancelled);
    CHECK(t.frames.back().k == 5);
    CHECK(t.residuals.size() == 5);
}

TEST_CASE("float and double runs agree closely") {
    Fixture fx;
    const auto fb = fx.bundle.cast<float>();
    const std::vector<Patch<double>> pd{make_patch(fx.face_a, Mask::rect(16, 2, 2, 8, 8))};
    const std::vector<Patch<float>> pf{make_patch(fx.face_a.cast<float>(), Mask::rect(16, 2, 2, 8, 8))};
    const auto td = generate<double>(pd, fx.bundle, opts(5));
    const auto tf = generate<float>(pf, fb, opts(5));
    CHECK((td.final_frame().face.pixels.cast<float>() - tf.final_frame().face.pixels).cwiseAbs().maxCoeff() < 1e-4f);
}
