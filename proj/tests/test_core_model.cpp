#include "support.hpp"

#include "rbtn/checkpoint.hpp"
#include "rbtn/networks.hpp"
#include "rbtn/ops.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace rbtn;
using rbtn::test::random_image;
using rbtn::test::tiny_arch;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// <W, y> for a fixed random W, so dL/dy = W.
template <typename T>
double probe(const FeatureMap<T>& y, const Matrix<T>& w) {
    return static_cast<double>((y.data.array() * w.array()).sum());
}

} // namespace

TEST_CASE("build_models: D takes a 256x256x6 pair at full size") {
    ArchConfig a;
    a.image_size = 256;
    a.depth = 4;
    auto b = build_models<float>(a);
    CHECK(b.D.input_channels() == 6);
    CHECK(b.D.input_size() == 256);
}

TEST_CASE("build_models: same config twice gives identical parameters") {
    auto a = build_models<float>(tiny_arch());
    auto b = build_models<float>(tiny_arch());
    CHECK(a.f.params() == b.f.params());
    CHECK(a.F.params() == b.F.params());
    CHECK(a.D.params() == b.D.params());
    auto c = build_models<float>(tiny_arch(16, 3, 4, 2));
    CHECK_FALSE(a.f.params() == c.f.params());
}

TEST_CASE("build_models: f and F share topology") {
    auto b = build_models<double>(tiny_arch());
    REQUIRE(b.f.params().size() == b.F.params().size());
    for (std::size_t i = 0; i < b.f.params().size(); ++i) {
        CHECK(b.f.params().names[i] == b.F.params().names[i]);
        CHECK(b.f.params().values[i].rows() == b.F.params().values[i].rows());
        CHECK(b.f.params().values[i].cols() == b.F.params().values[i].cols());
    }
}

TEST_CASE("ArchConfig: invalid size/depth combinations are rejected") {
    CHECK_THROWS_AS(tiny_arch(48, 2).validate(), ConfigError);
    CHECK_THROWS_AS(tiny_arch(16, 5).validate(), ConfigError);
    CHECK_THROWS_AS(tiny_arch(16, 0).validate(), ConfigError);
    CHECK_THROWS_AS(build_models<float>(tiny_arch(2, 1)), ConfigError);
    CHECK_NOTHROW(tiny_arch(16, 4).validate());
}

TEST_CASE("64x64 depth 4 traces a 4x4 bottleneck") {
    ArchConfig a;
    CHECK(a.bottleneck_size() == 4);
    auto b = build_models<float>(a);
    typename Generator<float>::Tape tape;
    Image<float> x(64, Domain::face, 0.3f);
    b.f.forward(to_batch(x), &tape);
    REQUIRE(tape.enc_out.size() == 4);
    CHECK(tape.enc_out.back().height == 4);
    CHECK(tape.enc_out.back().width == 4);
    CHECK(tape.dec_out.back().height == 64);
    CHECK(tape.dec_out.back().channels() == 3);
}

TEST_CASE("decoder stages consume the mirrored encoder output") {
    for (int depth = 2; depth <= 5; ++depth) {
        Generator<float> g(tiny_arch(64, depth, 4), 9);
        CHECK(g.decoder_input_channels(0) == g.encoder_output_channels(depth - 1));
        for (int i = 1; i < depth; ++i)
            CHECK(g.decoder_input_channels(i) ==
                  g.decoder_output_channels(i - 1) + g.encoder_output_channels(depth - 1 - i));
        CHECK(g.decoder_output_channels(depth - 1) == 3);
    }
}

TEST_CASE("generators preserve shape and stay in [-1, 1]") {
    std::mt19937_64 rng(3);
    auto b = build_models<float>(tiny_arch(32, 3, 4));
    for (int trial = 0; trial < 5; ++trial) {
        auto face = random_image<float>(32, Domain::face, rng, -3.0, 3.0);
        auto s = forward_f(face, b);
        CHECK(s.size == 32);
        CHECK(s.domain == Domain::sketch);
        CHECK(s.pixels.rows() == 3);
        CHECK(s.pixels.maxCoeff() <= 1.0f);
        CHECK(s.pixels.minCoeff() >= -1.0f);
        auto f = forward_F(s, b);
        CHECK(f.domain == Domain::face);
        CHECK(f.pixels.cwiseAbs().maxCoeff() <= 1.0f);
    }
}

TEST_CASE("forward passes reject wrong domains and sizes") {
    auto b = build_models<float>(tiny_arch());
    Image<float> face(16, Domain::face), sketch(16, Domain::sketch), big(32, Domain::face);
    CHECK_THROWS_AS(forward_f(sketch, b), UsageError);
    CHECK_THROWS_AS(forward_F(face, b), UsageError);
    CHECK_THROWS_AS(forward_f(big, b), ShapeError);
    CHECK_THROWS_AS(discriminate(sketch, face, b), UsageError);
}

TEST_CASE("forward passes are deterministic and batch-independent") {
    std::mt19937_64 rng(4);
    auto b = build_models<double>(tiny_arch());
    auto x0 = random_image<double>(16, Domain::face, rng);
    auto x1 = random_image<double>(16, Domain::face, rng);
    CHECK(forward_f(x0, b) == forward_f(x0, b));
    const Image<double>* both[] = {&x0, &x1};
    auto batch = forward_batch<double>(b.f, both, Domain::sketch);
    REQUIRE(batch.size() == 2);
    CHECK((batch[1].pixels - forward_f(x1, b).pixels).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("discriminate lies strictly inside (0, 1)") {
    std::mt19937_64 rng(5);
    auto b = build_models<double>(tiny_arch());
    for (int i = 0; i < 10; ++i) {
        const double p = discriminate(random_image<double>(16, Domain::face, rng),
                                      random_image<double>(16, Domain::sketch, rng), b);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("constant-output D has zero input gradient") {
    std::mt19937_64 rng(6);
    auto b = build_models<double>(tiny_arch());
    const std::size_t fc = b.D.params().size() - 2;
    b.D.params().values[fc].setZero();
    b.D.params().values[fc + 1](0, 0) = 0.7;
    auto face = random_image<double>(16, Domain::face, rng);
    auto sketch = random_image<double>(16, Domain::sketch, rng);
    CHECK(discriminator_logit(face, sketch, b) == doctest::Approx(0.7));
    auto g = grad_D_wrt_sketch(face, sketch, b);
    CHECK(g.size == 16);
    CHECK(g.pixels.rows() == 3);
    CHECK(g.pixels.cols() == 256);
    CHECK(g.pixels.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad_D_wrt_sketch and grad_D_wrt_face match central differences on 8x8") {
    std::mt19937_64 rng(7);
    auto b = build_models<double>(tiny_arch(8, 2, 4, 11));
    auto face = random_image<double>(8, Domain::face, rng);
    auto sketch = random_image<double>(8, Domain::sketch, rng);
    const auto gs = grad_D_wrt_sketch(face, sketch, b);
    const auto gf = grad_D_wrt_face(face, sketch, b);
    // The net is piecewise smooth and its input gradients are ~1e-7 against
    // log D ~ -0.7, so a small h drowns in round-off.
    const double h = 1e-4;
    auto log_d = [&](const Image<double>& f, const Image<double>& s) {
        return log_sigmoid(discriminator_logit(f, s, b));
    };
    double worst = 0.0;
    for (Eigen::Index n = 0; n < sketch.pixels.size(); ++n) {
        Image<double> up = sketch, dn = sketch;
        up.pixels.data()[n] += h;
        dn.pixels.data()[n] -= h;
        worst = std::max(worst, rel_err((log_d(face, up) - log_d(face, dn)) / (2 * h), gs.pixels.data()[n]));
        Image<double> fu = face, fd = face;
        fu.pixels.data()[n] += h;
        fd.pixels.data()[n] -= h;
        worst = std::max(worst, rel_err((log_d(fu, sketch) - log_d(fd, sketch)) / (2 * h), gf.pixels.data()[n]));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("non-finite discriminator gradient surfaces as NumericError") {
    auto b = build_models<double>(tiny_arch());
    b.D.params().values[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    Image<double> face(16, Domain::face), sketch(16, Domain::sketch);
    CHECK_THROWS_AS(grad_D_wrt_sketch(face, sketch, b), NumericError);
}

TEST_CASE("im2col and col2im are adjoint") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0.0, 1.0);
    ConvGeometry g;
    FeatureMap<double> x(3, 2, 8, 8);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = n(rng);
    const int oh = g.output_extent(8), ow = g.output_extent(8);
    Matrix<double> cols = im2col(x, oh, ow, g);
    Matrix<double> c(cols.rows(), cols.cols());
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
    const FeatureMap<double> back = col2im(c, 3, 2, 8, 8, oh, ow, g);
    const double lhs = (cols.array() * c.array()).sum();
    const double rhs = (x.data.array() * back.data.array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("generator parameter gradients match central differences") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    Generator<double> g(tiny_arch(8, 2, 2), 10);
    FeatureMap<double> x(3, 2, 8, 8);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = n(rng);
    typename Generator<double>::Tape tape;
    const FeatureMap<double> y = g.forward(x, &tape);
    Matrix<double> w(y.data.rows(), y.data.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    ParamSet<double> grads = g.params().zeros_like();
    FeatureMap<double> grad_out = y;
    grad_out.data = w;
    const FeatureMap<double> gx = g.backward(tape, grad_out, &grads, true);

    const double h = 1e-4;
    double worst = 0.0;
    for (std::size_t p = 0; p < g.params().size(); ++p) {
        const Eigen::Index count = std::min<Eigen::Index>(g.params().values[p].size(), 6);
        for (Eigen::Index i = 0; i < count; ++i) {
            Generator<double> up = g, dn = g;
            up.params().values[p].data()[i] += h;
            dn.params().values[p].data()[i] -= h;
            const double fd = (probe(up.forward(x), w) - probe(dn.forward(x), w)) / (2 * h);
            worst = std::max(worst, rel_err(fd, grads.values[p].data()[i]));
        }
    }
    for (Eigen::Index i = 0; i < x.data.size(); i += 17) {
        FeatureMap<double> up = x, dn = x;
        up.data.data()[i] += h;
        dn.data.data()[i] -= h;
        worst = std::max(worst, rel_err((probe(g.forward(up), w) - probe(g.forward(dn), w)) / (2 * h), gx.data.data()[i]));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("instance norm backward matches central differences") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 1.0);
    FeatureMap<double> x(2, 2, 4, 4);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = n(rng);
    Matrix<double> gamma(2, 1), beta(2, 1);
    gamma << 1.3, -0.4;
    beta << 0.1, 0.2;
    InstanceNormSaved<double> saved;
    const FeatureMap<double> y = instance_norm(x, gamma, beta, &saved);
    Matrix<double> w(y.data.rows(), y.data.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    FeatureMap<double> go = y;
    go.data = w;
    Matrix<double> gg = Matrix<double>::Zero(2, 1), gb = Matrix<double>::Zero(2, 1);
    const FeatureMap<double> gx = instance_norm_backward(go, saved, gamma, &gg, &gb);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < x.data.size(); ++i) {
        FeatureMap<double> up = x, dn = x;
        up.data.data()[i] += h;
        dn.data.data()[i] -= h;
        const double fd =
            (probe(instance_norm<double>(up, gamma, beta, nullptr), w) - probe(instance_norm<double>(dn, gamma, beta, nullptr), w)) /
            (2 * h);
        CHECK(rel_err(fd, gx.data.data()[i]) < 1e-4);
    }
}

TEST_CASE("log_sigmoid is stable at extreme logits") {
    CHECK(log_sigmoid(800.0) == doctest::Approx(0.0));
    CHECK(log_sigmoid(-800.0) == doctest::Approx(-800.0));
    CHECK(log_sigmoid(0.0) == doctest::Approx(std::log(0.5)));
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto b = build_models<float>(tiny_arch(16, 3, 4, 21));
    auto opt = fresh_optimizer_states(b);
    opt.f.step = 5;
    opt.D.m.values[0](0, 0) = 0.25f;
    const std::string bytes = serialize_checkpoint(b, &opt, 7);
    auto ck = deserialize_checkpoint<float>(bytes);
    CHECK(ck.bundle.arch == b.arch);
    CHECK(ck.bundle.f.params() == b.f.params());
    CHECK(ck.bundle.F.params() == b.F.params());
    CHECK(ck.bundle.D.params() == b.D.params());
    REQUIRE(ck.optimizer.has_value());
    CHECK(*ck.optimizer == opt);
    CHECK(ck.epoch == 7);
    CHECK(serialize_checkpoint(ck.bundle, &*ck.optimizer, 7) == bytes);

    test::TempDir dir("ckpt");
    save_checkpoint(dir / "m.ckpt", b);
    auto loaded = load_checkpoint<double>(dir / "m.ckpt");
    CHECK_FALSE(loaded.optimizer.has_value());
    CHECK(loaded.bundle.f.params().cast<float>() == b.f.params());
}

TEST_CASE("corrupt checkpoints are rejected") {
    auto b = build_models<float>(tiny_arch());
    std::string bytes = serialize_checkpoint(b);
    CHECK_THROWS_AS(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() / 2)), IoError);
    CHECK_THROWS_AS(deserialize_checkpoint<float>(bytes + "x"), IoError);
    bytes[0] ^= 0x55;
    CHECK_THROWS_AS(deserialize_checkpoint<float>(bytes), IoError);
    CHECK_THROWS_AS(load_checkpoint<float>("/nonexistent/dir/m.ckpt"), IoError);
}
