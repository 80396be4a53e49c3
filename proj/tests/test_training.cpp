#include "support.hpp"

#include "rbtn/losses.hpp"
#include "rbtn/ops.hpp"
#include "rbtn/training.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

using namespace rbtn;
using rbtn::test::random_image;
using rbtn::test::random_pairs;
using rbtn::test::tiny_arch;

namespace {

double brute_mean_abs(const Image<double>& a, const Image<double>& b) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < a.size; ++y)
            for (int x = 0; x < a.size; ++x) s += std::abs(a.pixels(c, a.index(y, x)) - b.pixels(c, b.index(y, x)));
    return s / (3.0 * a.size * a.size);
}

double brute_log(double p) { return std::log(std::min(std::max(p, 1e-7), 1.0 - 1e-7)); }

TrainConfig small_cfg(int batch = 2) {
    TrainConfig c;
    c.batch_size = batch;
    c.epochs = 1;
    c.seed = 3;
    return c;
}

// Sets D's final layer to a constant logit, making D(pair) independent of its input.
template <typename T>
void make_constant_D(ModelBundle<T>& b, T logit) {
    const std::size_t fc = b.D.params().size() - 2;
    b.D.params().values[fc].setZero();
    b.D.params().values[fc + 1](0, 0) = logit;
}

} // namespace

TEST_CASE("reconstruction_loss: identical images give 0") {
    std::mt19937_64 rng(1);
    auto x = random_image<double>(4, Domain::face, rng);
    CHECK(reconstruction_loss(x, x, x, x, x, x) == 0.0);
}

TEST_CASE("reconstruction_loss: ones against zeros on 2x2x3 gives 4") {
    Image<double> one(2, Domain::face, 1.0), zero(2, Domain::face, 0.0);
    Image<double> one_s(2, Domain::sketch, 1.0), zero_s(2, Domain::sketch, 0.0);
    CHECK(reconstruction_loss(one, one_s, zero, zero, zero_s, zero_s) == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("reconstruction_loss: negating every image leaves it unchanged") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
        std::vector<Image<double>> v;
        for (int i = 0; i < 6; ++i) v.push_back(random_image<double>(4, Domain::face, rng));
        const double a = reconstruction_loss(v[0], v[1], v[2], v[3], v[4], v[5]);
        for (auto& im : v) im.pixels = -im.pixels;
        CHECK(reconstruction_loss(v[0], v[1], v[2], v[3], v[4], v[5]) == doctest::Approx(a).epsilon(1e-14));
    }
}

TEST_CASE("reconstruction_loss matches an elementwise oracle") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        std::vector<Image<double>> v;
        for (int i = 0; i < 6; ++i) v.push_back(random_image<double>(4, i % 2 ? Domain::sketch : Domain::face, rng));
        const double oracle = brute_mean_abs(v[0], v[2]) + brute_mean_abs(v[0], v[3]) + brute_mean_abs(v[1], v[4]) +
                              brute_mean_abs(v[1], v[5]);
        CHECK(std::abs(reconstruction_loss(v[0], v[1], v[2], v[3], v[4], v[5]) - oracle) <= 1e-12);
    }
}

TEST_CASE("discriminator_loss: equal probabilities give 0") {
    for (double v : {1e-9, 0.01, 0.3, 0.5, 0.9, 1.0}) {
        const std::vector<double> fakes(4, v);
        CHECK(std::abs(discriminator_loss(fakes, v)) < 1e-15);
    }
}

TEST_CASE("discriminator_loss: fakes at 1/e and a real at 1 give -1") {
    const std::vector<double> fakes(4, std::exp(-1.0));
    CHECK(discriminator_loss(fakes, 1.0) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("discriminator_loss decreases strictly with any fake probability") {
    std::vector<double> fakes{0.4, 0.5, 0.6, 0.7};
    double prev = discriminator_loss(fakes, 0.8);
    for (std::size_t i = 0; i < fakes.size(); ++i) {
        fakes[i] *= 0.9;
        const double now = discriminator_loss(fakes, 0.8);
        CHECK(now < prev);
        prev = now;
    }
}

TEST_CASE("discriminator_loss clamps and counts probabilities at 0 and 1") {
    int clamped = 0;
    const std::vector<double> fakes{0.0, 0.5};
    const std::vector<double> reals{1.0};
    const double l = discriminator_loss(fakes, reals, &clamped);
    CHECK(clamped == 2);
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx((std::log(1e-7) + std::log(0.5)) / 2 - std::log(1 - 1e-7)));
    CHECK_THROWS_AS(discriminator_loss(std::vector<double>{}, 0.5), UsageError);
    CHECK_THROWS_AS(discriminator_loss(std::vector<double>{1.5}, 0.5), NumericError);
}

TEST_CASE("discriminator_loss matches a brute-force oracle") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> fakes(4), reals(3);
        for (auto& p : fakes) p = u(rng);
        for (auto& p : reals) p = u(rng);
        double fs = 0, rs = 0;
        for (double p : fakes) fs += brute_log(p);
        for (double p : reals) rs += brute_log(p);
        CHECK(std::abs(discriminator_loss(fakes, reals) - (fs / 4 - rs / 3)) <= 1e-12);
    }
    CHECK(generator_adversarial_loss(std::vector<double>{0.25, 0.5}) ==
          doctest::Approx(-(std::log(0.25) + std::log(0.5)) / 2));
}

TEST_CASE("round_trip composes f and F as specified") {
    std::mt19937_64 rng(5);
    auto b = build_models<double>(tiny_arch());
    auto x_I = random_image<double>(16, Domain::face, rng);
    auto x_S = random_image<double>(16, Domain::sketch, rng);
    auto rt = round_trip(x_I, x_S, b);
    CHECK(rt.x_S0 == forward_f(x_I, b));
    CHECK(rt.x_I1 == forward_F(rt.x_S0, b));
    CHECK(rt.x_I0 == forward_F(x_S, b));
    CHECK(rt.x_S1 == forward_f(rt.x_I0, b));
    for (const auto* im : {&rt.x_S0, &rt.x_I1, &rt.x_I0, &rt.x_S1}) CHECK(im->size == 16);
    CHECK_THROWS_AS(round_trip(x_I, Image<double>(32, Domain::sketch), b), ShapeError);
}

TEST_CASE("fake_pair_set enumerates the four fake pairs and their subsets") {
    std::mt19937_64 rng(6);
    auto b = build_models<float>(tiny_arch());
    auto x_I = random_image<float>(16, Domain::face, rng);
    auto x_S = random_image<float>(16, Domain::sketch, rng);
    const auto set = fake_pair_set(x_I, x_S, b);
    const auto rt = round_trip(x_I, x_S, b);
    REQUIRE(set.pairs.size() == 4);
    CHECK(set.pairs[0].kind == FakeKind::I_S0);
    CHECK(set.pairs[0].face == x_I);
    CHECK(set.pairs[0].sketch == rt.x_S0);
    CHECK(set.pairs[1].kind == FakeKind::I1_S0);
    CHECK(set.pairs[1].face == rt.x_I1);
    CHECK(set.pairs[1].sketch == rt.x_S0);
    CHECK(set.pairs[2].kind == FakeKind::I0_S);
    CHECK(set.pairs[2].face == rt.x_I0);
    CHECK(set.pairs[2].sketch == x_S);
    CHECK(set.pairs[3].kind == FakeKind::I0_S1);
    CHECK(set.pairs[3].face == rt.x_I0);
    CHECK(set.pairs[3].sketch == rt.x_S1);

    const auto of = set.omega_f(), oF = set.omega_F();
    REQUIRE(of.size() == 2);
    REQUIRE(oF.size() == 2);
    CHECK(of[0]->kind == FakeKind::I_S0);
    CHECK(of[1]->kind == FakeKind::I0_S1);
    CHECK(oF[0]->kind == FakeKind::I1_S0);
    CHECK(oF[1]->kind == FakeKind::I0_S);
    std::set<const FakePair<float>*> uni(of.begin(), of.end());
    uni.insert(oF.begin(), oF.end());
    CHECK(uni.size() == 4);

    for (const auto& p : set.pairs) CHECK_FALSE((p.face == x_I && p.sketch == x_S));
}

TEST_CASE("discriminator_objective agrees with the probability-level loss") {
    std::mt19937_64 rng(7);
    auto b = build_models<double>(tiny_arch());
    auto batch = random_pairs<double>(3, 16, 8);
    std::vector<double> fakes, reals;
    for (const auto& p : batch) {
        reals.push_back(discriminate(p.face, p.sketch, b));
        for (const auto& f : fake_pair_set(p.face, p.sketch, b).pairs) fakes.push_back(discriminate(f.face, f.sketch, b));
    }
    const auto m = discriminator_objective<double>(batch, b, nullptr);
    CHECK(m.loss == doctest::Approx(discriminator_loss(fakes, reals)).epsilon(1e-9));
    CHECK(m.clamped == 0);
    double dr = 0, df = 0;
    for (double p : reals) dr += p;
    for (double p : fakes) df += p;
    CHECK(m.d_real_mean == doctest::Approx(dr / 3));
    CHECK(m.d_fake_mean == doctest::Approx(df / 12));
}

TEST_CASE("generator objectives use their own subset and reconstruction terms") {
    auto b = build_models<double>(tiny_arch());
    auto batch = random_pairs<double>(1, 16, 9);
    const auto& p = batch[0];
    const auto rt = round_trip(p.face, p.sketch, b);
    TrainConfig cfg;
    cfg.lambda = 7.0;

    const auto of = generator_objective_f<double>(batch, b, cfg, nullptr);
    const double adv_f = -(std::log(discriminate(p.face, rt.x_S0, b)) + std::log(discriminate(rt.x_I0, rt.x_S1, b))) / 2;
    const double rec_f = mean_abs_diff(p.sketch, rt.x_S0) + mean_abs_diff(p.sketch, rt.x_S1);
    CHECK(of.adversarial == doctest::Approx(adv_f).epsilon(1e-9));
    CHECK(of.reconstruction == doctest::Approx(rec_f).epsilon(1e-12));
    CHECK(of.total == doctest::Approx(adv_f + 7.0 * rec_f).epsilon(1e-9));

    const auto oF = generator_objective_F<double>(batch, b, cfg, nullptr);
    const double adv_F = -(std::log(discriminate(rt.x_I0, p.sketch, b)) + std::log(discriminate(rt.x_I1, rt.x_S0, b))) / 2;
    const double rec_F = mean_abs_diff(p.face, rt.x_I0) + mean_abs_diff(p.face, rt.x_I1);
    CHECK(oF.adversarial == doctest::Approx(adv_F).epsilon(1e-9));
    CHECK(oF.reconstruction == doctest::Approx(rec_F).epsilon(1e-12));
}

TEST_CASE("each update changes only its own network") {
    auto b0 = build_models<float>(tiny_arch());
    auto batch = random_pairs<float>(2, 16, 10);
    auto opt = fresh_optimizer_states(b0);
    const TrainConfig cfg = small_cfg();

    auto b = b0;
    discriminator_step<float>(batch, b, opt.D, cfg);
    CHECK_FALSE(b.D.params() == b0.D.params());
    CHECK(b.f.params() == b0.f.params());
    CHECK(b.F.params() == b0.F.params());

    b = b0;
    generator_step_f<float>(batch, b, opt.f, cfg);
    CHECK_FALSE(b.f.params() == b0.f.params());
    CHECK(b.F.params() == b0.F.params());
    CHECK(b.D.params() == b0.D.params());

    b = b0;
    generator_step_F<float>(batch, b, opt.F, cfg);
    CHECK_FALSE(b.F.params() == b0.F.params());
    CHECK(b.f.params() == b0.f.params());
    CHECK(b.D.params() == b0.D.params());
}

TEST_CASE("zero lambda with a constant D leaves generators unchanged") {
    auto b = build_models<double>(tiny_arch());
    make_constant_D(b, 0.3);
    const auto b0 = b;
    auto batch = random_pairs<double>(2, 16, 11);
    auto opt = fresh_optimizer_states(b);
    TrainConfig cfg = small_cfg();
    cfg.lambda = 0.0;
    generator_step_f<double>(batch, b, opt.f, cfg);
    generator_step_F<double>(batch, b, opt.F, cfg);
    CHECK(b.f.params() == b0.f.params());
    CHECK(b.F.params() == b0.F.params());
}

TEST_CASE("a small plain gradient step lowers the frozen-batch objective") {
    auto b = build_models<double>(tiny_arch());
    auto batch = random_pairs<double>(2, 16, 12);
    TrainConfig cfg;
    SUBCASE("f") {
        ParamSet<double> g = b.f.params().zeros_like();
        const double before = generator_objective_f<double>(batch, b, cfg, &g).total;
        sgd_step(b.f.params(), g, 1e-5);
        CHECK(generator_objective_f<double>(batch, b, cfg, nullptr).total < before);
    }
    SUBCASE("F") {
        ParamSet<double> g = b.F.params().zeros_like();
        const double before = generator_objective_F<double>(batch, b, cfg, &g).total;
        sgd_step(b.F.params(), g, 1e-5);
        CHECK(generator_objective_F<double>(batch, b, cfg, nullptr).total < before);
    }
    SUBCASE("D") {
        ParamSet<double> g = b.D.params().zeros_like();
        const double before = discriminator_objective<double>(batch, b, &g).loss;
        sgd_step(b.D.params(), g, 1e-3);
        CHECK(discriminator_objective<double>(batch, b, nullptr).loss < before);
    }
}

TEST_CASE("a non-finite batch aborts the step and keeps parameters") {
    auto b = build_models<float>(tiny_arch());
    const auto b0 = b;
    auto batch = random_pairs<float>(2, 16, 13);
    batch[1].face.pixels(0, 0) = std::numeric_limits<float>::quiet_NaN();
    auto opt = fresh_optimizer_states(b);
    const TrainConfig cfg = small_cfg();
    CHECK_THROWS_AS(discriminator_step<float>(batch, b, opt.D, cfg), NumericError);
    CHECK_THROWS_AS(generator_step_f<float>(batch, b, opt.f, cfg), NumericError);
    CHECK_THROWS_AS(generator_step_F<float>(batch, b, opt.F, cfg), NumericError);
    CHECK(b.D.params() == b0.D.params());
    CHECK(b.f.params() == b0.f.params());
    CHECK(b.F.params() == b0.F.params());
    CHECK(opt.D.step == 0);
}

TEST_CASE("schedule: N steps give 3N D updates and N updates of f and F") {
    auto data = random_pairs<float>(5, 16, 14);
    for (int ratio : {3, 1, 2}) {
        TrainConfig cfg = small_cfg();
        cfg.d_updates_per_gen = ratio;
        Trainer<float> t(build_models<float>(tiny_arch()), cfg, data);
        const int N = 4;
        for (int i = 0; i < N; ++i) t.step();
        CHECK(t.d_updates() == ratio * N);
        CHECK(t.f_updates() == N);
        CHECK(t.F_updates() == N);
        CHECK(t.history().records.size() == std::size_t(N));
        for (int i = 0; i < N; ++i) CHECK(t.history().records[i].step == i);
    }
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto data = random_pairs<float>(6, 16, 15);
    TrainConfig cfg = small_cfg(4);
    cfg.epochs = 2;
    auto a = train<float>(data, tiny_arch(), cfg);
    auto b = train<float>(data, tiny_arch(), cfg);
    CHECK(a.history.same_values(b.history));
    CHECK(a.bundle.f.params() == b.bundle.f.params());
    CHECK(a.bundle.D.params() == b.bundle.D.params());
    CHECK(a.history.records.size() == 4);
    CHECK(a.history.records.back().epoch == 1);
    for (const auto& r : a.history.records) {
        CHECK(std::isfinite(r.l_rec));
        CHECK(std::isfinite(r.l_adv));
    }
    cfg.seed = 4;
    auto c = train<float>(data, tiny_arch(), cfg);
    CHECK_FALSE(a.history.same_values(c.history));
}

TEST_CASE("train writes a checkpoint per epoch and rejects empty data") {
    auto data = random_pairs<float>(3, 16, 16);
    test::TempDir dir("train");
    TrainConfig cfg = small_cfg(2);
    cfg.epochs = 2;
    TrainOptions opts;
    opts.checkpoint = dir / "m.ckpt";
    int epochs_seen = 0;
    opts.on_epoch = [&](int e, const StepRecord&) { CHECK(e == epochs_seen++); };
    auto res = train<float>(data, tiny_arch(), cfg, opts);
    CHECK(epochs_seen == 2);
    auto ck = load_checkpoint<float>(dir / "m.ckpt");
    CHECK(ck.epoch == 2);
    CHECK(ck.bundle.f.params() == res.bundle.f.params());
    REQUIRE(ck.optimizer.has_value());
    CHECK(*ck.optimizer == res.optimizer);
    CHECK_THROWS_AS(train<float>(std::span<const ImagePair<float>>{}, tiny_arch(), cfg), DataError);
}

TEST_CASE("a dataset of the wrong size is rejected") {
    auto data = random_pairs<float>(2, 32, 17);
    CHECK_THROWS_AS(Trainer<float>(build_models<float>(tiny_arch()), small_cfg(), data), ShapeError);
}

TEST_CASE("train config: parse, format and validation") {
    const TrainConfig d = parse_train_config("");
    CHECK(d.lambda == 100.0);
    CHECK(d.adam_alpha == 0.0002);
    CHECK(d.adam_beta1 == 0.5);
    CHECK(d.d_updates_per_gen == 3);
    CHECK(d.epochs == 100);
    CHECK(d.batch_size == 16);

    const TrainConfig c = parse_train_config("# toy\nlambda = 10\n  epochs=3  # short\nseed = 42\n\n");
    CHECK(c.lambda == 10.0);
    CHECK(c.epochs == 3);
    CHECK(c.seed == 42);

    TrainConfig e;
    e.lambda = 0.125;
    e.adam_alpha = 1e-3;
    e.batch_size = 5;
    e.seed = 99;
    const TrainConfig r = parse_train_config(format_train_config(e));
    CHECK(format_train_config(r) == format_train_config(e));

    CHECK_THROWS_AS(parse_train_config("lamda = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("lambda = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("lambda\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("epochs = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_train_config("lambda = -1\n"), ConfigError);
}

TEST_CASE("history CSV has the fixed column order") {
    TrainHistory h;
    StepRecord r;
    r.step = 2;
    r.epoch = 1;
    r.l_rec = 0.5;
    r.l_adv = -1.25;
    r.d_real_mean = 0.75;
    r.d_fake_mean = 0.25;
    h.records.push_back(r);
    std::ostringstream out;
    h.write_csv(out);
    CHECK(out.str() == "step,epoch,l_rec,l_adv,d_real_mean,d_fake_mean\n2,1,0.5,-1.25,0.75,0.25\n");
}
