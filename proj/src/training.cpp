#include "rbtn/training.hpp"

#include "rbtn/error.hpp"
#include "rbtn/losses.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rbtn {

// ---- config ------------------------------------------------------------------

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be finite and >= 0");
    if (!(adam_alpha > 0.0)) throw ConfigError("train: adam_alpha must be positive");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("train: adam_beta1 must be in (0, 1)");
    if (d_updates_per_gen <= 0) throw ConfigError("train: d_updates_per_gen must be positive");
    if (epochs <= 0) throw ConfigError("train: epochs must be positive");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be positive");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    V v{};
    in >> v;
    if (!in || !(in >> std::ws).eof()) throw ConfigError("train config: bad value for '" + key + "': " + value);
    return v;
}

} // namespace

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("train config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "lambda") cfg.lambda = parse_number<double>(key, value);
        else if (key == "adam_alpha") cfg.adam_alpha = parse_number<double>(key, value);
        else if (key == "adam_beta1") cfg.adam_beta1 = parse_number<double>(key, value);
        else if (key == "d_updates_per_gen") cfg.d_updates_per_gen = parse_number<int>(key, value);
        else if (key == "epochs") cfg.epochs = parse_number<int>(key, value);
        else if (key == "batch_size") cfg.batch_size = parse_number<int>(key, value);
        else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
        else throw ConfigError("train config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open train config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "lambda = " << cfg.lambda << "\n"
        << "adam_alpha = " << cfg.adam_alpha << "\n"
        << "adam_beta1 = " << cfg.adam_beta1 << "\n"
        << "d_updates_per_gen = " << cfg.d_updates_per_gen << "\n"
        << "epochs = " << cfg.epochs << "\n"
        << "batch_size = " << cfg.batch_size << "\n"
        << "seed = " << cfg.seed << "\n";
    return out.str();
}

// ---- round trip / fake pairs -------------------------------------------------

const char* to_string(FakeKind k) {
    switch (k) {
    case FakeKind::I_S0: return "I_S0";
    case FakeKind::I1_S0: return "I1_S0";
    case FakeKind::I0_S: return "I0_S";
    case FakeKind::I0_S1: return "I0_S1";
    }
    return "?";
}

template <typename T>
RoundTrip<T> round_trip(const Image<T>& x_I, const Image<T>& x_S, const ModelBundle<T>& bundle) {
    if (x_I.size != x_S.size) throw ShapeError("round_trip: face and sketch sizes differ");
    RoundTrip<T> rt;
    rt.x_S0 = forward_f(x_I, bundle);
    rt.x_I1 = forward_F(rt.x_S0, bundle);
    rt.x_I0 = forward_F(x_S, bundle);
    rt.x_S1 = forward_f(rt.x_I0, bundle);
    return rt;
}

template <typename T>
std::vector<const FakePair<T>*> FakePairSet<T>::omega_f() const {
    std::vector<const FakePair<T>*> out;
    for (const auto& p : pairs)
        if (in_f_subset(p.kind)) out.push_back(&p);
    return out;
}

template <typename T>
std::vector<const FakePair<T>*> FakePairSet<T>::omega_F() const {
    std::vector<const FakePair<T>*> out;
    for (const auto& p : pairs)
        if (in_F_subset(p.kind)) out.push_back(&p);
    return out;
}

template <typename T>
FakePairSet<T> fake_pair_set(const Image<T>& x_I, const Image<T>& x_S, const ModelBundle<T>& bundle) {
    RoundTrip<T> rt = round_trip(x_I, x_S, bundle);
    FakePairSet<T> set;
    set.pairs.push_back({x_I, rt.x_S0, FakeKind::I_S0});
    set.pairs.push_back({rt.x_I1, rt.x_S0, FakeKind::I1_S0});
    set.pairs.push_back({rt.x_I0, x_S, FakeKind::I0_S});
    set.pairs.push_back({rt.x_I0, rt.x_S1, FakeKind::I0_S1});
    return set;
}

// ---- objectives ---------------------------------------------------------------

namespace {

template <typename T>
struct BatchMaps {
    FeatureMap<T> faces;
    FeatureMap<T> sketches;
};

template <typename T>
BatchMaps<T> split_batch(std::span<const ImagePair<T>> batch) {
    if (batch.empty()) throw DataError("training: empty batch");
    std::vector<const Image<T>*> faces, sketches;
    for (const auto& p : batch) {
        if (p.face.domain != Domain::face || p.sketch.domain != Domain::sketch)
            throw UsageError("training: batch pairs must be (face, sketch)");
        faces.push_back(&p.face);
        sketches.push_back(&p.sketch);
    }
    return {to_batch<T>(faces), to_batch<T>(sketches)};
}

template <typename T>
FeatureMap<T> hstack(std::initializer_list<const FeatureMap<T>*> parts) {
    const FeatureMap<T>& first = **parts.begin();
    int batch = 0;
    for (const auto* p : parts) batch += p->batch;
    FeatureMap<T> out(first.channels(), batch, first.height, first.width);
    Eigen::Index col = 0;
    for (const auto* p : parts) {
        out.data.middleCols(col, p->data.cols()) = p->data;
        col += p->data.cols();
    }
    return out;
}

// log D from a logit through the stable log-sigmoid path, writing d log D / dz.
// With floor set, values below log(eps) are floored and get zero gradient; this
// bounds the fake term, whose minimum is otherwise -inf. The real term is never
// floored so a discriminator that rejects real pairs keeps a gradient.
template <typename T>
double log_d(T z, bool floor, double* dlogd_dz, int* clamped) {
    static const double lo = std::log(kProbEpsilon);
    const double ls = static_cast<double>(log_sigmoid(z));
    if (floor && ls < lo) {
        ++*clamped;
        *dlogd_dz = 0.0;
        return lo;
    }
    *dlogd_dz = static_cast<double>(sigmoid(-z));
    return ls;
}

template <typename T>
double l1_term(const FeatureMap<T>& target, const FeatureMap<T>& out, Eigen::Index col0, Matrix<T>* grad,
               double weight) {
    const auto pred = out.data.middleCols(col0, target.data.cols());
    const auto diff = (pred - target.data).array();
    const double n = static_cast<double>(target.data.size());
    if (grad) grad->middleCols(col0, target.data.cols()).array() += static_cast<T>(weight / n) * diff.sign();
    return static_cast<double>(diff.abs().sum()) / n;
}

} // namespace

template <typename T>
DiscriminatorMetrics discriminator_objective(std::span<const ImagePair<T>> batch, const ModelBundle<T>& bundle,
                                             ParamSet<T>* grads) {
    const BatchMaps<T> x = split_batch(batch);
    const int B = x.faces.batch;
    const FeatureMap<T> s0 = bundle.f.forward(x.faces);
    const FeatureMap<T> i1 = bundle.F.forward(s0);
    const FeatureMap<T> i0 = bundle.F.forward(x.sketches);
    const FeatureMap<T> s1 = bundle.f.forward(i0);

    // Column blocks: real, then I_S0, I1_S0, I0_S, I0_S1.
    const FeatureMap<T> pairs = concat_channels(hstack<T>({&x.faces, &x.faces, &i1, &i0, &i0}),
                                                hstack<T>({&x.sketches, &s0, &s0, &x.sketches, &s1}));
    typename Discriminator<T>::Tape tape;
    const Matrix<T> z = bundle.D.forward(pairs, grads ? &tape : nullptr);

    DiscriminatorMetrics m;
    Matrix<T> dz(1, z.cols());
    double real_sum = 0.0, fake_sum = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        double d = 0.0;
        const double ld = log_d(z(0, j), j >= B, &d, &m.clamped);
        const double p = static_cast<double>(sigmoid(z(0, j)));
        if (j < B) {
            real_sum += ld;
            m.d_real_mean += p;
            dz(0, j) = static_cast<T>(-d / B);
        } else {
            fake_sum += ld;
            m.d_fake_mean += p;
            dz(0, j) = static_cast<T>(d / (4.0 * B));
        }
    }
    m.loss = fake_sum / (4.0 * B) - real_sum / B;
    m.d_real_mean /= B;
    m.d_fake_mean /= 4.0 * B;
    if (grads) bundle.D.backward(tape, dz, grads, false);
    return m;
}

namespace {

// Shared body of the two generator objectives. `own` is the generator being
// trained, `other` the frozen one. For f: inputs are (x_I, F(x_S)), targets x_S,
// pairs (inputs, outputs) with the outputs on the sketch side. For F the roles
// of the domains swap.
template <typename T>
GeneratorObjective generator_objective(const FeatureMap<T>& own_input_real, const FeatureMap<T>& other_input,
                                       const FeatureMap<T>& target, const Generator<T>& own, const Generator<T>& other,
                                       const Discriminator<T>& D, bool outputs_are_sketches, double lambda,
                                       ParamSet<T>* grads) {
    // Second input of the own generator: the other generator applied to the target.
    const FeatureMap<T> crossed = other.forward(other_input);
    const FeatureMap<T> inputs = hstack<T>({&own_input_real, &crossed});
    typename Generator<T>::Tape gtape;
    const FeatureMap<T> outputs = own.forward(inputs, grads ? &gtape : nullptr);

    // f pairs (x_I, x_S0), (x_I0, x_S1); F pairs (x_I0, x_S), (x_I1, x_S0).
    const FeatureMap<T> pairs = outputs_are_sketches ? concat_channels(inputs, outputs) : concat_channels(outputs, inputs);
    typename Discriminator<T>::Tape dtape;
    const Matrix<T> z = D.forward(pairs, grads ? &dtape : nullptr);

    GeneratorObjective obj;
    Matrix<T> dz(1, z.cols());
    double adv = 0.0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        adv -= static_cast<double>(log_sigmoid(z(0, j)));
        dz(0, j) = static_cast<T>(-static_cast<double>(sigmoid(-z(0, j))) / z.cols());
    }
    obj.adversarial = adv / static_cast<double>(z.cols());

    Matrix<T> grad_out;
    if (grads) grad_out = Matrix<T>::Zero(outputs.data.rows(), outputs.data.cols());
    const Eigen::Index half = outputs.data.cols() / 2;
    obj.reconstruction = l1_term(target, outputs, 0, grads ? &grad_out : nullptr, lambda) +
                         l1_term(target, outputs, half, grads ? &grad_out : nullptr, lambda);
    obj.total = obj.adversarial + lambda * obj.reconstruction;

    if (grads) {
        const FeatureMap<T> gpair = D.backward(dtape, dz, nullptr, true);
        grad_out += outputs_are_sketches ? gpair.data.bottomRows(3) : gpair.data.topRows(3);
        FeatureMap<T> g;
        g.data = std::move(grad_out);
        g.batch = outputs.batch;
        g.height = outputs.height;
        g.width = outputs.width;
        own.backward(gtape, g, grads, false);
    }
    return obj;
}

} // namespace

template <typename T>
GeneratorObjective generator_objective_f(std::span<const ImagePair<T>> batch, const ModelBundle<T>& bundle,
                                         const TrainConfig& cfg, ParamSet<T>* grads) {
    const BatchMaps<T> x = split_batch(batch);
    // inputs = [x_I ; x_I0 = F(x_S)], outputs = [x_S0 ; x_S1], targets x_S.
    return generator_objective(x.faces, x.sketches, x.sketches, bundle.f, bundle.F, bundle.D, true, cfg.lambda, grads);
}

template <typename T>
GeneratorObjective generator_objective_F(std::span<const ImagePair<T>> batch, const ModelBundle<T>& bundle,
                                         const TrainConfig& cfg, ParamSet<T>* grads) {
    const BatchMaps<T> x = split_batch(batch);
    // inputs = [x_S ; x_S0 = f(x_I)], outputs = [x_I0 ; x_I1], targets x_I.
    return generator_objective(x.sketches, x.faces, x.faces, bundle.F, bundle.f, bundle.D, false, cfg.lambda, grads);
}

template <typename T>
DiscriminatorMetrics discriminator_step(std::span<const ImagePair<T>> batch, ModelBundle<T>& bundle,
                                        AdamState<T>& opt, const TrainConfig& cfg) {
    ParamSet<T> grads = bundle.D.params().zeros_like();
    const DiscriminatorMetrics m = discriminator_objective(batch, bundle, &grads);
    if (!std::isfinite(m.loss) || !grads.all_finite()) throw NumericError("discriminator step: non-finite loss");
    adam_step(bundle.D.params(), grads, opt, cfg.adam());
    return m;
}

template <typename T>
GeneratorObjective generator_step_f(std::span<const ImagePair<T>> batch, ModelBundle<T>& bundle, AdamState<T>& opt,
                                    const TrainConfig& cfg) {
    ParamSet<T> grads = bundle.f.params().zeros_like();
    const GeneratorObjective o = generator_objective_f(batch, bundle, cfg, &grads);
    if (!std::isfinite(o.total) || !grads.all_finite()) throw NumericError("f step: non-finite loss");
    adam_step(bundle.f.params(), grads, opt, cfg.adam());
    return o;
}

template <typename T>
GeneratorObjective generator_step_F(std::span<const ImagePair<T>> batch, ModelBundle<T>& bundle, AdamState<T>& opt,
                                    const TrainConfig& cfg) {
    ParamSet<T> grads = bundle.F.params().zeros_like();
    const GeneratorObjective o = generator_objective_F(batch, bundle, cfg, &grads);
    if (!std::isfinite(o.total) || !grads.all_finite()) throw NumericError("F step: non-finite loss");
    adam_step(bundle.F.params(), grads, opt, cfg.adam());
    return o;
}

// ---- history -------------------------------------------------------------------

bool StepRecord::same_values(const StepRecord& o) const {
    return step == o.step && epoch == o.epoch && l_rec == o.l_rec && l_adv == o.l_adv &&
           d_real_mean == o.d_real_mean && d_fake_mean == o.d_fake_mean && clamped == o.clamped;
}

void TrainHistory::write_csv(std::ostream& out) const {
    out << "step,epoch,l_rec,l_adv,d_real_mean,d_fake_mean\n";
    out << std::setprecision(9);
    for (const auto& r : records)
        out << r.step << ',' << r.epoch << ',' << r.l_rec << ',' << r.l_adv << ',' << r.d_real_mean << ','
            << r.d_fake_mean << '\n';
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_csv(out);
}

bool TrainHistory::same_values(const TrainHistory& o) const {
    if (records.size() != o.records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (!records[i].same_values(o.records[i])) return false;
    return true;
}

// ---- trainer -------------------------------------------------------------------

template <typename T>
Trainer<T>::Trainer(ModelBundle<T> bundle, TrainConfig cfg, std::span<const ImagePair<T>> dataset,
                    std::optional<OptimizerStates<T>> optimizer)
    : bundle_(std::move(bundle)), cfg_(cfg), data_(dataset),
      opt_(optimizer ? std::move(*optimizer) : fresh_optimizer_states(bundle_)), rng_(cfg.seed) {
    cfg_.validate();
    if (data_.empty()) throw DataError("train: empty dataset");
    for (const auto& p : data_)
        if (p.face.size != bundle_.arch.image_size || p.sketch.size != bundle_.arch.image_size)
            throw ShapeError("train: dataset image size does not match the architecture");
    order_.resize(data_.size());
    cursor_ = order_.size();
}

template <typename T>
int Trainer<T>::steps_per_epoch() const {
    return static_cast<int>((data_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
}

template <typename T>
std::vector<ImagePair<T>> Trainer<T>::next_batch() {
    std::vector<ImagePair<T>> batch;
    const std::size_t want = std::min<std::size_t>(cfg_.batch_size, data_.size());
    while (batch.size() < want) {
        if (cursor_ == order_.size()) {
            for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
            std::shuffle(order_.begin(), order_.end(), rng_);
            cursor_ = 0;
        }
        batch.push_back(data_[order_[cursor_++]]);
    }
    return batch;
}

template <typename T>
StepRecord Trainer<T>::step() {
    const auto t0 = std::chrono::steady_clock::now();
    StepRecord rec;
    rec.step = steps_;
    rec.epoch = static_cast<int>(steps_ / steps_per_epoch());
    for (int k = 0; k < cfg_.d_updates_per_gen; ++k) {
        const auto batch = next_batch();
        const DiscriminatorMetrics m = discriminator_step<T>(batch, bundle_, opt_.D, cfg_);
        rec.l_adv = m.loss;
        rec.d_real_mean = m.d_real_mean;
        rec.d_fake_mean = m.d_fake_mean;
        rec.clamped += m.clamped;
    }
    {
        const auto batch = next_batch();
        rec.l_rec = generator_step_f<T>(batch, bundle_, opt_.f, cfg_).reconstruction;
    }
    {
        const auto batch = next_batch();
        rec.l_rec += generator_step_F<T>(batch, bundle_, opt_.F, cfg_).reconstruction;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++steps_;
    history_.records.push_back(rec);
    return rec;
}

template <typename T>
TrainResult<T> train(std::span<const ImagePair<T>> dataset, const ArchConfig& arch, const TrainConfig& cfg,
                     const TrainOptions& options) {
    cfg.validate();
    if (dataset.empty()) throw DataError("train: empty dataset");
    Trainer<T> trainer(build_models<T>(arch), cfg, dataset);
    const int per_epoch = trainer.steps_per_epoch();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        StepRecord last;
        for (int s = 0; s < per_epoch; ++s) last = trainer.step();
        if (options.checkpoint)
            save_checkpoint(*options.checkpoint, trainer.bundle(), &trainer.optimizer(), epoch + 1);
        if (options.on_epoch) options.on_epoch(epoch, last);
    }
    return {trainer.bundle(), trainer.optimizer(), trainer.history()};
}

#define RBTN_INSTANTIATE_TRAINING(T)                                                                              \
    template RoundTrip<T> round_trip(const Image<T>&, const Image<T>&, const ModelBundle<T>&);                    \
    template struct FakePairSet<T>;                                                                               \
    template FakePairSet<T> fake_pair_set(const Image<T>&, const Image<T>&, const ModelBundle<T>&);               \
    template DiscriminatorMetrics discriminator_objective(std::span<const ImagePair<T>>, const ModelBundle<T>&,    \
                                                          ParamSet<T>*);                                          \
    template GeneratorObjective generator_objective_f(std::span<const ImagePair<T>>, const ModelBundle<T>&,       \
                                                      const TrainConfig&, ParamSet<T>*);                          \
    template GeneratorObjective generator_objective_F(std::span<const ImagePair<T>>, const ModelBundle<T>&,       \
                                                      const TrainConfig&, ParamSet<T>*);                          \
    template DiscriminatorMetrics discriminator_step(std::span<const ImagePair<T>>, ModelBundle<T>&,              \
                                                     AdamState<T>&, const TrainConfig&);                          \
    template GeneratorObjective generator_step_f(std::span<const ImagePair<T>>, ModelBundle<T>&, AdamState<T>&,   \
                                                 const TrainConfig&);                                             \
    template GeneratorObjective generator_step_F(std::span<const ImagePair<T>>, ModelBundle<T>&, AdamState<T>&,   \
                                                 const TrainConfig&);                                             \
    template class Trainer<T>;                                                                                    \
    template TrainResult<T> train(std::span<const ImagePair<T>>, const ArchConfig&, const TrainConfig&,           \
                                  const TrainOptions&);

RBTN_INSTANTIATE_TRAINING(float)
RBTN_INSTANTIATE_TRAINING(double)

} // namespace rbtn
