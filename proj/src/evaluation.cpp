#include "rbtn/evaluation.hpp"

#include "rbtn/error.hpp"
#include "rbtn/optimizer.hpp"
#include "rbtn/plot.hpp"
#include "rbtn/seed.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

namespace rbtn {

template <typename T>
ResidualCurve residual_stats(const GenerationTrace<T>& trace) {
    if (trace.frames.size() < 2) throw UsageError("residual_stats: trace needs at least two frames");
    ResidualCurve c;
    for (std::size_t i = 1; i < trace.frames.size(); ++i) {
        const ResidualStat s = residual_of(trace.frames[i].face, trace.frames[i - 1].face, trace.frames[i].k);
        c.mean_r.push_back(s.mean_r);
        c.mean_abs_r.push_back(s.mean_abs_r);
    }
    return c;
}

template ResidualCurve residual_stats<float>(const GenerationTrace<float>&);
template ResidualCurve residual_stats<double>(const GenerationTrace<double>&);

ResidualCurve mean_curve(std::span<const ResidualCurve> curves) {
    if (curves.empty()) throw UsageError("mean_curve: no curves");
    ResidualCurve out;
    const std::size_t n = curves.front().length();
    out.mean_r.assign(n, 0.0);
    out.mean_abs_r.assign(n, 0.0);
    for (const auto& c : curves) {
        if (c.length() != n) throw ShapeError("mean_curve: curves differ in length");
        for (std::size_t k = 0; k < n; ++k) {
            out.mean_r[k] += c.mean_r[k] / double(curves.size());
            out.mean_abs_r[k] += c.mean_abs_r[k] / double(curves.size());
        }
    }
    return out;
}

// ---- embedder ---------------------------------------------------------------

namespace {

constexpr ConvGeometry kGeom{4, 2, 1};
constexpr char kEmbedMagic[8] = {'R', 'B', 'T', 'N', 'E', 'M', 'B', 'D'};

int stage_width(const Embedder::Config& c, int i) { return i == 0 ? 3 : c.base_channels << (i - 1); }

Matrix<double> init_normal(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 0.02);
    Matrix<double> m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = d(rng);
    return m;
}

template <typename V>
void put(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V take(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("embedder: truncated file");
    return v;
}

void put_params(std::ostream& out, const ParamSet<double>& p) {
    put<std::uint32_t>(out, std::uint32_t(p.size()));
    for (const auto& m : p.values) {
        put<std::int64_t>(out, m.rows());
        put<std::int64_t>(out, m.cols());
        out.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
    }
}

ParamSet<double> take_params(std::istream& in, const std::string& prefix) {
    ParamSet<double> p;
    const auto n = take<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto r = take<std::int64_t>(in), c = take<std::int64_t>(in);
        if (r < 0 || c < 0 || r * c > (1 << 26)) throw IoError("embedder: corrupt tensor header");
        Matrix<double> m(r, c);
        in.read(reinterpret_cast<char*>(m.data()), std::streamsize(m.size() * sizeof(double)));
        if (!in) throw IoError("embedder: truncated tensor");
        p.add(prefix + std::to_string(i), std::move(m));
    }
    return p;
}

} // namespace

struct Embedder::Tape {
    std::vector<FeatureMap<double>> enc_in;
    std::vector<Matrix<double>> enc_cols;
    std::vector<FeatureMap<double>> enc_out;
    std::vector<FeatureMap<double>> dec_in;
    std::vector<FeatureMap<double>> dec_out;
};

int Embedder::feature_size() const { return stage_width(cfg_, cfg_.depth); }

FeatureMap<double> Embedder::encode(const FeatureMap<double>& x, Tape* tape) const {
    FeatureMap<double> h = x;
    for (int i = 0; i < cfg_.depth; ++i) {
        Matrix<double> cols;
        if (tape) tape->enc_in.push_back(h);
        h = conv2d(h, encoder_.values[2 * i], encoder_.values[2 * i + 1], kGeom, tape ? &cols : nullptr);
        leaky_relu_inplace(h);
        if (tape) {
            tape->enc_cols.push_back(std::move(cols));
            tape->enc_out.push_back(h);
        }
    }
    return h;
}

FeatureMap<double> Embedder::decode(const FeatureMap<double>& z, Tape* tape) const {
    FeatureMap<double> h = z;
    for (int i = 0; i < cfg_.depth; ++i) {
        if (tape) tape->dec_in.push_back(h);
        h = conv_transpose2d(h, decoder_.values[2 * i], decoder_.values[2 * i + 1], kGeom);
        if (i + 1 < cfg_.depth) relu_inplace(h);
        else tanh_inplace(h);
        if (tape) tape->dec_out.push_back(h);
    }
    return h;
}

Embedder Embedder::train(const Config& cfg) {
    if (cfg.depth < 1 || cfg.base_channels < 1 || cfg.train_faces < 1 || cfg.epochs < 0 || cfg.batch_size < 1 ||
        (cfg.image_size >> cfg.depth) < 1)
        throw ConfigError("embedder: invalid config");
    Embedder e;
    e.cfg_ = cfg;
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xE3B));
    for (int i = 0; i < cfg.depth; ++i) {
        const int cin = stage_width(cfg, i), cout = stage_width(cfg, i + 1);
        e.encoder_.add("enc" + std::to_string(i) + ".weight", init_normal(cout, 16 * cin, rng));
        e.encoder_.add("enc" + std::to_string(i) + ".bias", Matrix<double>::Zero(cout, 1));
    }
    for (int i = 0; i < cfg.depth; ++i) {
        const int cin = stage_width(cfg, cfg.depth - i), cout = stage_width(cfg, cfg.depth - i - 1);
        e.decoder_.add("dec" + std::to_string(i) + ".weight", init_normal(16 * cout, cin, rng));
        e.decoder_.add("dec" + std::to_string(i) + ".bias", Matrix<double>::Zero(cout, 1));
    }

    std::vector<Image<double>> faces;
    for (int i = 0; i < cfg.train_faces; ++i)
        faces.push_back(synth_pair<double>(random_face_spec(mix_seed(cfg.seed, std::uint64_t(i) + 1)), cfg.image_size).face);

    AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
    AdamState<double> se(e.encoder_), sd(e.decoder_);
    std::vector<std::size_t> order(faces.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            std::vector<const Image<double>*> batch;
            for (std::size_t j = start; j < std::min(order.size(), start + std::size_t(cfg.batch_size)); ++j)
                batch.push_back(&faces[order[j]]);
            const FeatureMap<double> x = to_batch<double>(batch);
            Tape tape;
            const FeatureMap<double> z = e.encode(x, &tape);
            const FeatureMap<double> y = e.decode(z, &tape);

            FeatureMap<double> g = y;
            g.data = (y.data - x.data) * (2.0 / double(y.data.size()));
            ParamSet<double> ge = e.encoder_.zeros_like(), gd = e.decoder_.zeros_like();
            for (int i = cfg.depth - 1; i >= 0; --i) {
                if (i + 1 < cfg.depth) relu_backward_inplace(g, tape.dec_out[i]);
                else tanh_backward_inplace(g, tape.dec_out[i]);
                g = conv_transpose2d_backward(g, tape.dec_in[i], e.decoder_.values[2 * i], kGeom, &gd.values[2 * i],
                                              &gd.values[2 * i + 1], true);
            }
            for (int i = cfg.depth - 1; i >= 0; --i) {
                leaky_relu_backward_inplace(g, tape.enc_out[i]);
                g = conv2d_backward(g, tape.enc_cols[i], e.encoder_.values[2 * i], tape.enc_in[i].height,
                                    tape.enc_in[i].width, kGeom, &ge.values[2 * i], &ge.values[2 * i + 1], i > 0);
            }
            adam_step(e.encoder_, ge, se, adam);
            adam_step(e.decoder_, gd, sd, adam);
        }
    }
    if (!e.encoder_.all_finite() || !e.decoder_.all_finite()) throw NumericError("embedder: training diverged");
    return e;
}

template <typename T>
Eigen::VectorXd Embedder::embed(const Image<T>& x) const {
    if (!trained()) throw UsageError("embed: embedder is not trained");
    if (x.size != cfg_.image_size) throw ShapeError("embed: image size does not match the embedder");
    const Image<double> xd = x.template cast<double>();
    const FeatureMap<double> z = encode(to_batch(xd), nullptr);
    return z.data.rowwise().mean();
}

template Eigen::VectorXd Embedder::embed<float>(const Image<float>&) const;
template Eigen::VectorXd Embedder::embed<double>(const Image<double>&) const;

double Embedder::reconstruction_error(std::span<const Image<double>> images) const {
    if (!trained()) throw UsageError("embedder is not trained");
    double total = 0.0;
    for (const auto& im : images) {
        const FeatureMap<double> x = to_batch(im);
        total += (decode(encode(x, nullptr), nullptr).data - x.data).squaredNorm() / double(x.data.size());
    }
    return images.empty() ? 0.0 : total / double(images.size());
}

void Embedder::save(const std::filesystem::path& path) const {
    if (!trained()) throw UsageError("embedder: nothing to save");
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(kEmbedMagic, sizeof kEmbedMagic);
        for (std::int64_t v : {std::int64_t(cfg_.image_size), std::int64_t(cfg_.depth), std::int64_t(cfg_.base_channels),
                               std::int64_t(cfg_.train_faces), std::int64_t(cfg_.epochs), std::int64_t(cfg_.batch_size)})
            put(out, v);
        put(out, cfg_.learning_rate);
        put(out, cfg_.seed);
        put_params(out, encoder_);
        put_params(out, decoder_);
        if (!out) throw IoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Embedder Embedder::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kEmbedMagic, sizeof magic) != 0) throw IoError(path.string() + ": not an embedder file");
    Embedder e;
    e.cfg_.image_size = int(take<std::int64_t>(in));
    e.cfg_.depth = int(take<std::int64_t>(in));
    e.cfg_.base_channels = int(take<std::int64_t>(in));
    e.cfg_.train_faces = int(take<std::int64_t>(in));
    e.cfg_.epochs = int(take<std::int64_t>(in));
    e.cfg_.batch_size = int(take<std::int64_t>(in));
    e.cfg_.learning_rate = take<double>(in);
    e.cfg_.seed = take<std::uint64_t>(in);
    e.encoder_ = take_params(in, "enc");
    e.decoder_ = take_params(in, "dec");
    if (int(e.encoder_.size()) != 2 * e.cfg_.depth || int(e.decoder_.size()) != 2 * e.cfg_.depth)
        throw IoError(path.string() + ": parameter count does not match depth");
    return e;
}

double embedding_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw ShapeError("embedding_distance: dimension mismatch");
    return (a - b).norm();
}

// ---- similarity / diversity ------------------------------------------------

std::optional<double> SimilarityStudy::intersection() const {
    for (const auto& p : points)
        if (p.mutual_pairs > 0 && p.self_pairs > 0 && p.mutual_mean - p.self_mean <= 0.0) return p.missing;
    return std::nullopt;
}

void SimilarityStudy::write_csv(std::ostream& out) const {
    out << "missing,self_mean,self_std,mutual_mean,mutual_std,self_pairs,mutual_pairs\n";
    for (const auto& p : points)
        out << p.missing << ',' << p.self_mean << ',' << p.self_std << ',' << p.mutual_mean << ',' << p.mutual_std
            << ',' << p.self_pairs << ',' << p.mutual_pairs << '\n';
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / double(v.size()))};
}

constexpr std::array<Feature, 3> kStudyFeatures{Feature::eye_left, Feature::eye_right, Feature::mouth};

} // namespace

template <typename T>
SimilarityStudy similarity_diversity_study(const ModelBundle<T>& bundle, std::span<const FaceSpec> identities,
                                           std::span<const double> percentages, const Embedder& embedder,
                                           const GenerationOptions& opts) {
    if (identities.size() < 2) throw UsageError("similarity study: needs at least two identities");
    if (!embedder.trained()) throw UsageError("similarity study: embedder is not trained");
    const int S = bundle.arch.image_size;
    GenerationOptions g = opts;
    g.record_every = g.iterations;

    std::vector<Image<T>> faces;
    for (const auto& id : identities) faces.push_back(synth_pair<T>(id, S).face);

    SimilarityStudy study;
    for (double p : percentages) {
        // emb[i][f] is absent when the feature does not fit the kept area.
        std::vector<std::array<std::optional<Eigen::VectorXd>, kStudyFeatures.size()>> emb(identities.size());
        for (std::size_t i = 0; i < identities.size(); ++i)
            for (std::size_t f = 0; f < kStudyFeatures.size(); ++f) {
                Mask mask;
                try {
                    mask = make_mask({MaskSpec::Kind::feature, kStudyFeatures[f], p}, identities[i], S);
                } catch (const DataError&) {
                    continue;
                }
                const Patch<T> patch = make_patch(faces[i], mask);
                const auto trace = generate<T>(std::span(&patch, 1), bundle, g);
                emb[i][f] = embedder.embed(trace.final_frame().face);
            }
        std::vector<double> self, mutual;
        for (std::size_t i = 0; i < emb.size(); ++i)
            for (std::size_t a = 0; a < kStudyFeatures.size(); ++a)
                for (std::size_t b = a + 1; b < kStudyFeatures.size(); ++b)
                    if (emb[i][a] && emb[i][b]) self.push_back(embedding_distance(*emb[i][a], *emb[i][b]));
        for (std::size_t f = 0; f < kStudyFeatures.size(); ++f)
            for (std::size_t i = 0; i < emb.size(); ++i)
                for (std::size_t j = i + 1; j < emb.size(); ++j)
                    if (emb[i][f] && emb[j][f]) mutual.push_back(embedding_distance(*emb[i][f], *emb[j][f]));
        SimilarityPoint pt;
        pt.missing = p;
        std::tie(pt.self_mean, pt.self_std) = mean_std(self);
        std::tie(pt.mutual_mean, pt.mutual_std) = mean_std(mutual);
        pt.self_pairs = int(self.size());
        pt.mutual_pairs = int(mutual.size());
        study.points.push_back(pt);
    }
    return study;
}

template SimilarityStudy similarity_diversity_study<float>(const ModelBundle<float>&, std::span<const FaceSpec>,
                                                           std::span<const double>, const Embedder&,
                                                           const GenerationOptions&);
template SimilarityStudy similarity_diversity_study<double>(const ModelBundle<double>&, std::span<const FaceSpec>,
                                                            std::span<const double>, const Embedder&,
                                                            const GenerationOptions&);

// ---- missing-percentage sweep ----------------------------------------------

GenerationOptions unidirectional_baseline() {
    GenerationOptions o;
    o.iterations = 1;
    o.use_patch_anchor = true;
    o.use_adv_adjust = false;
    return o;
}

const SweepBucket& SweepReport::bucket(double missing) const {
    for (const auto& b : buckets)
        if (std::abs(b.missing - missing) < 1e-9) return b;
    throw UsageError("sweep report has no bucket for missing " + std::to_string(missing));
}

void SweepReport::write_csv(std::ostream& out) const {
    out << "missing,method,frr,samples\n";
    for (const auto& b : buckets) {
        out << b.missing << ",recursive," << b.frr << ',' << b.samples << '\n';
        if (!b.baseline_detections.empty()) out << b.missing << ",baseline," << b.baseline_frr << ',' << b.samples << '\n';
    }
}

void SweepReport::write_residual_csv(std::ostream& out) const {
    out << "missing,k,mean_r,mean_abs_r\n";
    for (const auto& b : buckets)
        for (std::size_t k = 0; k < b.residuals.length(); ++k)
            out << b.missing << ',' << k + 1 << ',' << b.residuals.mean_r[k] << ',' << b.residuals.mean_abs_r[k] << '\n';
}

template <typename T>
SweepReport run_missing_sweep(const ModelBundle<T>& bundle, std::span<const ImagePair<T>> test_pairs,
                              std::span<const double> percentages, const SweepOptions& opts) {
    if (test_pairs.empty()) throw UsageError("sweep: no test pairs");
    opts.generation.validate();
    const int S = bundle.arch.image_size;
    GenerationOptions g = opts.generation;
    g.record_every = g.iterations;

    SweepReport report;
    report.iterations = g.iterations;
    for (double p : percentages) {
        SweepBucket b;
        b.missing = p;
        const Mask mask = make_mask({MaskSpec::Kind::rect, Feature::eye_left, p}, S);
        std::vector<ResidualCurve> curves;
        for (const auto& pair : test_pairs) {
            const Patch<T> patch = make_patch(pair.face, mask);
            const auto trace = generate<T>(std::span(&patch, 1), bundle, g);
            ResidualCurve c;
            for (const auto& r : trace.residuals) {
                c.mean_r.push_back(r.mean_r);
                c.mean_abs_r.push_back(r.mean_abs_r);
            }
            curves.push_back(std::move(c));
            b.detections.push_back(detect_structure(trace.final_frame().face));
            if (opts.run_baseline) {
                const auto base = generate<T>(std::span(&patch, 1), bundle, unidirectional_baseline());
                b.baseline_detections.push_back(detect_structure(base.final_frame().face));
            }
        }
        b.samples = int(test_pairs.size());
        b.residuals = mean_curve(curves);
        b.frr = frr(b.detections);
        if (opts.run_baseline) b.baseline_frr = frr(b.baseline_detections);
        report.buckets.push_back(std::move(b));
    }
    return report;
}

template SweepReport run_missing_sweep<float>(const ModelBundle<float>&, std::span<const ImagePair<float>>,
                                              std::span<const double>, const SweepOptions&);
template SweepReport run_missing_sweep<double>(const ModelBundle<double>&, std::span<const ImagePair<double>>,
                                               std::span<const double>, const SweepOptions&);

namespace {

PlotSpec titled(std::string title, std::string x_label, std::string y_label) {
    PlotSpec p;
    p.title = std::move(title);
    p.x_label = std::move(x_label);
    p.y_label = std::move(y_label);
    return p;
}

} // namespace

void export_report(const std::filesystem::path& dir, const SweepReport& sweep, const SimilarityStudy* study) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        if (!f) throw IoError("cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("sweep.csv");
        sweep.write_csv(f);
    }
    {
        auto f = open("residuals.csv");
        sweep.write_residual_csv(f);
    }

    PlotSpec frr_plot = titled("FRR vs missing", "missing %", "FRR");
    Series ours{"recursive", {}, {}, palette(0)}, base{"baseline", {}, {}, palette(1)};
    for (const auto& b : sweep.buckets) {
        ours.x.push_back(100 * b.missing);
        ours.y.push_back(b.frr);
        if (!b.baseline_detections.empty()) {
            base.x.push_back(100 * b.missing);
            base.y.push_back(b.baseline_frr);
        }
    }
    frr_plot.series.push_back(ours);
    if (!base.x.empty()) frr_plot.series.push_back(base);
    frr_plot.y_min = 0.0;
    frr_plot.y_max = 1.0;
    write_line_plot(dir / "frr.png", frr_plot);

    PlotSpec mean_plot = titled("mean residual", "k", "mean r"), abs_plot = titled("mean abs residual", "k", "mean |r|");
    int idx = 0;
    for (const auto& b : sweep.buckets) {
        Series m{std::to_string(int(std::lround(100 * b.missing))) + "%", {}, {}, palette(idx)};
        Series a = m;
        for (std::size_t k = 0; k < b.residuals.length(); ++k) {
            m.x.push_back(double(k + 1));
            m.y.push_back(b.residuals.mean_r[k]);
            a.x.push_back(double(k + 1));
            a.y.push_back(b.residuals.mean_abs_r[k]);
        }
        mean_plot.series.push_back(m);
        abs_plot.series.push_back(a);
        ++idx;
    }
    write_line_plot(dir / "residual_mean.png", mean_plot);
    write_line_plot(dir / "residual_abs.png", abs_plot);

    if (study) {
        {
            auto f = open("similarity.csv");
            study->write_csv(f);
        }
        PlotSpec sim = titled("similarity and diversity", "missing %", "distance");
        Series self{"self", {}, {}, palette(0)}, mutual{"mutual", {}, {}, palette(1)};
        for (const auto& p : study->points) {
            self.x.push_back(100 * p.missing);
            self.y.push_back(p.self_mean);
            mutual.x.push_back(100 * p.missing);
            mutual.y.push_back(p.mutual_mean);
        }
        sim.series = {self, mutual};
        write_line_plot(dir / "similarity.png", sim);
    }
}

} // namespace rbtn
