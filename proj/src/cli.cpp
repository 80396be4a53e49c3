#include "rbtn/cli.hpp"

#include "rbtn/checkpoint.hpp"
#include "rbtn/data.hpp"
#include "rbtn/evaluation.hpp"
#include "rbtn/inference.hpp"
#include "rbtn/png_io.hpp"
#include "rbtn/seed.hpp"
#include "rbtn/service.hpp"
#include "rbtn/training.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace rbtn {

namespace {

namespace fs = std::filesystem;

struct GenerateArgs {
    std::string model;
    int iterations = 100;
    double adv_step = 1.0;
    bool no_anchor = false;
    bool no_adv = false;
    bool adv_descent = false;
    int record_every = 1;
    std::string out;
    std::uint64_t seed = 0;

    GenerationOptions options() const {
        GenerationOptions o;
        o.iterations = iterations;
        o.adv_step = adv_step;
        o.use_patch_anchor = !no_anchor;
        o.use_adv_adjust = !no_adv;
        o.adv_descent = adv_descent;
        o.record_every = record_every;
        return o;
    }
};

void add_generation_flags(CLI::App* cmd, GenerateArgs& a) {
    cmd->add_option("--model", a.model, "Checkpoint file")->required();
    cmd->add_option("--iterations", a.iterations, "Recursive iterations K")->capture_default_str();
    cmd->add_option("--adv-step", a.adv_step, "Step along d log D / d sketch")->capture_default_str();
    cmd->add_flag("--no-anchor", a.no_anchor, "Disable patch anchoring after the first iteration");
    cmd->add_flag("--no-adv", a.no_adv, "Disable the adversarial adjustment");
    cmd->add_flag("--adv-descent", a.adv_descent, "Subtract the gradient instead of adding it");
    cmd->add_option("--record-every", a.record_every, "Keep every n-th frame")->capture_default_str();
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--seed", a.seed, "Seed (generation is deterministic; recorded for provenance)")->capture_default_str();
}

Mask parse_rect(const std::string& text, int size) {
    int x, y, w, h;
    char c1, c2, c3;
    std::istringstream ss(text);
    if (!(ss >> x >> c1 >> y >> c2 >> w >> c3 >> h) || c1 != ',' || c2 != ',' || c3 != ',' || !ss.eof())
        throw UsageError("rect must be x,y,w,h: '" + text + "'");
    if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > size || y + h > size)
        throw UsageError("rect " + text + " is outside the " + std::to_string(size) + "px image");
    return Mask::rect(size, x, y, w, h);
}

Patch<float> load_patch(const std::string& image, const std::string& mask_or_rect, Domain domain, int size) {
    Image<float> img = load_image<float>(image, domain);
    if (img.size != size) throw ShapeError(image + ": expected " + std::to_string(size) + "px, got " + std::to_string(img.size));
    Mask mask;
    if (fs::exists(mask_or_rect)) mask = mask_from_rgb8(read_png(mask_or_rect));
    else mask = parse_rect(mask_or_rect, size);
    if (mask.size != size) throw ShapeError(mask_or_rect + ": mask size differs from the model");
    return make_patch(img, mask);
}

// Frames as <out>/frames/<k>_{face,sketch}.png, the final pair as
// <out>/{face,sketch}.png and the per-iteration residuals.
void write_trace(const GenerationTrace<float>& trace, const fs::path& out) {
    fs::create_directories(out / "frames");
    for (const auto& f : trace.frames) {
        std::ostringstream k;
        k << std::setw(4) << std::setfill('0') << f.k;
        save_image(out / "frames" / (k.str() + "_face.png"), f.face);
        save_image(out / "frames" / (k.str() + "_sketch.png"), f.sketch);
    }
    save_image(out / "face.png", trace.final_frame().face);
    save_image(out / "sketch.png", trace.final_frame().sketch);
    std::ofstream csv(out / "residuals.csv");
    csv << "k,mean_r,mean_abs_r\n" << std::setprecision(10);
    for (const auto& r : trace.residuals) csv << r.k << ',' << r.mean_r << ',' << r.mean_abs_r << '\n';
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("not a number list: '" + text + "'");
        }
    }
    if (out.empty()) throw UsageError("empty number list");
    return out;
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

} // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Recursive bidirectional face/sketch generation", "rbtn"};
    app.require_subcommand(1);

    // synth-data
    int n = 500, size = 64;
    double test_fraction = 0.1;
    std::uint64_t data_seed = 0;
    std::string data_out;
    auto* synth = app.add_subcommand("synth-data", "Render a synthetic paired dataset");
    synth->add_option("--n", n, "Number of pairs")->capture_default_str();
    synth->add_option("--size", size, "Image size")->capture_default_str();
    synth->add_option("--test-fraction", test_fraction, "Held-out fraction")->capture_default_str();
    synth->add_option("--seed", data_seed, "Master seed")->capture_default_str();
    synth->add_option("--out", data_out, "Dataset root")->required();

    // train
    TrainConfig tcfg;
    ArchConfig arch;
    std::string train_data, train_out, config_file, history_file;
    auto* train_cmd = app.add_subcommand("train", "Train f, F and D on a dataset");
    train_cmd->add_option("--data", train_data, "Dataset root (synth-data or ingested layout)")->required();
    train_cmd->add_option("--out", train_out, "Checkpoint path, rewritten every epoch")->required();
    train_cmd->add_option("--config", config_file, "key = value training config; flags override it");
    auto* o_lambda = train_cmd->add_option("--lambda", tcfg.lambda, "Reconstruction weight")->capture_default_str();
    auto* o_dsteps = train_cmd->add_option("--d-steps", tcfg.d_updates_per_gen, "D updates per f/F update")->capture_default_str();
    auto* o_epochs = train_cmd->add_option("--epochs", tcfg.epochs, "Epochs")->capture_default_str();
    auto* o_batch = train_cmd->add_option("--batch-size", tcfg.batch_size, "Mini-batch size")->capture_default_str();
    auto* o_alpha = train_cmd->add_option("--alpha", tcfg.adam_alpha, "Adam learning rate")->capture_default_str();
    auto* o_beta1 = train_cmd->add_option("--beta1", tcfg.adam_beta1, "Adam beta1")->capture_default_str();
    auto* o_tseed = train_cmd->add_option("--seed", tcfg.seed, "Data order and init seed")->capture_default_str();
    train_cmd->add_option("--depth", arch.depth, "Encoder/decoder stages")->capture_default_str();
    train_cmd->add_option("--base-channels", arch.base_channels, "Width of the first stage")->capture_default_str();
    train_cmd->add_option("--history", history_file, "Write per-step history CSV here");

    // generate / composite
    GenerateArgs gen;
    std::string patch_image, patch_mask, patch_rect, patch_domain = "face";
    auto* generate_cmd = app.add_subcommand("generate", "Grow a full face/sketch pair from one patch");
    add_generation_flags(generate_cmd, gen);
    generate_cmd->add_option("--patch", patch_image, "Source image PNG")->required();
    auto* o_mask = generate_cmd->add_option("--mask", patch_mask, "Mask PNG (white = kept)");
    auto* o_rect = generate_cmd->add_option("--rect", patch_rect, "Kept rectangle x,y,w,h");
    o_mask->excludes(o_rect);
    generate_cmd->add_option("--domain", patch_domain, "face or sketch")->capture_default_str();

    GenerateArgs comp;
    std::vector<std::string> comp_patches;
    auto* composite_cmd = app.add_subcommand("composite", "Generate from several patches across domains");
    add_generation_flags(composite_cmd, comp);
    composite_cmd->add_option("--patch", comp_patches, "DOMAIN:IMAGE:MASK_PNG or DOMAIN:IMAGE:x,y,w,h (repeatable)")
        ->required();

    // evaluate
    std::string eval_model, eval_data, eval_out, percentages = "0.2,0.4,0.6,0.8,0.95",
                                                 study_percentages = "0.1,0.2,0.3,0.4,0.6,0.8,0.95", embedder_path;
    int samples = 50, identities = 20, eval_iterations = 100;
    bool no_baseline = false;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("evaluate", "Missing-percentage sweep, FRR and similarity study");
    eval_cmd->add_option("--model", eval_model, "Checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "Dataset root; its test split is used")->required();
    eval_cmd->add_option("--out", eval_out, "Report directory")->required();
    eval_cmd->add_option("--percentages", percentages, "Missing fractions for the sweep")->capture_default_str();
    eval_cmd->add_option("--samples", samples, "Test pairs per percentage")->capture_default_str();
    eval_cmd->add_option("--iterations", eval_iterations, "Recursive iterations")->capture_default_str();
    eval_cmd->add_flag("--no-baseline", no_baseline, "Skip the unidirectional baseline");
    eval_cmd->add_option("--identities", identities, "Identities in the similarity study (0 skips it)")->capture_default_str();
    eval_cmd->add_option("--study-percentages", study_percentages, "Missing fractions for the study")->capture_default_str();
    eval_cmd->add_option("--embedder", embedder_path, "Embedder file; trained and saved here when missing");
    eval_cmd->add_option("--seed", eval_seed, "Seed for study identities and the embedder")->capture_default_str();

    // serve
    ServiceConfig scfg = ServiceConfig::from_env();
    std::string model_dir = scfg.model_dir.string();
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP job service");
    serve_cmd->add_option("--model-dir", model_dir, "Directory of <id>.ckpt files (default $RBTN_MODEL_DIR)");
    serve_cmd->add_option("--host", scfg.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", scfg.port, "Port")->capture_default_str();
    serve_cmd->add_option("--queue", scfg.queue_capacity, "Queued-job capacity")->capture_default_str();
    serve_cmd->add_option("--workers", scfg.workers, "Worker threads")->capture_default_str();
    serve_cmd->add_option("--max-iterations", scfg.max_iterations, "Upper bound on requested iterations")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (*synth) {
            const auto manifest = make_dataset(n, size, data_seed, test_fraction);
            write_dataset(manifest, data_out);
            out << "wrote " << manifest.entries.size() << " pairs (" << manifest.split("test").size() << " test) to "
                << data_out << '\n';
        } else if (*train_cmd) {
            if (!config_file.empty()) {
                const TrainConfig file = load_train_config(config_file);
                // Explicit flags win over the file.
                const TrainConfig flags = tcfg;
                tcfg = file;
                if (o_lambda->count()) tcfg.lambda = flags.lambda;
                if (o_dsteps->count()) tcfg.d_updates_per_gen = flags.d_updates_per_gen;
                if (o_epochs->count()) tcfg.epochs = flags.epochs;
                if (o_batch->count()) tcfg.batch_size = flags.batch_size;
                if (o_alpha->count()) tcfg.adam_alpha = flags.adam_alpha;
                if (o_beta1->count()) tcfg.adam_beta1 = flags.adam_beta1;
                if (o_tseed->count()) tcfg.seed = flags.seed;
            }
            tcfg.validate();
            const DatasetManifest manifest = read_manifest(train_data);
            const auto pairs = load_pairs<float>(manifest, train_data, "train");
            if (pairs.empty()) throw DataError("no training pairs in " + train_data);
            arch.image_size = pairs.front().face.size;
            arch.seed = tcfg.seed;
            arch.validate();
            TrainOptions opts;
            opts.checkpoint = train_out;
            opts.on_epoch = [&](int epoch, const StepRecord& r) {
                out << "epoch " << epoch + 1 << '/' << tcfg.epochs << " l_rec " << r.l_rec << " l_adv " << r.l_adv
                    << " d_real " << r.d_real_mean << " d_fake " << r.d_fake_mean << std::endl;
            };
            const auto result = train<float>(pairs, arch, tcfg, opts);
            if (!history_file.empty()) result.history.write_csv(history_file);
            out << "saved " << train_out << '\n';
        } else if (*generate_cmd || *composite_cmd) {
            const bool is_comp = bool(*composite_cmd);
            const GenerateArgs& a = is_comp ? comp : gen;
            const auto bundle = load_checkpoint<float>(a.model).bundle;
            const int S = bundle.arch.image_size;
            std::vector<Patch<float>> patches;
            if (is_comp) {
                for (const auto& spec : comp_patches) {
                    const auto c1 = spec.find(':'), c2 = spec.rfind(':');
                    if (c1 == std::string::npos || c1 == c2) throw UsageError("patch spec must be DOMAIN:IMAGE:MASK, got '" + spec + "'");
                    patches.push_back(load_patch(spec.substr(c1 + 1, c2 - c1 - 1), spec.substr(c2 + 1),
                                                 parse_domain(spec.substr(0, c1)), S));
                }
            } else {
                if (patch_mask.empty() && patch_rect.empty()) throw UsageError("generate needs --mask or --rect");
                patches.push_back(load_patch(patch_image, patch_mask.empty() ? patch_rect : patch_mask,
                                             parse_domain(patch_domain), S));
            }
            const auto opts = a.options();
            const auto trace = is_comp ? composite<float>(patches, bundle, opts) : generate<float>(patches, bundle, opts);
            write_trace(trace, a.out);
            out << "wrote " << trace.frames.size() << " frames to " << a.out << '\n';
        } else if (*eval_cmd) {
            const auto bundle = load_checkpoint<float>(eval_model).bundle;
            const DatasetManifest manifest = read_manifest(eval_data);
            auto test = load_pairs<float>(manifest, eval_data, "test");
            if (test.empty()) throw DataError("no test pairs in " + eval_data);
            if (samples > 0 && int(test.size()) > samples) test.resize(std::size_t(samples));
            SweepOptions sopts;
            sopts.generation.iterations = eval_iterations;
            sopts.run_baseline = !no_baseline;
            const auto pct = parse_list(percentages);
            const SweepReport sweep = run_missing_sweep<float>(bundle, test, pct, sopts);
            for (const auto& b : sweep.buckets) {
                out << "missing " << b.missing << ": frr " << b.frr;
                if (!no_baseline) out << " baseline " << b.baseline_frr;
                if (b.residuals.length()) out << " mean_r[K] " << b.residuals.mean_r.back() << " mean|r|[K] " << b.residuals.mean_abs_r.back();
                out << '\n';
            }
            std::optional<SimilarityStudy> study;
            if (identities > 0) {
                Embedder embedder;
                if (!embedder_path.empty() && fs::exists(embedder_path)) embedder = Embedder::load(embedder_path);
                else {
                    Embedder::Config ec;
                    ec.image_size = bundle.arch.image_size;
                    ec.seed = eval_seed;
                    embedder = Embedder::train(ec);
                    if (!embedder_path.empty()) embedder.save(embedder_path);
                }
                std::vector<FaceSpec> ids;
                for (int i = 0; i < identities; ++i) ids.push_back(random_face_spec(mix_seed(eval_seed, 0x1D00 + std::uint64_t(i))));
                const auto spct = parse_list(study_percentages);
                GenerationOptions g;
                g.iterations = eval_iterations;
                study = similarity_diversity_study<float>(bundle, ids, spct, embedder, g);
                for (const auto& p : study->points)
                    out << "study missing " << p.missing << ": self " << p.self_mean << " mutual " << p.mutual_mean << '\n';
            }
            export_report(eval_out, sweep, study ? &*study : nullptr);
            out << "report written to " << eval_out << '\n';
        } else if (*serve_cmd) {
            scfg.model_dir = model_dir;
            if (scfg.model_dir.empty()) throw UsageError("serve needs --model-dir or RBTN_MODEL_DIR");
            if (!fs::is_directory(scfg.model_dir)) throw IoError("model directory not found: " + model_dir);
            JobService service(scfg);
            HttpServer server(service);
            out << "serving " << scfg.model_dir.string() << " on http://" << scfg.host << ':' << scfg.port << std::endl;
            server.run();
        }
    } catch (const UsageError& e) {
        err << "error: " << e.code() << ": " << one_line(e.what()) << '\n';
        return 2;
    } catch (const Error& e) {
        err << "error: " << e.code() << ": " << one_line(e.what()) << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: internal: " << one_line(e.what()) << '\n';
        return 1;
    }
    return 0;
}

} // namespace rbtn
