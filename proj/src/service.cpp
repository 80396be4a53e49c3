#include "rbtn/service.hpp"

#include "rbtn/checkpoint.hpp"
#include "rbtn/png_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>

namespace rbtn {

using nlohmann::json;

namespace {

constexpr const char* kB64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

bool valid_model_id(const std::string& id) {
    return !id.empty() && id.size() <= 128 && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    }) && id.front() != '.';
}

ValidationError invalid(const std::string& field, const std::string& message) {
    return ValidationError(std::vector<FieldError>{{field, message}});
}

} // namespace

ServiceConfig ServiceConfig::from_env() {
    ServiceConfig c;
    if (const char* dir = std::getenv("RBTN_MODEL_DIR")) c.model_dir = dir;
    return c;
}

const char* to_string(JobState s) {
    switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    case JobState::cancelled: return "cancelled";
    }
    return "?";
}

ValidationError::ValidationError(std::vector<FieldError> errors)
    : UsageError(errors.empty() ? "invalid request" : errors.front().field + ": " + errors.front().message),
      errors_(std::move(errors)) {}

std::string base64_encode(const std::string& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const unsigned v = (unsigned char)bytes[i] << 16 | (unsigned char)bytes[i + 1] << 8 | (unsigned char)bytes[i + 2];
        for (int s : {18, 12, 6, 0}) out += kB64[(v >> s) & 63];
    }
    if (i < bytes.size()) {
        unsigned v = (unsigned char)bytes[i] << 16;
        if (i + 1 < bytes.size()) v |= (unsigned char)bytes[i + 1] << 8;
        out += kB64[(v >> 18) & 63];
        out += kB64[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::string base64_decode(const std::string& text) {
    std::string in;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) in += c;
    // Tolerate data URLs from browsers.
    if (const auto comma = in.find(','); in.rfind("data:", 0) == 0 && comma != std::string::npos) in = in.substr(comma + 1);
    if (in.size() % 4 != 0) throw UsageError("base64: length is not a multiple of 4");
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        unsigned v = 0;
        int pad = 0;
        for (int j = 0; j < 4; ++j) {
            const char c = in[i + j];
            int d;
            if (c == '=') {
                if (i + 4 != in.size() || j < 2) throw UsageError("base64: misplaced padding");
                ++pad;
                d = 0;
            } else {
                if (pad) throw UsageError("base64: data after padding");
                const char* p = std::strchr(kB64, c);
                if (!p || c == '\0') throw UsageError("base64: invalid character");
                d = int(p - kB64);
            }
            v = v << 6 | unsigned(d);
        }
        out += char((v >> 16) & 255);
        if (pad < 2) out += char((v >> 8) & 255);
        if (pad < 1) out += char(v & 255);
    }
    return out;
}

std::string frame_to_png(const Image<float>& img) { return encode_png(to_rgb8(img)); }

// ---- jobs -------------------------------------------------------------------

struct JobService::Job {
    std::string id;
    GenerateRequest request;
    std::shared_ptr<const ModelBundle<float>> bundle;

    mutable std::mutex mu;
    JobState state = JobState::queued;
    int completed = -1;
    std::vector<FrameBlob> frames;
    std::string error;
    std::atomic<bool> cancel{false};

    JobStatus snapshot() const {
        std::lock_guard lock(mu);
        JobStatus s;
        s.id = id;
        s.model = request.model;
        s.state = state;
        s.completed_iteration = completed;
        s.iterations = request.options.iterations;
        for (const auto& f : frames) s.frames.push_back(f.k);
        s.error = error;
        return s;
    }
};

JobService::JobService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.queue_capacity < 1) throw ConfigError("service: queue capacity must be >= 1");
    if (cfg_.workers < 1) throw ConfigError("service: workers must be >= 1");
    for (int i = 0; i < cfg_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

JobService::~JobService() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
        for (auto& [id, job] : jobs_) job->cancel = true;
    }
    queue_cv_.notify_all();
    for (auto& t : workers_) t.join();
}

std::vector<ModelInfo> JobService::list_models() const {
    std::vector<ModelInfo> out;
    if (cfg_.model_dir.empty() || !std::filesystem::is_directory(cfg_.model_dir)) return out;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg_.model_dir))
        if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        try {
            const auto ck = load_checkpoint<float>(f);
            out.push_back({f.stem().string(), ck.bundle.arch, ck.epoch});
        } catch (const Error&) {
            // Unreadable checkpoints are not offered.
        }
    }
    return out;
}

std::shared_ptr<const ModelBundle<float>> JobService::model(const std::string& id) const {
    if (!valid_model_id(id)) throw NotFoundError("model '" + id + "' not found");
    std::lock_guard lock(models_mu_);
    if (auto it = models_.find(id); it != models_.end()) return it->second;
    const auto path = cfg_.model_dir / (id + ".ckpt");
    if (cfg_.model_dir.empty() || !std::filesystem::is_regular_file(path))
        throw NotFoundError("model '" + id + "' not found");
    auto bundle = std::make_shared<const ModelBundle<float>>(load_checkpoint<float>(path).bundle);
    models_[id] = bundle;
    return bundle;
}

GenerateRequest JobService::parse_request(const std::string& body) const {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw invalid("body", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw invalid("body", "expected a JSON object");

    std::vector<FieldError> errs;
    GenerateRequest req;
    if (!j.contains("model") || !j["model"].is_string()) throw invalid("model", "required string");
    req.model = j["model"].get<std::string>();
    const auto bundle = model(req.model);  // NotFoundError propagates as 404
    const int S = bundle->arch.image_size;

    if (j.contains("mode")) {
        if (!j["mode"].is_string() || (j["mode"] != "generate" && j["mode"] != "composite"))
            errs.push_back({"mode", "must be \"generate\" or \"composite\""});
        else req.composite = j["mode"] == "composite";
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) errs.push_back({"seed", "must be a non-negative integer"});
        else req.seed = j["seed"].get<std::uint64_t>();
    }

    if (j.contains("options")) {
        const auto& o = j["options"];
        if (!o.is_object()) errs.push_back({"options", "must be an object"});
        else {
            auto& opt = req.options;
            auto get_int = [&](const char* key, int& dst, int lo, int hi) {
                if (!o.contains(key)) return;
                if (!o[key].is_number_integer() || o[key].get<long long>() < lo || o[key].get<long long>() > hi)
                    errs.push_back({std::string("options.") + key,
                                    "must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]"});
                else dst = o[key].get<int>();
            };
            auto get_bool = [&](const char* key, bool& dst) {
                if (!o.contains(key)) return;
                if (!o[key].is_boolean()) errs.push_back({std::string("options.") + key, "must be a boolean"});
                else dst = o[key].get<bool>();
            };
            get_int("iterations", opt.iterations, 1, cfg_.max_iterations);
            get_int("record_every", opt.record_every, 1, cfg_.max_iterations);
            get_bool("use_patch_anchor", opt.use_patch_anchor);
            get_bool("use_adv_adjust", opt.use_adv_adjust);
            get_bool("adv_descent", opt.adv_descent);
            if (o.contains("adv_step")) {
                if (!o["adv_step"].is_number() || !(o["adv_step"].get<double>() >= 0.0) || o["adv_step"].get<double>() > 1e6)
                    errs.push_back({"options.adv_step", "must be a number >= 0"});
                else opt.adv_step = o["adv_step"].get<double>();
            }
            for (const auto& [key, _] : o.items())
                if (key != "iterations" && key != "record_every" && key != "use_patch_anchor" &&
                    key != "use_adv_adjust" && key != "adv_descent" && key != "adv_step")
                    errs.push_back({"options." + key, "unknown option"});
        }
    }

    if (!j.contains("patches") || !j["patches"].is_array()) {
        errs.push_back({"patches", "required array"});
    } else if (j["patches"].empty()) {
        errs.push_back({"patches", "at least one patch is required"});
    } else {
        const auto& arr = j["patches"];
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string at = "patches[" + std::to_string(i) + "]";
            const auto& p = arr[i];
            if (!p.is_object()) {
                errs.push_back({at, "must be an object"});
                continue;
            }
            std::optional<Domain> domain;
            if (!p.contains("domain") || !p["domain"].is_string()) errs.push_back({at + ".domain", "required: face or sketch"});
            else {
                try {
                    domain = parse_domain(p["domain"].get<std::string>());
                } catch (const UsageError&) {
                    errs.push_back({at + ".domain", "must be face or sketch"});
                }
            }
            std::optional<Image<float>> image;
            if (!p.contains("image") || !p["image"].is_string()) errs.push_back({at + ".image", "required base64 PNG"});
            else {
                try {
                    const Rgb8Image rgb = decode_png(base64_decode(p["image"].get<std::string>()));
                    if (rgb.width != S || rgb.height != S)
                        errs.push_back({at + ".image", "must be " + std::to_string(S) + "x" + std::to_string(S) +
                                                           " for model " + req.model});
                    else image = from_rgb8<float>(rgb, domain.value_or(Domain::face));
                } catch (const Error& e) {
                    errs.push_back({at + ".image", e.what()});
                }
            }
            std::optional<Mask> mask;
            const bool has_mask = p.contains("mask"), has_rect = p.contains("rect");
            if (has_mask == has_rect) errs.push_back({at, "exactly one of mask or rect is required"});
            else if (has_mask) {
                try {
                    if (!p["mask"].is_string()) throw UsageError("must be a base64 PNG");
                    const Rgb8Image rgb = decode_png(base64_decode(p["mask"].get<std::string>()));
                    if (rgb.width != S || rgb.height != S) throw UsageError("must be " + std::to_string(S) + "x" + std::to_string(S));
                    mask = mask_from_rgb8(rgb);
                } catch (const Error& e) {
                    errs.push_back({at + ".mask", e.what()});
                }
            } else {
                const auto& r = p["rect"];
                bool ok = r.is_object();
                for (const char* k : {"x", "y", "w", "h"}) ok = ok && r.contains(k) && r[k].is_number_integer();
                if (!ok) errs.push_back({at + ".rect", "must have integer x, y, w, h"});
                else {
                    const int x = r["x"], y = r["y"], w = r["w"], h = r["h"];
                    if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > S || y + h > S)
                        errs.push_back({at + ".rect", "must lie inside the " + std::to_string(S) + "x" + std::to_string(S) + " image"});
                    else mask = Mask::rect(S, x, y, w, h);
                }
            }
            if (mask && mask->empty()) {
                errs.push_back({at + ".mask", "mask keeps no pixels"});
                mask.reset();
            }
            if (image && mask && domain) {
                image->domain = *domain;
                req.patches.push_back(make_patch(*image, *mask));
            }
        }
        if (!req.composite && arr.size() > 1) errs.push_back({"patches", "generate mode takes one patch; use mode composite"});
    }
    if (errs.empty()) {
        try {
            validate_patches<float>(req.patches, S);
        } catch (const Error& e) {
            errs.push_back({"patches", e.what()});
        }
    }
    if (!errs.empty()) throw ValidationError(std::move(errs));
    return req;
}

std::string JobService::submit(GenerateRequest request) {
    auto job = std::make_shared<Job>();
    job->bundle = model(request.model);
    request.options.validate();
    validate_patches<float>(request.patches, job->bundle->arch.image_size);
    job->request = std::move(request);
    std::lock_guard lock(mu_);
    if (stopping_) throw Error("service is shutting down");
    if (int(queue_.size()) >= cfg_.queue_capacity) throw QueueFullError();
    job->id = "job-" + std::to_string(next_id_++);
    jobs_[job->id] = job;
    queue_.push_back(job);
    queue_cv_.notify_one();
    return job->id;
}

std::shared_ptr<JobService::Job> JobService::find(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("job '" + id + "' not found");
    return it->second;
}

JobStatus JobService::status(const std::string& id) const { return find(id)->snapshot(); }

std::string JobService::frame_png(const std::string& id, int k, Domain domain) const {
    const auto job = find(id);
    std::lock_guard lock(job->mu);
    for (const auto& f : job->frames)
        if (f.k == k) return domain == Domain::face ? f.face_png : f.sketch_png;
    throw NotFoundError("job '" + id + "' has no frame " + std::to_string(k));
}

JobStatus JobService::cancel(const std::string& id) {
    const auto job = find(id);
    {
        std::lock_guard qlock(mu_);
        std::lock_guard lock(job->mu);
        job->cancel = true;
        if (job->state == JobState::queued) {
            job->state = JobState::cancelled;
            queue_.erase(std::remove(queue_.begin(), queue_.end(), job), queue_.end());
        }
    }
    done_cv_.notify_all();
    return job->snapshot();
}

JobStatus JobService::wait(const std::string& id) const {
    const auto job = find(id);
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [&] {
        const auto s = job->snapshot().state;
        return s != JobState::queued && s != JobState::running;
    });
    return job->snapshot();
}

void JobService::worker_loop() {
    for (;;) {
        std::shared_ptr<Job> job;
        {
            std::unique_lock lock(mu_);
            queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            job = queue_.front();
            queue_.pop_front();
            std::lock_guard jl(job->mu);
            job->state = JobState::running;
        }
        run(*job);
        {
            // Pairs with wait(): state changes are published under mu_.
            std::lock_guard lock(mu_);
        }
        done_cv_.notify_all();
    }
}

void JobService::run(Job& job) {
    const auto& req = job.request;
    auto progress = [&](int k, const Frame<float>* frame) {
        FrameBlob blob;
        if (frame) blob = {frame->k, frame_to_png(frame->face), frame_to_png(frame->sketch)};
        std::lock_guard lock(job.mu);
        if (frame) job.frames.push_back(std::move(blob));
        job.completed = k;
        return !job.cancel.load();
    };
    try {
        const auto trace = req.composite ? composite<float>(req.patches, *job.bundle, req.options, progress)
                                         : generate<float>(req.patches, *job.bundle, req.options, progress);
        std::lock_guard lock(job.mu);
        job.state = trace.cancelled ? JobState::cancelled : JobState::done;
    } catch (const std::exception& e) {
        std::lock_guard lock(job.mu);
        job.state = JobState::failed;
        job.error = e.what();
    }
}

// ---- HTTP -------------------------------------------------------------------

namespace {

json status_json(const JobStatus& s) {
    json frames = json::array();
    for (int k : s.frames)
        frames.push_back({{"k", k},
                          {"face", "/v1/jobs/" + s.id + "/frames/" + std::to_string(k) + "/face.png"},
                          {"sketch", "/v1/jobs/" + s.id + "/frames/" + std::to_string(k) + "/sketch.png"}});
    json j{{"id", s.id},
           {"model", s.model},
           {"state", to_string(s.state)},
           {"completed_iteration", s.completed_iteration},
           {"iterations", s.iterations},
           {"frames", frames}};
    if (!s.error.empty()) j["error"] = s.error;
    return j;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"error", code}, {"message", message}});
}

// Maps library exceptions onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& body) {
    try {
        body();
    } catch (const ValidationError& e) {
        json fields = json::array();
        for (const auto& f : e.errors()) fields.push_back({{"field", f.field}, {"message", f.message}});
        send_json(res, 400, {{"error", "validation"}, {"message", e.what()}, {"fields", fields}});
    } catch (const NotFoundError& e) {
        send_error(res, 404, e.code(), e.what());
    } catch (const QueueFullError& e) {
        send_error(res, 503, e.code(), e.what());
    } catch (const UsageError& e) {
        send_error(res, 400, e.code(), e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

} // namespace

HttpServer::HttpServer(JobService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::routes() {
    auto& s = *server_;
    s.Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            json models = json::array();
            for (const auto& m : service_.list_models())
                models.push_back({{"id", m.id},
                                  {"image_size", m.arch.image_size},
                                  {"depth", m.arch.depth},
                                  {"base_channels", m.arch.base_channels},
                                  {"epoch", m.epoch}});
            send_json(res, 200, {{"models", models}});
        });
    });
    s.Post("/v1/jobs", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = service_.submit(service_.parse_request(req.body));
            json body = status_json(service_.status(id));
            body["links"] = {{"self", "/v1/jobs/" + id}};
            res.set_header("Location", "/v1/jobs/" + id);
            send_json(res, 202, body);
        });
    });
    s.Get(R"(/v1/jobs/([A-Za-z0-9-]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, status_json(service_.status(req.matches[1]))); });
    });
    s.Delete(R"(/v1/jobs/([A-Za-z0-9-]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, status_json(service_.cancel(req.matches[1]))); });
    });
    s.Get(R"(/v1/jobs/([A-Za-z0-9-]+)/frames/(\d+)/(face|sketch)\.png)",
          [this](const httplib::Request& req, httplib::Response& res) {
              guarded(res, [&] {
                  const int k = std::stoi(req.matches[2]);
                  res.set_content(service_.frame_png(req.matches[1], k, parse_domain(req.matches[3])), "image/png");
              });
          });
    s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send_error(res, res.status, "http", httplib::status_message(res.status));
    });
}

int HttpServer::start() {
    const auto& cfg = service_.config();
    int port = cfg.port;
    if (port == 0) port = server_->bind_to_any_port(cfg.host);
    else if (!server_->bind_to_port(cfg.host, port)) port = -1;
    if (port < 0) throw IoError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void HttpServer::run() {
    const auto& cfg = service_.config();
    if (!server_->listen(cfg.host, cfg.port)) throw IoError("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
}

} // namespace rbtn
