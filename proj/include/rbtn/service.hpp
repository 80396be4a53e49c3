#pragma once

// Job-queue backend for remote generation. JobService holds the loaded models
// and the bounded queue; HttpServer maps the versioned JSON API onto it.
//
//   GET    /v1/models
//   POST   /v1/jobs
//   GET    /v1/jobs/{id}
//   GET    /v1/jobs/{id}/frames/{k}/{face|sketch}.png
//   DELETE /v1/jobs/{id}

#include "rbtn/error.hpp"
#include "rbtn/inference.hpp"
#include "rbtn/networks.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace rbtn {

struct ServiceConfig {
    std::filesystem::path model_dir;
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    int queue_capacity = 8;
    int workers = 1;
    int max_iterations = 1000;

    // model_dir from RBTN_MODEL_DIR when set.
    static ServiceConfig from_env();
};

enum class JobState { queued, running, done, failed, cancelled };
const char* to_string(JobState s);

struct FieldError {
    std::string field;
    std::string message;
};

// Thrown by request parsing; carries every field-level problem found.
class ValidationError : public UsageError {
public:
    explicit ValidationError(std::vector<FieldError> errors);
    const std::vector<FieldError>& errors() const { return errors_; }
    const char* code() const noexcept override { return "validation"; }

private:
    std::vector<FieldError> errors_;
};

class NotFoundError : public Error {
public:
    using Error::Error;
    const char* code() const noexcept override { return "not_found"; }
};

class QueueFullError : public Error {
public:
    QueueFullError() : Error("job queue is full") {}
    const char* code() const noexcept override { return "queue_full"; }
};

struct ModelInfo {
    std::string id;
    ArchConfig arch;
    std::int64_t epoch = 0;
};

struct GenerateRequest {
    std::string model;
    bool composite = false;
    std::uint64_t seed = 0;
    std::vector<Patch<float>> patches;
    GenerationOptions options;
};

struct FrameBlob {
    int k = 0;
    std::string face_png;
    std::string sketch_png;
};

struct JobStatus {
    std::string id;
    std::string model;
    JobState state = JobState::queued;
    int completed_iteration = -1;  // last finished k, -1 before the first
    int iterations = 0;
    std::vector<int> frames;       // recorded k values
    std::string error;
};

class JobService {
public:
    explicit JobService(ServiceConfig cfg);
    ~JobService();
    JobService(const JobService&) = delete;
    JobService& operator=(const JobService&) = delete;

    const ServiceConfig& config() const { return cfg_; }

    std::vector<ModelInfo> list_models() const;
    // Loads (once) and returns a model; throws NotFoundError.
    std::shared_ptr<const ModelBundle<float>> model(const std::string& id) const;

    // Parses and validates a JSON request body against the named model.
    GenerateRequest parse_request(const std::string& json_body) const;

    // Queues a job; throws QueueFullError when saturated.
    std::string submit(GenerateRequest request);
    JobStatus status(const std::string& id) const;
    // Encoded PNG of a recorded frame; throws NotFoundError.
    std::string frame_png(const std::string& id, int k, Domain domain) const;
    JobStatus cancel(const std::string& id);
    // Blocks until the job leaves queued/running.
    JobStatus wait(const std::string& id) const;

private:
    struct Job;
    std::shared_ptr<Job> find(const std::string& id) const;
    void worker_loop();
    void run(Job& job);

    ServiceConfig cfg_;
    mutable std::mutex models_mu_;
    mutable std::map<std::string, std::shared_ptr<const ModelBundle<float>>> models_;

    mutable std::mutex mu_;
    std::condition_variable queue_cv_;
    mutable std::condition_variable done_cv_;
    std::deque<std::shared_ptr<Job>> queue_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::uint64_t next_id_ = 1;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

// Encodes a trace frame exactly as the CLI writes it to disk.
std::string frame_to_png(const Image<float>& img);

std::string base64_encode(const std::string& bytes);
// Throws UsageError on malformed input.
std::string base64_decode(const std::string& text);

class HttpServer {
public:
    explicit HttpServer(JobService& service);
    ~HttpServer();

    // Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();
    // Binds and serves on the calling thread.
    void run();

private:
    void routes();

    JobService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

} // namespace rbtn
