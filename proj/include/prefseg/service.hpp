#pragma once

#include "prefseg/prefs.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace prefseg::service {

struct RatingTask {
    std::string task_id;  // "<image_id>:<patch_index>"
    std::string image_id;
    int patch_index = 0;
    Rect region;
    int candidate_count = 0;
    std::vector<double> thresholds;
    double disagreement = 0.0;
    bool done = false;
};

nlohmann::json to_json(const RatingTask& t);
std::string make_task_id(const std::string& image_id, int patch_index);

struct Progress {
    int total = 0;
    int done = 0;
};

enum class SubmitStatus { ok, invalid, unknown_task, already_done };

struct SubmitResult {
    SubmitStatus status = SubmitStatus::ok;
    std::string message;
};

// Task list, done flags and the preference log behind the HTTP API. Every
// member is safe to call from several threads.
class AnnotationStore {
public:
    // Patches whose candidates all agree are not offered. Existing patch
    // records in prefs_path mark their tasks done.
    AnnotationStore(prefs::CandidateCache cache, std::filesystem::path prefs_path);

    // Pending tasks, highest disagreement first (image order, then patch index
    // on ties). limit < 0 returns all.
    std::vector<RatingTask> pending(int limit) const;
    std::optional<RatingTask> find(const std::string& task_id) const;
    Progress progress() const;

    // Validates, appends one JSONL line, marks the task done.
    SubmitResult submit(const prefs::PreferenceRecord& record);

    // RGB PNG of the patch with the candidate outline drawn in; candidate -1
    // returns the bare patch. Throws std::out_of_range for unknown tasks or
    // candidates.
    std::vector<std::uint8_t> render_patch(const std::string& task_id, int candidate) const;

    const std::filesystem::path& prefs_path() const { return prefs_path_; }

private:
    struct ImageData {
        Image image;
        prefs::CandidateSet candidates;
    };

    prefs::CandidateCache cache_;
    std::filesystem::path prefs_path_;
    std::vector<RatingTask> tasks_;  // served order
    std::map<std::string, size_t> index_;
    std::map<std::string, ImageData> images_;
    mutable std::mutex mutex_;
};

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::filesystem::path ui_dir;  // static bundle mounted at / when set
};

// HTTP front end:
//   GET  /api/tasks?limit=N
//   GET  /api/patch/{task_id}/{candidate|image}
//   POST /api/preferences
//   GET  /api/progress
class Server {
public:
    Server(std::shared_ptr<AnnotationStore> store, ServeOptions options);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds the socket and returns the bound port. Throws on failure.
    int bind();
    // Serves until stop(); bind() must have succeeded.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace prefseg::service
