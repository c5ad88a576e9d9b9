#include "prefseg/service.hpp"

#include "prefseg/image_io.hpp"

#include <algorithm>
#include <array>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <httplib.h>

namespace prefseg::service {

using nlohmann::json;

std::string make_task_id(const std::string& image_id, int patch_index) {
    return image_id + ":" + std::to_string(patch_index);
}

json to_json(const RatingTask& t) {
    json j;
    j["task_id"] = t.task_id;
    j["image_id"] = t.image_id;
    j["patch_index"] = t.patch_index;
    j["region"] = {{"row0", t.region.row0}, {"row1", t.region.row1}, {"col0", t.region.col0}, {"col1", t.region.col1}};
    j["patch_image"] = "/api/patch/" + t.task_id + "/image";
    json cands = json::array();
    for (int k = 0; k < t.candidate_count; ++k) {
        cands.push_back({{"index", k},
                         {"threshold", t.thresholds[k]},
                         {"overlay", "/api/patch/" + t.task_id + "/" + std::to_string(k)}});
    }
    j["candidates"] = cands;
    j["disagreement"] = t.disagreement;
    j["status"] = t.done ? "done" : "pending";
    return j;
}

AnnotationStore::AnnotationStore(prefs::CandidateCache cache, std::filesystem::path prefs_path)
    : cache_(std::move(cache)), prefs_path_(std::move(prefs_path)) {
    struct Ranked {
        RatingTask task;
        size_t image_order;
    };
    std::vector<Ranked> ranked;
    for (size_t i = 0; i < cache_.entries.size(); ++i) {
        const auto& e = cache_.entries[i];
        ImageData data{prefs::load_cached_image(cache_, e), prefs::load_candidates(cache_, e)};
        const auto grid = prefs::partition_patches(data.image.rows(), data.image.cols(), cache_.grid_size);
        const auto disagreement = prefs::patch_disagreement(data.candidates, grid);
        for (int p = 0; p < static_cast<int>(grid.cells.size()); ++p) {
            if (disagreement[p] <= 0.0) continue;
            RatingTask t;
            t.task_id = make_task_id(e.image_id, p);
            t.image_id = e.image_id;
            t.patch_index = p;
            t.region = grid.cells[p];
            t.candidate_count = static_cast<int>(data.candidates.size());
            for (const auto& c : data.candidates.candidates) t.thresholds.push_back(c.threshold);
            t.disagreement = disagreement[p];
            ranked.push_back(Ranked{std::move(t), i});
        }
        images_.emplace(e.image_id, std::move(data));
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.task.disagreement != b.task.disagreement) return a.task.disagreement > b.task.disagreement;
        if (a.image_order != b.image_order) return a.image_order < b.image_order;
        return a.task.patch_index < b.task.patch_index;
    });
    for (auto& r : ranked) {
        index_[r.task.task_id] = tasks_.size();
        tasks_.push_back(std::move(r.task));
    }
    for (const auto& rec : prefs::load_preferences(prefs_path_)) {
        if (rec.patch_index < 0) continue;
        auto it = index_.find(make_task_id(rec.image_id, rec.patch_index));
        if (it != index_.end()) tasks_[it->second].done = true;
    }
}

std::vector<RatingTask> AnnotationStore::pending(int limit) const {
    std::lock_guard lock(mutex_);
    std::vector<RatingTask> out;
    for (const auto& t : tasks_) {
        if (limit >= 0 && static_cast<int>(out.size()) >= limit) break;
        if (!t.done) out.push_back(t);
    }
    return out;
}

std::optional<RatingTask> AnnotationStore::find(const std::string& task_id) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(task_id);
    if (it == index_.end()) return std::nullopt;
    return tasks_[it->second];
}

Progress AnnotationStore::progress() const {
    std::lock_guard lock(mutex_);
    Progress p;
    p.total = static_cast<int>(tasks_.size());
    p.done = static_cast<int>(std::count_if(tasks_.begin(), tasks_.end(), [](const RatingTask& t) { return t.done; }));
    return p;
}

SubmitResult AnnotationStore::submit(const prefs::PreferenceRecord& record) {
    try {
        prefs::validate_record(record);
    } catch (const prefs::PreferenceError& e) {
        return {SubmitStatus::invalid, e.what()};
    }
    std::lock_guard lock(mutex_);
    auto it = index_.find(make_task_id(record.image_id, record.patch_index));
    if (it == index_.end()) {
        return {SubmitStatus::unknown_task, "no task for image '" + record.image_id + "' patch " + std::to_string(record.patch_index)};
    }
    RatingTask& task = tasks_[it->second];
    try {
        prefs::validate_record(record, task.candidate_count);
    } catch (const prefs::PreferenceError& e) {
        return {SubmitStatus::invalid, e.what()};
    }
    if (task.done) return {SubmitStatus::already_done, "task " + task.task_id + " is already done"};
    prefs::store_preferences({record}, prefs_path_);
    task.done = true;
    return {SubmitStatus::ok, task.task_id};
}

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 6> kHues{{
    {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200}, {245, 130, 48}, {145, 30, 180}}};

bool on_outline(const Mask& m, int r, int c) {
    if (!m(r, c)) return false;
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k];
        const int cc = c + dc[k];
        if (!m.in_bounds(rr, cc) || !m(rr, cc)) return true;
    }
    return false;
}

}  // namespace

std::vector<std::uint8_t> AnnotationStore::render_patch(const std::string& task_id, int candidate) const {
    std::optional<RatingTask> task = find(task_id);
    if (!task) throw std::out_of_range("unknown task '" + task_id + "'");
    if (candidate < -1 || candidate >= task->candidate_count) throw std::out_of_range("unknown candidate");
    const auto& data = images_.at(task->image_id);
    const Rect& r = task->region;
    const auto gray = io::quantize(crop(data.image, r));
    std::vector<std::uint8_t> rgb(static_cast<size_t>(r.area()) * 3);
    for (size_t i = 0; i < gray.size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = gray[i];
    if (candidate >= 0) {
        const Mask& m = data.candidates.candidates[candidate].mask;
        const auto& hue = kHues[candidate % kHues.size()];
        for (int row = r.row0; row < r.row1; ++row) {
            for (int col = r.col0; col < r.col1; ++col) {
                if (!on_outline(m, row, col)) continue;
                const size_t i = static_cast<size_t>(row - r.row0) * r.width() + (col - r.col0);
                std::copy(hue.begin(), hue.end(), rgb.begin() + static_cast<std::ptrdiff_t>(3 * i));
            }
        }
    }
    return io::encode_png_rgb(r.height(), r.width(), rgb);
}

struct Server::Impl {
    std::shared_ptr<AnnotationStore> store;
    ServeOptions options;
    httplib::Server http;
    bool bound = false;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

Server::Server(std::shared_ptr<AnnotationStore> store, ServeOptions options) : impl_(std::make_unique<Impl>()) {
    impl_->store = std::move(store);
    impl_->options = std::move(options);
    auto& http = impl_->http;
    AnnotationStore* s = impl_->store.get();

    http.Get("/api/tasks", [s](const httplib::Request& req, httplib::Response& res) {
        int limit = -1;
        if (req.has_param("limit")) {
            try {
                size_t used = 0;
                const std::string v = req.get_param_value("limit");
                limit = std::stoi(v, &used);
                if (used != v.size() || limit < 0) throw std::invalid_argument(v);
            } catch (const std::exception&) {
                send_error(res, 400, "limit must be a non-negative integer");
                return;
            }
        }
        json arr = json::array();
        for (const auto& t : s->pending(limit)) arr.push_back(to_json(t));
        res.set_content(arr.dump(), "application/json");
    });

    http.Get(R"(/api/patch/([^/]+)/([^/]+))", [s](const httplib::Request& req, httplib::Response& res) {
        const std::string task_id = req.matches[1];
        const std::string which = req.matches[2];
        int candidate = -1;
        if (which != "image") {
            try {
                size_t used = 0;
                candidate = std::stoi(which, &used);
                if (used != which.size() || candidate < 0) throw std::invalid_argument(which);
            } catch (const std::exception&) {
                send_error(res, 404, "no candidate '" + which + "'");
                return;
            }
        }
        try {
            const auto png = s->render_patch(task_id, candidate);
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        } catch (const std::out_of_range& e) {
            send_error(res, 404, e.what());
        }
    });

    http.Post("/api/preferences", [s](const httplib::Request& req, httplib::Response& res) {
        prefs::PreferenceRecord record;
        try {
            record = prefs::record_from_json(json::parse(req.body));
        } catch (const json::exception& e) {
            send_error(res, 400, std::string("malformed JSON: ") + e.what());
            return;
        } catch (const prefs::PreferenceError& e) {
            send_error(res, 400, e.what());
            return;
        }
        const auto result = s->submit(record);
        switch (result.status) {
            case SubmitStatus::ok: res.set_content(json{{"status", "ok"}, {"task_id", result.message}}.dump(), "application/json"); break;
            case SubmitStatus::invalid:
            case SubmitStatus::unknown_task: send_error(res, 400, result.message); break;
            case SubmitStatus::already_done: send_error(res, 409, result.message); break;
        }
    });

    http.Get("/api/progress", [s](const httplib::Request&, httplib::Response& res) {
        const auto p = s->progress();
        res.set_content(json{{"total", p.total}, {"done", p.done}, {"pending", p.total - p.done}}.dump(), "application/json");
    });

    http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send_error(res, 500, what);
    });

    if (!impl_->options.ui_dir.empty()) {
        if (!http.set_mount_point("/", impl_->options.ui_dir.string())) {
            throw std::runtime_error("cannot mount UI directory " + impl_->options.ui_dir.string());
        }
    }
}

Server::~Server() { stop(); }

int Server::bind() {
    auto& o = impl_->options;
    int port = o.port;
    if (port == 0) {
        port = impl_->http.bind_to_any_port(o.host);
        if (port < 0) throw std::runtime_error("cannot bind " + o.host);
    } else if (!impl_->http.bind_to_port(o.host, port)) {
        throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(port));
    }
    impl_->bound = true;
    return port;
}

void Server::listen() {
    if (!impl_->bound) throw std::logic_error("Server::listen before bind");
    impl_->http.listen_after_bind();
}

void Server::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace prefseg::service
