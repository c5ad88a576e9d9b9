#include "prefseg/adapt.hpp"
#include "prefseg/config.hpp"
#include "prefseg/dpo.hpp"
#include "prefseg/image_io.hpp"
#include "prefseg/metrics.hpp"
#include "prefseg/model.hpp"
#include "prefseg/prefs.hpp"
#include "prefseg/service.hpp"
#include "prefseg/synth.hpp"
#include "prefseg/upo.hpp"

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefseg;

namespace {

// Bad input the user can fix (exit 1), as opposed to a failed run (exit 2).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Globals {
    std::uint64_t seed = 0;
    fs::path config;
    fs::path out = ".";
};

json read_config_json(const fs::path& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw config::ConfigError("cannot read config file " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw config::ConfigError("config file " + path.string() + ": " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

// Accepts a dataset directory or its manifest file.
std::vector<synth::Sample> load_dataset(const fs::path& p) {
    const fs::path manifest = fs::is_directory(p) ? p / "manifest.txt" : p;
    if (!fs::exists(manifest)) throw UsageError("no dataset manifest at " + manifest.string());
    return synth::load_samples(synth::load_manifest(manifest));
}

model::ModelParams load_model(const fs::path& p) {
    if (!fs::exists(p)) throw UsageError("no checkpoint at " + p.string());
    return model::load_checkpoint(p);
}

prefs::CandidateCache load_cache(const fs::path& p) {
    if (!fs::exists(p / "index.json")) throw UsageError("no candidate cache at " + p.string());
    return prefs::load_candidate_cache(p);
}

// Effective values of every option of the subcommand, defaults included.
json option_values(const CLI::App& sub) {
    json args = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help") continue;
        const auto& results = opt->results();
        if (!results.empty()) {
            args[name] = results.size() == 1 ? json(results.front()) : json(results);
        } else {
            args[name] = opt->get_default_str();
        }
    }
    return args;
}

void write_run_manifest(const Globals& g, const CLI::App& sub, const config::PipelineConfig& cfg) {
    ensure_dir(g.out);
    json j;
    j["command"] = sub.get_name();
    j["seed"] = g.seed;
    j["config_file"] = g.config.string();
    j["config"] = config::to_json(cfg);
    j["args"] = option_values(sub);
    write_text(g.out / "run.json", j.dump(2) + "\n");
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// gen-data ---------------------------------------------------------------

struct GenArgs {
    std::string domain;
    std::optional<int> count, height, width, bias;
    std::optional<std::string> id_prefix;
};

void run_gen_data(const Globals& g, const GenArgs& a, config::PipelineConfig& cfg, const json& raw) {
    // The domain's default shift goes in first so a config file can still
    // override individual shift fields.
    synth::Domain domain = synth::Domain::source;
    if (!a.domain.empty()) {
        domain = synth::parse_domain(a.domain);
    } else if (raw.contains("synth") && raw["synth"].is_object() && raw["synth"].contains("domain")) {
        domain = synth::parse_domain(raw["synth"]["domain"].get<std::string>());
    }
    cfg.synth.domain = domain;
    cfg.synth.shift = synth::default_shift(domain);
    config::apply_json(cfg, raw);
    cfg.synth.domain = domain;
    if (a.count) cfg.synth.count = *a.count;
    if (a.height) cfg.synth.height = *a.height;
    if (a.width) cfg.synth.width = *a.width;
    if (a.bias) cfg.synth.bias_dilation_px = *a.bias;
    if (a.id_prefix) cfg.synth.id_prefix = *a.id_prefix;
    const auto m = synth::gen_dataset(cfg.synth, g.seed, g.out);
    std::cout << "wrote " << m.entries.size() << " " << synth::to_string(domain) << " images to " << g.out.string() << "\n";
}

// train ------------------------------------------------------------------

struct TrainArgs {
    fs::path source, target, init;
    std::optional<double> sparse_fraction;
    std::optional<int> iterations;
};

void run_train(const Globals& g, const TrainArgs& a, config::PipelineConfig& cfg) {
    if (a.sparse_fraction) cfg.sparse_fraction = *a.sparse_fraction;
    if (a.iterations) cfg.stage1.iterations = *a.iterations;
    cfg.stage1.seed = g.seed;
    const auto source = load_dataset(a.source);
    const auto target = a.target.empty() ? std::vector<synth::Sample>{} : load_dataset(a.target);

    model::ModelParams init;
    if (!a.init.empty()) {
        init = load_model(a.init);
    } else {
        adapt::Stage1Config warm = cfg.stage1;
        warm.use_target = false;
        warm.iterations = cfg.source_iterations;
        warm.lambda_det = cfg.source_lambda_det;
        std::cout << "source-only warm start, " << warm.iterations << " iterations\n";
        auto res = adapt::train_stage1(source, {}, cfg.sparse_fraction, warm, model::ModelParams::random(g.seed));
        init = res.student.params();
        model::save_checkpoint(g.out / "source.ckpt", init);
    }

    std::ostringstream log;
    if (target.empty()) {
        std::cout << "no target dataset; model.ckpt is the initial model\n";
        model::save_checkpoint(g.out / "model.ckpt", init);
        write_text(g.out / "train_log.txt", "");
        return;
    }
    std::cout << "stage 1, " << cfg.stage1.iterations << " iterations\n";
    const auto res = adapt::train_stage1(source, target, cfg.sparse_fraction, cfg.stage1, init);
    for (const auto& e : res.log) log << adapt::format_log_line(e) << "\n";
    model::save_checkpoint(g.out / "model.ckpt", res.student.params());
    model::save_checkpoint(g.out / "teacher.ckpt", res.teacher.params());
    write_text(g.out / "train_log.txt", log.str());
}

// build-prefs ------------------------------------------------------------

struct BuildArgs {
    fs::path model, data;
    std::optional<double> sparse_fraction;
};

void run_build_prefs(const Globals& g, const BuildArgs& a, config::PipelineConfig& cfg) {
    if (a.sparse_fraction) cfg.sparse_fraction = *a.sparse_fraction;
    const auto params = load_model(a.model);
    const auto samples = load_dataset(a.data);
    const auto prompts = adapt::sparse_target_points(samples, cfg.sparse_fraction, g.seed);
    std::vector<prefs::CandidateSet> sets;
    std::vector<Image> images;
    std::vector<PointSet> used_prompts;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const auto prob = model::forward_seg(params, model::extract_features(s.image, prompts[i]));
        try {
            sets.push_back(prefs::generate_candidates(prob, cfg.thresholds, s.id));
        } catch (const prefs::DegenerateCandidates& e) {
            std::clog << "warning: skipping " << s.id << ": " << e.what() << "\n";
            continue;
        }
        images.push_back(s.image);
        used_prompts.push_back(prompts[i]);
    }
    if (sets.empty()) throw std::runtime_error("build-prefs: every image produced degenerate candidates");
    prefs::write_candidate_cache(g.out, cfg.grid_size, cfg.thresholds, sets, images, used_prompts);
    std::cout << "cached candidates for " << sets.size() << " of " << samples.size() << " images\n";
}

// rate-oracle ------------------------------------------------------------

struct RateArgs {
    fs::path cache, data, prefs;
    std::string level = "both";
    std::string timestamp;
};

void run_rate_oracle(const Globals& g, const RateArgs& a) {
    if (a.level != "global" && a.level != "local" && a.level != "both") {
        throw UsageError("--level must be global, local or both");
    }
    const auto cache = load_cache(a.cache);
    const auto samples = load_dataset(a.data);
    std::map<std::string, const synth::Sample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    const std::string ts = a.timestamp.empty() ? prefs::utc_timestamp() : a.timestamp;

    std::vector<prefs::PreferenceRecord> out;
    auto emit = [&](const std::string& id, int patch, const prefs::Ranking& r) {
        out.push_back(prefs::PreferenceRecord{id, patch, r.preferred, r.dispreferred, prefs::Rater::oracle, ts});
    };
    for (const auto& e : cache.entries) {
        auto it = by_id.find(e.image_id);
        if (it == by_id.end()) throw UsageError("dataset has no image '" + e.image_id + "'");
        const Mask& truth = it->second->true_mask;
        const auto cands = prefs::load_candidates(cache, e);
        if (a.level != "local") {
            if (auto r = prefs::oracle_rank(cands, truth, std::nullopt)) emit(e.image_id, -1, *r);
        }
        if (a.level != "global") {
            const auto grid = prefs::partition_patches(truth.rows(), truth.cols(), cache.grid_size);
            for (int p = 0; p < static_cast<int>(grid.cells.size()); ++p) {
                if (auto r = prefs::oracle_rank(cands, truth, grid.cells[p])) emit(e.image_id, p, *r);
            }
        }
    }
    const fs::path path = a.prefs.empty() ? g.out / "preferences.jsonl" : a.prefs;
    prefs::store_preferences(out, path);
    std::cout << "appended " << out.size() << " oracle records to " << path.string() << "\n";
}

// refine-upo -------------------------------------------------------------

struct RefineArgs {
    fs::path cache, model, prefs;
    std::string timestamp;
};

void run_refine_upo(const Globals& g, const RefineArgs& a, const config::PipelineConfig& cfg) {
    const auto cache = load_cache(a.cache);
    const auto params = load_model(a.model);
    const std::string ts = a.timestamp.empty() ? prefs::utc_timestamp() : a.timestamp;
    ensure_dir(g.out / "refined");
    std::vector<prefs::PreferenceRecord> out;
    for (const auto& e : cache.entries) {
        const Image image = prefs::load_cached_image(cache, e);
        const auto prob = model::forward_seg(params, model::extract_features(image, e.prompts));
        const Mask refined = upo::refine_mask(prob, image, cfg.drlse);
        io::write_mask(g.out / "refined" / (e.image_id + ".png"), refined);
        out.push_back(upo::upo_select(prefs::load_candidates(cache, e), refined, ts));
    }
    const fs::path path = a.prefs.empty() ? g.out / "preferences.jsonl" : a.prefs;
    prefs::store_preferences(out, path);
    std::cout << "appended " << out.size() << " upo records to " << path.string() << "\n";
}

// finetune ---------------------------------------------------------------

struct FinetuneArgs {
    fs::path model, cache, prefs, anchor;
    std::string mode;
    std::optional<double> patch_fraction, lr;
    std::optional<int> iterations;
};

void run_finetune(const Globals& g, const FinetuneArgs& a, config::PipelineConfig& cfg) {
    if (a.patch_fraction) cfg.patch_fraction = *a.patch_fraction;
    if (a.lr) cfg.dpo.learning_rate = *a.lr;
    if (a.iterations) cfg.dpo.iterations = *a.iterations;
    cfg.dpo.seed = g.seed;
    dpo::Mode mode;
    try {
        mode = dpo::parse_mode(a.mode);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto params = load_model(a.model);
    const auto cache = load_cache(a.cache);
    if (!fs::exists(a.prefs)) throw UsageError("no preference file at " + a.prefs.string());
    auto records = prefs::load_preferences(a.prefs);
    const auto images = dpo::train_images_from_cache(cache);
    if (mode == dpo::Mode::slpo) {
        records = dpo::restrict_to_patches(records, images, cache.grid_size, cfg.patch_fraction, cfg.selection, g.seed);
    }
    std::vector<dpo::AnchorImage> anchors;
    if (!a.anchor.empty()) {
        const auto src = load_dataset(a.anchor);
        const auto prompts = adapt::sparse_target_points(src, cfg.sparse_fraction, g.seed);
        for (size_t i = 0; i < src.size(); ++i) {
            anchors.push_back(dpo::AnchorImage{model::extract_features(src[i].image, prompts[i]), adapt::from_mask(src[i].mask)});
        }
    }
    const model::PolicySnapshot policy(params, model::PolicyTag::student);
    const model::PolicySnapshot ref(params, model::PolicyTag::reference);
    const auto res = dpo::finetune_dpo(policy, ref, images, records, mode, cache.grid_size, cfg.dpo, anchors);
    std::ostringstream log;
    for (const auto& e : res.log) log << dpo::format_log_line(e) << "\n";
    model::save_checkpoint(g.out / "model.ckpt", res.policy.params());
    write_text(g.out / "finetune_log.txt", log.str());
    std::cout << dpo::to_string(mode) << " fine-tuning on " << res.groups << " preference groups, "
              << cfg.dpo.iterations << " iterations\n";
}

// eval / sweep -----------------------------------------------------------

struct EvalArgs {
    fs::path model, pred, data;
    double prompt_fraction = 0.0;
};

void run_eval(const Globals& g, const EvalArgs& a) {
    if (a.model.empty() == a.pred.empty()) throw UsageError("eval needs exactly one of --model or --pred");
    const auto samples = load_dataset(a.data);
    metrics::Summary summary;
    if (!a.model.empty()) {
        summary = metrics::evaluate(load_model(a.model), samples, a.prompt_fraction, g.seed);
    } else {
        std::vector<metrics::ImageScore> scores;
        for (const auto& s : samples) {
            const fs::path p = a.pred / (s.id + ".png");
            if (!fs::exists(p)) throw UsageError("no prediction for " + s.id + " at " + p.string());
            scores.push_back(metrics::score_masks(s.id, io::read_mask(p), s.true_mask));
        }
        summary = metrics::summarize(std::move(scores));
    }
    const std::string report = metrics::format_report(summary);
    write_text(g.out / "report.txt", report);
    metrics::write_report_csv(g.out / "report.csv", summary);
    std::cout << report;
}

struct SweepArgs {
    fs::path model, data;
    std::vector<double> fractions{0.0, 0.15, 0.5, 1.0};
};

void run_sweep(const Globals& g, const SweepArgs& a) {
    const auto rows = metrics::eval_prompt_sweep(load_model(a.model), load_dataset(a.data), a.fractions, g.seed);
    std::ostringstream csv;
    csv << "fraction,dice,aji,pq\n";
    for (const auto& r : rows) {
        csv << format_double(r.fraction) << "," << format_double(r.dice) << "," << format_double(r.aji) << ","
            << format_double(r.pq) << "\n";
    }
    write_text(g.out / "sweep.csv", csv.str());
    std::cout << csv.str();
}

// consistency ------------------------------------------------------------

struct ConsistencyArgs {
    fs::path prefs;
    std::optional<int> grid;
};

void run_consistency(const Globals& g, const ConsistencyArgs& a, const config::PipelineConfig& cfg) {
    if (!fs::exists(a.prefs)) throw UsageError("no preference file at " + a.prefs.string());
    const int grid = a.grid.value_or(cfg.grid_size);
    std::vector<prefs::PreferenceRecord> global, local;
    for (const auto& r : prefs::load_preferences(a.prefs)) {
        if (r.patch_index >= 0) {
            local.push_back(r);
        } else if (r.rater != prefs::Rater::upo) {
            global.push_back(r);
        }
    }
    const auto h = prefs::consistency_histogram(global, local, grid * grid);
    std::ostringstream csv;
    csv << "k,images\n";
    for (size_t k = 0; k < h.counts.size(); ++k) csv << k << "," << h.counts[k] << "\n";
    write_text(g.out / "consistency.csv", csv.str());
    std::cout << csv.str() << "images: " << h.images << ", excluded: " << h.excluded.size() << "\n";
}

// serve ------------------------------------------------------------------

struct ServeArgs {
    fs::path cache, prefs, ui_dir;
    std::string host = "127.0.0.1";
    int port = 8080;
};

void run_serve(const Globals& g, const ServeArgs& a) {
    const fs::path prefs_path = a.prefs.empty() ? g.out / "preferences.jsonl" : a.prefs;
    auto store = std::make_shared<service::AnnotationStore>(load_cache(a.cache), prefs_path);
    service::Server server(store, service::ServeOptions{a.host, a.port, a.ui_dir});

    // The listener runs on its own thread; this one waits for the signal.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    const int port = server.bind();
    const auto p = store->progress();
    std::cout << "serving " << p.total << " tasks (" << p.done << " done) on http://" << a.host << ":" << port
              << "\npreferences: " << prefs_path.string() << std::endl;
    std::thread listener([&] { server.listen(); });
    int sig = 0;
    sigwait(&set, &sig);
    std::cout << "stopping" << std::endl;
    server.stop();
    listener.join();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prefseg: preference-tuned domain-adaptive segmentation on synthetic data"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output directory")->capture_default_str();

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_cmd->add_option("--domain", gen.domain, "source or target");
    gen_cmd->add_option("--count", gen.count, "Number of images");
    gen_cmd->add_option("--height", gen.height, "Image height");
    gen_cmd->add_option("--width", gen.width, "Image width");
    gen_cmd->add_option("--bias-dilation", gen.bias, "Dilate stored masks by this many pixels");
    gen_cmd->add_option("--id-prefix", gen.id_prefix, "Prefix for image ids");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Stage-1 domain adaptation");
    train_cmd->add_option("--source", train.source, "Labeled source dataset")->required();
    train_cmd->add_option("--target", train.target, "Target dataset");
    train_cmd->add_option("--init", train.init, "Initial checkpoint (default: source-only warm start)");
    train_cmd->add_option("--sparse-fraction", train.sparse_fraction, "Share of target centers used as points (0 = UDA)");
    train_cmd->add_option("--iterations", train.iterations, "Stage-1 iterations");

    BuildArgs build;
    auto* build_cmd = app.add_subcommand("build-prefs", "Predict threshold candidates and write the candidate cache");
    build_cmd->add_option("--model", build.model, "Checkpoint")->required();
    build_cmd->add_option("--data", build.data, "Target dataset")->required();
    build_cmd->add_option("--sparse-fraction", build.sparse_fraction, "Share of centers used as prompts");

    RateArgs rate;
    auto* rate_cmd = app.add_subcommand("rate-oracle", "Rate candidates against the true masks");
    rate_cmd->add_option("--cache", rate.cache, "Candidate cache")->required();
    rate_cmd->add_option("--data", rate.data, "Dataset holding the true masks")->required();
    rate_cmd->add_option("--level", rate.level, "global, local or both")->capture_default_str();
    rate_cmd->add_option("--prefs", rate.prefs, "Preference file to append to (default <out>/preferences.jsonl)");
    rate_cmd->add_option("--timestamp", rate.timestamp, "Record timestamp (default: now, UTC)");

    RefineArgs refine;
    auto* refine_cmd = app.add_subcommand("refine-upo", "Refine predictions with DRLSE and emit self-learned preferences");
    refine_cmd->add_option("--cache", refine.cache, "Candidate cache")->required();
    refine_cmd->add_option("--model", refine.model, "Checkpoint")->required();
    refine_cmd->add_option("--prefs", refine.prefs, "Preference file to append to (default <out>/preferences.jsonl)");
    refine_cmd->add_option("--timestamp", refine.timestamp, "Record timestamp (default: now, UTC)");

    FinetuneArgs ft;
    auto* ft_cmd = app.add_subcommand("finetune", "Preference fine-tuning");
    ft_cmd->add_option("--model", ft.model, "Stage-1 checkpoint (policy init and reference)")->required();
    ft_cmd->add_option("--cache", ft.cache, "Candidate cache")->required();
    ft_cmd->add_option("--prefs", ft.prefs, "Preference JSONL")->required();
    ft_cmd->add_option("--mode", ft.mode, "GPO, LPO, SLPO or UPO")->required();
    ft_cmd->add_option("--patch-fraction", ft.patch_fraction, "Share of patches used by SLPO");
    ft_cmd->add_option("--anchor", ft.anchor, "Labeled dataset added to the segmentation term");
    ft_cmd->add_option("--iterations", ft.iterations, "Iterations");
    ft_cmd->add_option("--lr", ft.lr, "Initial learning rate");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score a model or a directory of predicted masks");
    eval_cmd->add_option("--model", ev.model, "Checkpoint");
    eval_cmd->add_option("--pred", ev.pred, "Directory of <id>.png masks");
    eval_cmd->add_option("--data", ev.data, "Dataset")->required();
    eval_cmd->add_option("--prompt-fraction", ev.prompt_fraction, "Share of centers used as prompts")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    SweepArgs sw;
    auto* sweep_cmd = app.add_subcommand("sweep", "Dice/AJI/PQ against the share of inference prompts");
    sweep_cmd->add_option("--model", sw.model, "Checkpoint")->required();
    sweep_cmd->add_option("--data", sw.data, "Dataset")->required();
    sweep_cmd->add_option("--fractions", sw.fractions, "Prompt fractions")
        ->delimiter(',')
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();

    ConsistencyArgs cons;
    auto* cons_cmd = app.add_subcommand("consistency", "Agreement of global choices with patch choices");
    cons_cmd->add_option("--prefs", cons.prefs, "Preference JSONL")->required();
    cons_cmd->add_option("--grid", cons.grid, "Patch grid size L");

    ServeArgs sv;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP rating service");
    serve_cmd->add_option("--cache", sv.cache, "Candidate cache")->required();
    serve_cmd->add_option("--prefs", sv.prefs, "Preference file (default <out>/preferences.jsonl)");
    serve_cmd->add_option("--host", sv.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", sv.port, "Port (0 = any free port)")->capture_default_str();
    serve_cmd->add_option("--ui-dir", sv.ui_dir, "Static UI bundle served at /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const CLI::App* sub = app.get_subcommands().front();
    try {
        const json raw = read_config_json(g.config);
        config::PipelineConfig cfg;
        if (sub == gen_cmd) {
            ensure_dir(g.out);
            run_gen_data(g, gen, cfg, raw);
        } else {
            config::apply_json(cfg, raw);
            ensure_dir(g.out);
            if (sub == train_cmd) run_train(g, train, cfg);
            else if (sub == build_cmd) run_build_prefs(g, build, cfg);
            else if (sub == rate_cmd) run_rate_oracle(g, rate);
            else if (sub == refine_cmd) run_refine_upo(g, refine, cfg);
            else if (sub == ft_cmd) run_finetune(g, ft, cfg);
            else if (sub == eval_cmd) run_eval(g, ev);
            else if (sub == sweep_cmd) run_sweep(g, sw);
            else if (sub == cons_cmd) run_consistency(g, cons, cfg);
            else if (sub == serve_cmd) run_serve(g, sv);
        }
        write_run_manifest(g, *sub, cfg);
    } catch (const config::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n" << sub->help();
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
