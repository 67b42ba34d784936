// contrast_forge command line. JSON goes to stdout, logs to stderr.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include "cforge/body_model.hpp"
#include "cforge/conformance.hpp"
#include "cforge/config.hpp"
#include "cforge/errors.hpp"
#include "cforge/gradcheck.hpp"
#include "cforge/image_io.hpp"
#include "cforge/mock_server.hpp"
#include "cforge/negation.hpp"
#include "cforge/ply_io.hpp"
#include "cforge/preference.hpp"
#include "cforge/prompt_factory.hpp"
#include "cforge/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <csignal>
#include <thread>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>

using nlohmann::json;

namespace {

constexpr const char* kScorerUrlEnv = "CONTRAST_FORGE_SCORER_URL";

// Only async-signal-safe work in the handler; the main thread polls the flag.
volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

std::string env_scorer_url() {
    const char* v = std::getenv(kScorerUrlEnv);
    return v ? std::string(v) : std::string();
}

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw cforge::FormatError("cannot write " + path);
    out << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw cforge::FormatError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw cforge::FormatError(path + ": " + e.what());
    }
}

std::map<std::string, std::string> parse_sets(const std::vector<std::string>& sets) {
    std::map<std::string, std::string> out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw cforge::InvalidParameter("--set expects key=value, got '" + s + "'");
        out[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text + ",") {
        if (ch == ',') {
            const auto b = cur.find_first_not_of(' ');
            if (b != std::string::npos) out.push_back(cur.substr(b, cur.find_last_not_of(' ') - b + 1));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

std::array<double, 3> cloud_center(const cforge::GaussianCloud& cloud) {
    if (cloud.empty()) return {0, 0, 0};
    std::array<double, 3> lo, hi;
    lo.fill(std::numeric_limits<double>::infinity());
    hi.fill(-std::numeric_limits<double>::infinity());
    for (const auto& p : cloud.positions) {
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::min(lo[k], double(p[k]));
            hi[k] = std::max(hi[k], double(p[k]));
        }
    }
    return {0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])};
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("cforge"));

    CLI::App app{"contrast_forge: preference-guided text-to-3D human optimization"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // generate
    auto* gen = app.add_subcommand("generate", "Optimize a splat human for a prompt");
    std::string gen_prompt, gen_config, gen_out;
    std::vector<std::string> gen_sets;
    std::optional<std::uint64_t> gen_seed;
    std::optional<int> gen_threads;
    bool gen_dry = false;
    gen->add_option("--prompt", gen_prompt, "Positive prompt")->required();
    gen->add_option("--config", gen_config, "Key-value config file")->check(CLI::ExistingFile);
    gen->add_option("--set", gen_sets, "Override a config key (key=value), repeatable");
    gen->add_option("--seed", gen_seed, "Run seed");
    gen->add_option("--threads", gen_threads, "Worker threads (1: bitwise reproducible)");
    gen->add_flag("--dry-run", gen_dry, "Echo the schedule without optimizing");
    gen->add_option("--out", gen_out, "Output directory for cloud.ply, report.json and turntable PNGs");

    // render
    auto* ren = app.add_subcommand("render", "Render a PLY cloud as an 8-view turntable");
    std::string ren_ply, ren_out, ren_config;
    int ren_res = 0;
    ren->add_option("--ply", ren_ply, "Input cloud")->required()->check(CLI::ExistingFile);
    ren->add_option("--out", ren_out, "Output directory")->required();
    ren->add_option("--config", ren_config, "Config file for camera ranges")->check(CLI::ExistingFile);
    ren->add_option("--resolution", ren_res, "Image size in pixels")->check(CLI::PositiveNumber);

    // prompts
    auto* pr = app.add_subcommand("prompts", "Prompt corpus tools");
    pr->require_subcommand(1);
    auto* pr_gen = pr->add_subcommand("gen", "Generate unique prompts from the template");
    int pr_n = 1000;
    std::uint64_t pr_seed = 42;
    std::string pr_out, pr_template;
    pr_gen->add_option("--n", pr_n, "Prompt count")->check(CLI::NonNegativeNumber);
    pr_gen->add_option("--seed", pr_seed, "Seed");
    pr_gen->add_option("--out", pr_out, "Write the corpus here instead of stdout");
    pr_gen->add_option("--template", pr_template, "Template JSON (default: bundled)")->check(CLI::ExistingFile);
    auto* pr_sample = pr->add_subcommand("sample", "Draw an evaluation subset");
    std::string ps_corpus, ps_out;
    int ps_k = 100;
    std::uint64_t ps_seed = 0;
    pr_sample->add_option("--corpus", ps_corpus, "Corpus JSON")->required()->check(CLI::ExistingFile);
    pr_sample->add_option("--k", ps_k, "Subset size")->check(CLI::NonNegativeNumber);
    pr_sample->add_option("--seed", ps_seed, "Seed");
    pr_sample->add_option("--out", ps_out, "Write the subset here instead of stdout");

    // negate
    auto* neg = app.add_subcommand("negate", "Build the negation prompt set");
    std::string neg_prompt, neg_static, neg_llm;
    neg->add_option("--prompt", neg_prompt, "Positive prompt")->required();
    neg->add_option("--static", neg_static, "Comma list replacing the default static negations");
    neg->add_option("--llm-url", neg_llm, "Remote analyzer endpoint");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the renderer backward pass");
    cforge::GradcheckOptions gc_opts;
    bool gc_details = false;
    gc->add_option("--scenes", gc_opts.scenes, "Scene count")->check(CLI::PositiveNumber);
    gc->add_option("--tol", gc_opts.tolerance, "Relative error tolerance")->check(CLI::PositiveNumber);
    gc->add_option("--max-splats", gc_opts.max_splats, "Splats per scene")->check(CLI::PositiveNumber);
    gc->add_option("--size", gc_opts.image_size, "Image size")->check(CLI::PositiveNumber);
    gc->add_option("--step", gc_opts.step, "Central difference step")->check(CLI::PositiveNumber);
    gc->add_option("--seed", gc_opts.seed, "Seed");
    gc->add_flag("--details", gc_details, "Include per-scene errors");

    // score
    auto* sc = app.add_subcommand("score", "Score an image against a prompt");
    std::string sc_image, sc_text, sc_url, sc_models = "mock:brightness,mock:target_patch,mock:keyword_color";
    sc->add_option("--image", sc_image, "PNG image")->required()->check(CLI::ExistingFile);
    sc->add_option("--text", sc_text, "Prompt")->required();
    sc->add_option("--models", sc_models, "Comma list of scorer ids");
    sc->add_option("--url", sc_url, std::string("Scorer endpoint (default: $") + kScorerUrlEnv + ", else in-process mocks)");

    // mock-serve
    auto* ms = app.add_subcommand("mock-serve", "Serve the mock scorers over HTTP until interrupted");
    cforge::MockServerOptions ms_opts;
    std::string ms_models;
    ms->add_option("--host", ms_opts.host, "Bind address");
    ms->add_option("--port", ms_opts.port, "Port (0: any free port)")->check(CLI::Range(0, 65535));
    ms->add_option("--max-in-flight", ms_opts.max_in_flight, "Concurrent requests before 429")
        ->check(CLI::NonNegativeNumber);
    ms->add_option("--models", ms_models, "Comma list of mock ids to expose");

    // conformance
    auto* cf = app.add_subcommand("conformance", "Run the scorer protocol suite against an endpoint");
    std::string cf_url;
    cf->add_option("--url", cf_url, std::string("Endpoint (default: $") + kScorerUrlEnv + ", else an in-process mock)");

    // body
    auto* body = app.add_subcommand("body", "Body asset tools");
    body->require_subcommand(1);
    auto* body_export = body->add_subcommand("export", "Write the bundled humanoid as a body asset JSON");
    std::string body_out;
    body_export->add_option("--out", body_out, "Output path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (verbose) spdlog::set_level(spdlog::level::debug);

    try {
        if (*gen) {
            cforge::TrainConfig config = gen_config.empty() ? cforge::TrainConfig{} : cforge::load_config(gen_config);
            config = cforge::apply_overrides(config, parse_sets(gen_sets));
            if (gen_seed) config.seed = *gen_seed;
            if (gen_threads) config.threads = *gen_threads;
            if (gen_dry) config.dry_run = true;
            if (config.scorer_url.empty()) config.scorer_url = env_scorer_url();
            std::optional<std::filesystem::path> out;
            if (!gen_out.empty()) out = gen_out;
            const auto result = cforge::run(config, gen_prompt, out);
            json summary = {{"prompt", gen_prompt},
                            {"final_splats", result.report["final_splats"]},
                            {"skipped_steps", result.report["skipped_steps"]},
                            {"events", result.report["events"]}};
            if (result.report.contains("eval")) summary["eval"] = result.report["eval"];
            if (result.report.contains("camera_ranges")) summary["camera_ranges"] = result.report["camera_ranges"];
            if (out) summary["output_dir"] = out->string();
            summary["initial_splats"] = result.report["initial_splats"];
            summary["initial_mean_opacity"] = result.report["initial_mean_opacity"];
            emit(summary);
        } else if (*ren) {
            cforge::TrainConfig config = ren_config.empty() ? cforge::TrainConfig{} : cforge::load_config(ren_config);
            if (ren_res > 0) config.resolution = ren_res;
            const auto cloud = cforge::read_ply(ren_ply);
            const auto center = cloud_center(cloud);
            cforge::write_turntable(cloud, config, center, ren_out);
            emit({{"splats", cloud.size()}, {"views", 8}, {"output_dir", ren_out}, {"look_at", center}});
        } else if (*pr_gen) {
            const cforge::PromptTemplate tmpl = pr_template.empty()
                                                    ? cforge::PromptTemplate::bundled()
                                                    : cforge::PromptTemplate::from_json(read_json(pr_template));
            const auto corpus = cforge::generate_corpus(tmpl, pr_n, pr_seed);
            const json doc = cforge::corpus_to_json(corpus);
            if (pr_out.empty()) emit(doc);
            else {
                write_json(pr_out, doc);
                emit({{"count", corpus.size()}, {"out", pr_out}});
            }
        } else if (*pr_sample) {
            const auto corpus = cforge::corpus_from_json(read_json(ps_corpus));
            const auto subset = cforge::sample_eval_subset(corpus, ps_k, ps_seed);
            const json doc = cforge::corpus_to_json(subset);
            if (ps_out.empty()) emit(doc);
            else {
                write_json(ps_out, doc);
                emit({{"count", subset.size()}, {"out", ps_out}});
            }
        } else if (*neg) {
            std::unique_ptr<cforge::LlmClient> client;
            if (neg_llm.empty()) client = std::make_unique<cforge::RuleBasedLlmClient>();
            else client = std::make_unique<cforge::RemoteLlmClient>(neg_llm);
            const auto phrases = neg_static.empty() ? cforge::default_static_negations() : split_list(neg_static);
            emit(cforge::build_negation_set(neg_prompt, *client, phrases).to_json());
        } else if (*gc) {
            const auto report = cforge::run_gradcheck(gc_opts);
            json worst = json::object(), worst_entry = json::object();
            for (std::size_t g = 0; g < cforge::kParameterGroups.size(); ++g) {
                worst[cforge::kParameterGroups[g]] = report.worst[g];
                worst_entry[cforge::kParameterGroups[g]] = report.worst_entry[g];
            }
            int failed = 0;
            json scenes = json::array();
            for (const auto& s : report.scenes) {
                failed += s.pass ? 0 : 1;
                if (gc_details) scenes.push_back({{"scene", s.scene}, {"splats", s.splats}, {"rel_error", s.rel_error},
                                                  {"pass", s.pass}});
            }
            json out = {{"scenes", report.scenes.size()}, {"failed", failed}, {"tolerance", gc_opts.tolerance},
                        {"worst_rel_error", worst}, {"worst_entry_error", worst_entry},
                        {"checked_entries", report.checked_entries}, {"pass", report.pass}};
            if (gc_details) out["details"] = scenes;
            emit(out);
            return report.pass ? 0 : 1;
        } else if (*sc) {
            const cforge::Image image = cforge::read_png(sc_image);
            const std::string url = sc_url.empty() ? env_scorer_url() : sc_url;
            cforge::ScorerList scorers;
            for (const auto& id : split_list(sc_models)) {
                if (url.empty()) scorers.push_back(cforge::make_mock_scorer(id));
                else scorers.push_back(std::make_shared<cforge::RemoteScorer>(url, id));
            }
            if (scorers.empty()) throw cforge::InvalidParameter("no scorer ids given");
            const auto signals = cforge::score_all(scorers, image, sc_text);
            const auto fused = cforge::fuse_positive(signals);
            json rows = json::array();
            for (std::size_t i = 0; i < signals.size(); ++i) {
                rows.push_back({{"model", signals[i].scorer}, {"score", signals[i].score},
                                {"quantized", fused.quantized[i]}, {"weight", fused.weights[i]},
                                {"gradient_norm", cforge::norm(signals[i].gradient)}});
            }
            emit({{"endpoint", url.empty() ? "in-process" : url}, {"scores", rows}});
        } else if (*ms) {
            ms_opts.models = split_list(ms_models);
            cforge::MockServer server(ms_opts);
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            server.start();
            emit({{"url", server.url()}, {"models", server.models()}});
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
        } else if (*cf) {
            std::string url = cf_url.empty() ? env_scorer_url() : cf_url;
            std::unique_ptr<cforge::MockServer> local;
            if (url.empty()) {
                local = std::make_unique<cforge::MockServer>();
                local->start();
                url = local->url();
            }
            const auto checks = cforge::run_scorer_conformance(url);
            json rows = json::array();
            for (const auto& c : checks) rows.push_back({{"check", c.name}, {"pass", c.pass}, {"detail", c.detail}});
            const bool ok = cforge::all_passed(checks);
            emit({{"endpoint", url}, {"checks", rows}, {"pass", ok}});
            return ok ? 0 : 1;
        } else if (*body_export) {
            cforge::save_body_asset(body_out, cforge::default_humanoid());
            const auto& b = cforge::default_humanoid();
            emit({{"out", body_out}, {"vertices", b.vertex_count()}, {"faces", b.faces.size()},
                  {"joints", b.joint_count()}});
        }
    } catch (const cforge::InvalidParameter& e) {
        // bad flag or config values are usage errors
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
