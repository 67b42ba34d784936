// Acceptance checks for the training core. One line per criterion:
//   PASS|FAIL  <n>  <name>  (<seconds> s)  <detail>
// Exit status is the number of failed criteria.

#include "cforge/config.hpp"
#include "cforge/conformance.hpp"
#include "cforge/gradcheck.hpp"
#include "cforge/guidance.hpp"
#include "cforge/mock_server.hpp"
#include "cforge/negation.hpp"
#include "cforge/preference.hpp"
#include "cforge/prompt_factory.hpp"
#include "cforge/splat_reference.hpp"
#include "cforge/trainer.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

using namespace cforge;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("cforge_acceptance_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

TrainConfig config_file(const char* name) { return load_config(std::filesystem::path(CFORGE_SOURCE_DIR) / "configs" / name); }

Outcome gradient_suite() {
    GradcheckOptions opts;  // 100 scenes, <= 10 splats, 16x16, tolerance 1e-3
    const auto rep = run_gradcheck(opts);
    int failed = 0;
    for (const auto& s : rep.scenes) failed += s.pass ? 0 : 1;
    const double worst = *std::max_element(rep.worst.begin(), rep.worst.end());
    return {rep.pass && rep.scenes.size() == 100,
            fmt::format("{} scenes, {} failed, worst group error {:.2e}", rep.scenes.size(), failed, worst)};
}

Outcome compositing() {
    // weights of every splat plus the background remainder partition unity
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        Rng rng = make_stream(static_cast<std::uint64_t>(i), 11);
        const auto cloud = random_gradcheck_scene(rng, 1 + i % 10);
        const auto cam = gradcheck_camera(16);
        const int px = static_cast<int>(rng() % 16), py = static_cast<int>(rng() % 16);
        const auto w = reference::compositing_weights(cloud, cam, {}, px, py);
        worst = std::max(worst, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
    }

    // two co-located half-density splats, front one first
    RenderSettings s;
    s.background = {0.1, 0.3, 0.9};
    const std::array<double, 3> c1{0.9, 0.2, 0.4}, c2{0.1, 0.8, 0.6};
    const double ls = std::log(0.2);
    GaussianCloudD cloud;
    cloud.push_back({0, 0, 0}, {ls, ls, ls}, {1, 0, 0, 0}, c1, 0.5);
    cloud.push_back({0, 0, -1e-3}, {ls, ls, ls}, {1, 0, 0, 0}, c2, 0.5);
    CameraPose cam;
    cam.width = cam.height = 15;
    const Image img = render(cloud, cam, s).to_image();
    double hand = 0.0;
    for (int k = 0; k < 3; ++k)
        hand = std::max(hand, std::abs(img.at(7, 7, k) - (0.5 * c1[k] + 0.25 * c2[k] + 0.25 * s.background[k])));
    return {worst <= 1e-6 && hand <= 1e-6,
            fmt::format("1000 pixels, worst |sum - 1| {:.1e}; two-splat error {:.1e}", worst, hand)};
}

Outcome sds_sanity() {
    const auto sched = DiffusionSchedule::linear();
    Rng rng = make_stream(3, 0);
    const Image x = standard_normal_image(16, 16, rng);
    const Image eps = standard_normal_image(16, 16, rng);

    class Exact final : public NoisePredictor {
    public:
        explicit Exact(Image e) : e_(std::move(e)) {}
        Image predict(const Image&, const std::string&, int) const override { return e_; }

    private:
        Image e_;
    };
    bool zero = true;
    for (int t : {20, 137, 500}) {
        for (double v : sds_image_gradient(Exact(eps), sched, x, "p", t, eps).gradient.data) zero = zero && v == 0.0;
    }

    // single-image descent on the toy denoiser
    const Image target = prompt_target_image("a woman wearing green coat", 16, 16);
    const ToyDenoiser toy(target, sched);
    Image img(16, 16, 0.5);
    Rng drng = make_stream(4, 0);
    for (int step = 0; step < 200; ++step) {
        const int t = sched.sample_timestep(drng);
        const Image e = standard_normal_image(16, 16, drng);
        img -= 0.1 * sds_image_gradient(toy, sched, img, "p", t, e).gradient;
    }
    const double err = max_abs_diff(img, target);

    // the mean over seeds points along x - target
    const Image start(16, 16, 0.5);
    Image mean(16, 16);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng r = make_stream(seed, 9);
        const int t = sched.sample_timestep(r);
        mean += sds_image_gradient(toy, sched, start, "p", t, standard_normal_image(16, 16, r)).gradient;
    }
    const Image dir = start - target;
    const double cosine = dot(mean, dir) / (norm(mean) * norm(dir));
    return {zero && err < 1e-2 && cosine > 0.99,
            fmt::format("perfect predictor zero: {}; descent max error {:.1e}; cosine {:.5f}", zero, err, cosine)};
}

Outcome end_to_end() {
    TrainConfig c = config_file("desk.toml");
    c.init_splats = 500;
    c.resolution = 64;
    c.iterations = 300;
    c.guidance = "toy";
    const auto res = run(c, "a man wearing red jacket, blue jeans, black boots");
    const double a = res.report.at("eval").at("psnr_initial"), b = res.report.at("eval").at("psnr_final");
    return {b - a >= 10.0, fmt::format("PSNR {:.2f} -> {:.2f} dB (+{:.2f}, needs +10)", a, b, b - a)};
}

Outcome lcm_weighting() {
    long ordered = 0, violations = 0;
    for (int a = 1; a <= 100; ++a) {
        for (int b = 1; b <= 100; ++b) {
            const std::vector<int> q{a, b};
            const auto w = lcm_weights(q);
            ++ordered;
            // independent route: weights proportional to 1/score
            const double ea = (1.0 / a) / (1.0 / a + 1.0 / b);
            const bool order_ok = a < b ? w[0] > w[1] : a > b ? w[0] < w[1] : w[0] == w[1];
            if (!order_ok || std::abs(w[0] - ea) > 1e-12) ++violations;
        }
    }
    double drift = 0.0;
    Rng rng = make_stream(5, 0);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<int> q(1 + rng() % 4), scaled;
        for (int& v : q) v = 1 + static_cast<int>(rng() % 100);
        const int k = 2 + static_cast<int>(rng() % 7);
        for (int v : q) scaled.push_back(v * k);
        const auto w1 = lcm_weights(q), w2 = lcm_weights(scaled);
        for (std::size_t i = 0; i < q.size(); ++i) drift = std::max(drift, std::abs(w1[i] - w2[i]));
    }
    auto near = [](const std::vector<double>& w, double a, double b) {
        return std::abs(w[0] - a) < 1e-12 && std::abs(w[1] - b) < 1e-12;
    };
    const bool examples = near(lcm_weights(std::vector<int>{4, 6}), 0.6, 0.4) &&
                          near(lcm_weights(std::vector<int>{2, 3}), 0.6, 0.4);
    return {violations == 0 && drift <= 1e-12 && examples,
            fmt::format("{} pairs, {} violations; scale drift {:.1e}; examples {}", ordered, violations, drift,
                        examples ? "match" : "differ")};
}

Outcome negation_goldens() {
    std::vector<std::string> misses;
    const RuleBasedLlmClient llm;

    MapList example;
    for (auto m : extract_maps("white canvas shoes, red jacket")) example.push_back(m);
    std::string swapped;
    for (const auto& m : recombine_maps(example)) swapped += (swapped.empty() ? "" : ", ") + m.render();
    if (swapped != "red canvas shoes, white jacket") misses.push_back("swap gave '" + swapped + "'");
    const auto set = build_negation_set("white canvas shoes, red jacket", llm);
    if (set.text.rfind("blurry, oversaturated, noisy", 0) != 0 ||
        set.text.find("red canvas shoes") == std::string::npos || set.text.find("white jacket") == std::string::npos)
        misses.push_back("negative prompt '" + set.text + "'");

    const auto glove = build_negation_set("black glove on the left hand", llm);
    if (glove.spatial_reversals != std::vector<std::string>{"black glove on the right hand"})
        misses.push_back("spatial reversal");
    if (irrelevant_elements(std::vector<std::string>{"baseball cap"}, llm) != std::vector<std::string>{"baseball glove"})
        misses.push_back("look-alike");

    const auto corpus = generate_corpus(PromptTemplate::bundled(), 1000, 7);
    int bad_bijection = 0, bad_involution = 0, sided = 0;
    for (const auto& rec : corpus) {
        const MapList ranked = rank_saliency(extract_maps(rec.text), llm);
        MapList cur = recombine_maps(ranked);
        std::vector<std::string> before, after;
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            before.push_back(ranked[i].modifier);
            after.push_back(cur[i].modifier);
            if (cur[i].attribute != ranked[i].attribute) ++bad_bijection;
        }
        std::sort(before.begin(), before.end());
        std::sort(after.begin(), after.end());
        if (before != after) ++bad_bijection;
        for (std::size_t k = 1; k < ranked.size(); ++k) cur = recombine_maps(cur);
        for (std::size_t i = 0; i < ranked.size(); ++i)
            if (!cur[i].same_content(ranked[i])) ++bad_bijection;
        for (const auto& m : ranked) {
            if (m.spatial != Side::none) {
                ++sided;
                if (reverse_spatial(m).spatial == m.spatial) ++bad_involution;
            }
            if (!reverse_spatial(reverse_spatial(m)).same_content(m)) ++bad_involution;
        }
    }
    if (bad_bijection) misses.push_back(std::to_string(bad_bijection) + " bijection failures");
    if (bad_involution) misses.push_back(std::to_string(bad_involution) + " involution failures");
    std::string detail = fmt::format("3 golden examples, {} corpus prompts, {} sided pairs", corpus.size(), sided);
    for (const auto& m : misses) detail += "; " + m;
    return {misses.empty(), detail};
}

Outcome schedule_echo() {
    TrainConfig c = config_file("full.toml");
    c.dry_run = true;
    const auto res = run(c, "a man wearing red jacket, blue jeans, black boots");
    std::vector<int> got, want;
    for (const auto& ev : res.report.at("events")) got.push_back(ev.at("iteration"));
    for (int it = 300; it <= 2100; it += 300) want.push_back(it);
    for (int it = 2400; it <= 3300; it += 300) want.push_back(it);
    const std::size_t n0 = res.report.at("initial_splats");
    const double op = res.report.at("initial_mean_opacity");

    Rng rng = make_stream(c.seed, 99);
    int outside = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto cam = sample_camera(c, rng);
        outside += (cam.distance < 1.5 || cam.distance > 2.0 || cam.fovy_deg < 40 || cam.fovy_deg > 70 ||
                    cam.elevation_deg < -30 || cam.elevation_deg > 30 || cam.azimuth_deg < -180 ||
                    cam.azimuth_deg > 180)
                       ? 1
                       : 0;
    }
    const bool pass = got == want && n0 == 100000 && std::abs(op - 0.1) < 1e-6 && outside == 0;
    return {pass, fmt::format("{} events (expected {}), {} initial splats, mean opacity {:.6f}, {} of 10000 cameras "
                              "out of range",
                              got.size(), want.size(), n0, op, outside)};
}

Outcome determinism() {
    TrainConfig c = config_file("desk.toml");
    c.threads = 1;
    const std::string prompt = "a woman wearing green coat, black jeans, white sneakers, red hat";
    const auto a = scratch("det_a"), b = scratch("det_b");
    run(c, prompt, a);
    run(c, prompt, b);
    const bool report_same = slurp(a / "report.json") == slurp(b / "report.json");
    const bool ply_same = slurp(a / "cloud.ply") == slurp(b / "cloud.ply");
    const bool nonempty = !slurp(a / "cloud.ply").empty();
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
    return {report_same && ply_same && nonempty,
            fmt::format("report.json {}, cloud.ply {}", report_same ? "identical" : "differs",
                        ply_same ? "identical" : "differs")};
}

Outcome conformance() {
    MockServer server;
    server.start();
    const auto checks = run_scorer_conformance(server.url());
    std::string failed;
    for (const auto& c : checks)
        if (!c.pass) failed += " " + c.name + " (" + c.detail + ")";
    return {all_passed(checks), fmt::format("{} checks against {}{}", checks.size(), server.url(),
                                            failed.empty() ? "" : "; failed:" + failed)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"renderer gradient suite", gradient_suite},
        {"compositing oracle", compositing},
        {"SDS sanity", sds_sanity},
        {"end-to-end toy convergence", end_to_end},
        {"LCM weighting", lcm_weighting},
        {"negation goldens", negation_goldens},
        {"schedule echo", schedule_echo},
        {"determinism", determinism},
        {"scorer protocol conformance", conformance},
    };
    const std::vector<double> budget_s = {120, 0, 0, 600, 0, 0, 0, 0, 0};  // 0: no runtime bound

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (budget_s[i] > 0 && secs > budget_s[i]) {
            o.pass = false;
            o.detail += fmt::format("; over the {:.0f} s budget", budget_s[i]);
        }
        failed += o.pass ? 0 : 1;
        std::cout << fmt::format("{}  {}  {}  ({:.2f} s)  {}", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                                 o.detail)
                  << std::endl;
    }
    std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size()) << std::endl;
    return failed;
}
