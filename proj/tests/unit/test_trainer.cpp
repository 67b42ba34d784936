#include "cforge/config.hpp"
#include "cforge/errors.hpp"
#include "cforge/trainer.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>
#include <omp.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

using namespace cforge;

namespace {

GaussianCloud small_cloud(int n, std::uint64_t seed) {
    Rng rng = make_stream(seed, 77);
    GaussianCloud c;
    for (int i = 0; i < n; ++i) {
        const float s = static_cast<float>(std::log(uniform(rng, 0.03, 0.08)));
        c.push_back({float(uniform(rng, -0.3, 0.3)), float(uniform(rng, -0.4, 0.4)), float(uniform(rng, -0.1, 0.1))},
                    {s, s, s}, {1, 0, 0, 0},
                    {float(uniform(rng, 0.2, 0.8)), float(uniform(rng, 0.2, 0.8)), float(uniform(rng, 0.2, 0.8))}, 0.6f);
    }
    return c;
}

TrainConfig quick_config() {
    TrainConfig c;
    c.resolution = 24;
    c.init_splats = 200;
    c.iterations = 6;
    c.threads = 1;
    return c;
}

bool same_bits(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.size() != b.size()) return false;
    const std::size_t n = a.size();
    return std::memcmp(a.positions.data(), b.positions.data(), n * 12) == 0 &&
           std::memcmp(a.log_scales.data(), b.log_scales.data(), n * 12) == 0 &&
           std::memcmp(a.rotations.data(), b.rotations.data(), n * 16) == 0 &&
           std::memcmp(a.color_dc.data(), b.color_dc.data(), n * 12) == 0 &&
           std::memcmp(a.opacity_logits.data(), b.opacity_logits.data(), n * 4) == 0;
}

class NanPredictor final : public NoisePredictor {
public:
    Image predict(const Image& x, const std::string&, int) const override {
        return Image(x.height, x.width, std::nan(""));
    }
};

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("Adam matches a scripted reference") {
    Rng rng = make_stream(1, 0);
    const int n = 50;
    std::vector<double> p(n), m(n, 0.0), v(n, 0.0);
    for (double& x : p) x = uniform(rng, -1, 1);
    std::vector<double> rp = p, rm = m, rv = v;
    const AdamHyper h{1e-2, 0.9, 0.99, 1e-15};
    for (int step = 1; step <= 25; ++step) {
        std::vector<double> g(n);
        for (double& x : g) x = uniform(rng, -2, 2);
        adam_update<double>(p, g, m, v, h, step);
        for (int i = 0; i < n; ++i) {
            rm[i] = 0.9 * rm[i] + 0.1 * g[i];
            rv[i] = 0.99 * rv[i] + 0.01 * g[i] * g[i];
            const double mh = rm[i] / (1 - std::pow(0.9, step));
            const double vh = rv[i] / (1 - std::pow(0.99, step));
            rp[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-15);
        }
    }
    for (int i = 0; i < n; ++i) {
        CHECK(std::abs(p[i] - rp[i]) < 1e-9);
        CHECK(std::abs(m[i] - rm[i]) < 1e-9);
        CHECK(std::abs(v[i] - rv[i]) < 1e-9);
    }
    std::vector<double> shorter(n - 1);
    CHECK_THROWS_AS(adam_update<double>(p, shorter, m, v, h, 1), ShapeError);
    CHECK_THROWS_AS(adam_update<double>(p, std::span<const double>(p), m, v, h, 0), RangeError);
}

TEST_CASE("camera sampling stays in range") {
    const TrainConfig c;
    Rng rng = make_stream(2, 1);
    Rng again = make_stream(2, 1);
    for (int i = 0; i < 10000; ++i) {
        const auto cam = sample_camera(c, rng, {0, 0.1, 0});
        CHECK((cam.distance >= 1.5 && cam.distance <= 2.0));
        CHECK((cam.fovy_deg >= 40 && cam.fovy_deg <= 70));
        CHECK((cam.elevation_deg >= -30 && cam.elevation_deg <= 30));
        CHECK((cam.azimuth_deg >= -180 && cam.azimuth_deg <= 180));
        CHECK(cam.target[1] == 0.1);
        if (i < 20) CHECK(cam == sample_camera(c, again, {0, 0.1, 0}));
    }
    TrainConfig fixed;
    fixed.distance_min = fixed.distance_max = 1.75;
    for (int i = 0; i < 10; ++i) CHECK(sample_camera(fixed, rng).distance == 1.75);
}

TEST_CASE("zero gradients leave the cloud unchanged") {
    omp_set_num_threads(1);
    TrainConfig c = quick_config();
    TrainState s(small_cloud(20, 3), 0);
    const GaussianCloud before = s.cloud;
    StepInputs in;
    in.prompt = "anything";
    for (int i = 0; i < 3; ++i) train_step(s, c, in);
    CHECK(same_bits(before, s.cloud));
    CHECK(s.iteration == 3);
}

TEST_CASE("brightness preference raises mean brightness") {
    omp_set_num_threads(1);
    TrainConfig c = quick_config();
    c.scorers = "mock:brightness";
    c.use_negation = false;
    c.preference_weight = 1000.0;  // the mean has a 1/(3HW) gradient
    TrainState s(small_cloud(40, 4), 5);
    StepInputs in;
    in.prompt = "a figure";
    in.scorers = {make_mock_scorer("mock:brightness")};
    const auto eval_cam = turntable_cameras(c, {0, 0, 0})[0];
    const double before = mean_value(render(s.cloud, eval_cam).to_image());
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        const auto rec = train_step(s, c, in);
        if (i == 0) first = rec.mean_brightness;
        last = rec.mean_brightness;
        CHECK(rec.scores.size() == 1);
    }
    const double after = mean_value(render(s.cloud, eval_cam).to_image());
    CHECK(after > before);
    CHECK(last > first);
}

TEST_CASE("zero preference weight is plain SDS") {
    omp_set_num_threads(1);
    TrainConfig c = quick_config();
    const auto init = small_cloud(30, 6);
    const DiffusionSchedule sched = DiffusionSchedule::linear();
    TargetSceneGuidance guide(small_cloud(30, 7), sched);
    NegationSet neg = build_negation_set("red jacket, blue jeans", RuleBasedLlmClient());

    auto go = [&](TrainConfig cfg) {
        TrainState s(init, 9);
        StepInputs in;
        in.prompt = "red jacket, blue jeans";
        in.guidance = &guide;
        in.scorers = {make_mock_scorer("mock:target_patch"), make_mock_scorer("mock:keyword_color")};
        in.negation = &neg;
        for (int i = 0; i < 15; ++i) train_step(s, cfg, in);
        return s.cloud;
    };
    TrainConfig zero = c;
    zero.preference_weight = 0.0;
    TrainConfig off = c;
    off.use_preference = false;
    off.use_negation = false;
    CHECK(same_bits(go(zero), go(off)));
    CHECK_FALSE(same_bits(go(c), go(off)));
}

TEST_CASE("non-finite gradients are skipped then abort") {
    TrainConfig c = quick_config();
    c.max_consecutive_skips = 3;
    TrainState s(small_cloud(10, 8), 1);
    const GaussianCloud before = s.cloud;
    FixedGuidance bad(std::make_shared<NanPredictor>());
    StepInputs in;
    in.prompt = "x";
    in.guidance = &bad;
    for (int i = 0; i < 3; ++i) CHECK(train_step(s, c, in).skipped);
    CHECK(same_bits(before, s.cloud));
    CHECK(s.skipped_steps == 3);
    CHECK_THROWS_AS(train_step(s, c, in), TrainingError);
}

TEST_CASE("schedule ticks") {
    const TrainConfig c;
    std::set<int> ticks;
    for (int it = 1; it <= 3600; ++it)
        if (is_densify_tick(c, it) || is_prune_tick(c, it)) ticks.insert(it);
    std::set<int> expected;
    for (int it = 300; it <= 2100; it += 300) expected.insert(it);
    for (int it = 2400; it <= 3300; it += 300) expected.insert(it);
    CHECK(ticks == expected);
    CHECK_FALSE(is_prune_tick(c, 2100));
    CHECK(is_densify_tick(c, 2100));
}

TEST_CASE("off-tick iterations do nothing") {
    TrainState s(small_cloud(5, 1), 0);
    s.iteration = 200;
    s.cloud.opacity_logits[0] = logit(0.001f);
    CHECK_FALSE(densify_and_prune(s, TrainConfig{}).has_value());
    CHECK(s.cloud.size() == 5);
}

TEST_CASE("prune removes faint splats") {
    TrainState s(small_cloud(4, 2), 0);
    s.cloud.opacity_logits[2] = logit(0.005f);
    s.adam_m.opacity_logits = {1, 2, 3, 4};
    s.iteration = 2400;
    const auto ev = densify_and_prune(s, TrainConfig{});
    REQUIRE(ev.has_value());
    CHECK(ev->kind == "prune");
    CHECK(ev->pruned == 1);
    CHECK(s.cloud.size() == 3);
    CHECK(s.adam_m.opacity_logits == std::vector<float>{1, 2, 4});
    CHECK_NOTHROW(s.check_consistency());
}

TEST_CASE("split halves the scale inside the parent footprint") {
    GaussianCloud c = small_cloud(1, 3);
    c.log_scales[0] = {std::log(0.2f), std::log(0.05f), std::log(0.1f)};
    c.rotations[0] = {0.9f, 0.2f, -0.3f, 0.1f};
    Rng rng = make_stream(1, 5);
    for (int trial = 0; trial < 50; ++trial) {
        GaussianCloud out;
        split_splat(c, 0, rng, out);
        REQUIRE(out.size() == 2);
        const Eigen::Matrix3d r =
            Eigen::Quaterniond(0.9, 0.2, -0.3, 0.1).normalized().toRotationMatrix();
        for (std::size_t k = 0; k < 2; ++k) {
            for (int a = 0; a < 3; ++a) CHECK(out.scale(k)[a] == doctest::Approx(c.scale(0)[a] / 2).epsilon(1e-6));
            const Eigen::Vector3d off(out.positions[k][0] - c.positions[0][0], out.positions[k][1] - c.positions[0][1],
                                      out.positions[k][2] - c.positions[0][2]);
            const Eigen::Vector3d local = r.transpose() * off;
            for (int a = 0; a < 3; ++a) CHECK(std::abs(local[a]) <= c.scale(0)[a] * (1 + 1e-5));
            CHECK(out.opacity_logits[k] == c.opacity_logits[0]);
            CHECK(out.color_dc[k] == c.color_dc[0]);
        }
    }
}

TEST_CASE("densify splits large and clones small splats") {
    TrainState s(small_cloud(6, 4), 0);
    s.cloud.log_scales[1] = {std::log(0.2f), std::log(0.2f), std::log(0.2f)};   // large
    s.cloud.log_scales[4] = {std::log(0.004f), std::log(0.004f), std::log(0.004f)};  // small
    for (std::size_t i = 0; i < 6; ++i) {
        s.grad_count[i] = 2;
        s.grad_accum[i] = (i == 1 || i == 4) ? 10.0 : 0.1 * double(i + 1);
        s.adam_m.opacity_logits[i] = float(i + 1);
        s.adam_v.opacity_logits[i] = float(i + 1);
    }
    s.iteration = 300;
    TrainConfig c;
    c.densify_percentile = 0.8;  // 6 candidates: threshold at the 5th smallest average, i.e. the two hot splats
    const GaussianCloud parent = s.cloud;
    const auto ev = densify_and_prune(s, c);
    REQUIRE(ev.has_value());
    CHECK(ev->kind == "densify");
    CHECK(ev->split == 1);
    CHECK(ev->cloned == 1);
    CHECK(ev->before == 6);
    CHECK(ev->after == 8);  // one split (+1) and one clone (+1)
    // survivors keep order and moments, the split parent is gone
    CHECK(std::vector<float>(s.adam_m.opacity_logits.begin(), s.adam_m.opacity_logits.begin() + 5) ==
          std::vector<float>{1, 3, 4, 5, 6});
    for (std::size_t i = 5; i < 8; ++i) {
        CHECK(s.adam_m.opacity_logits[i] == 0.0f);
        CHECK(s.adam_v.opacity_logits[i] == 0.0f);
        CHECK(s.adam_m.positions[i] == std::array<float, 3>{0, 0, 0});
    }
    // split children come first (parents are visited in index order), then the clone
    CHECK(s.cloud.scale(5)[0] == doctest::Approx(0.1).epsilon(1e-5));
    CHECK(s.cloud.positions[7] == parent.positions[4]);
    for (std::size_t i = 0; i < s.grad_accum.size(); ++i) CHECK(s.grad_accum[i] == 0.0);
    CHECK_NOTHROW(s.check_consistency());
}

TEST_CASE("pruning everything is a hard error") {
    TrainState s(small_cloud(3, 5), 0);
    for (auto& o : s.cloud.opacity_logits) o = logit(0.001f);
    s.iteration = 2700;
    CHECK_THROWS_AS(densify_and_prune(s, TrainConfig{}), TrainingError);
}

TEST_CASE("initialization from the body") {
    TrainConfig c;
    c.init_splats = 1000;
    const auto scene = initialize_from_body(default_humanoid(), c);
    CHECK(scene.cloud.size() == 1000);
    CHECK(scene.regions.size() == 1000);
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) CHECK(scene.cloud.opacity(i) == doctest::Approx(0.1).epsilon(1e-6));
    const auto target = prompt_target_scene(scene, "a man wearing red jacket, blue jeans, black boots");
    std::size_t red = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (scene.regions[i] == BodyRegion::upper) {
            const auto col = target.color(i);
            red += col[0] > 0.8 && col[1] < 0.3 ? 1 : 0;
        }
        CHECK(target.opacity(i) == doctest::Approx(0.95).epsilon(1e-5));
    }
    CHECK(red > 0);
}

TEST_CASE("initial pose comes from the config") {
    const BodyTemplate& body = default_humanoid();
    TrainConfig c;
    c.init_splats = 300;
    const auto rest = initialize_from_body(body, c);
    std::string pose;
    for (int j = 0; j < body.joint_count(); ++j) pose += j == 1 ? "0,0,0.6," : "0,0,0,";
    pose.pop_back();
    c.init_pose = pose;
    const auto posed = initialize_from_body(body, c);
    REQUIRE(posed.cloud.size() == rest.cloud.size());
    bool moved = false;
    for (std::size_t i = 0; i < posed.cloud.size(); ++i) moved = moved || posed.cloud.positions[i] != rest.cloud.positions[i];
    CHECK(moved);
    c.init_pose = "0.1,0.2";
    CHECK_THROWS_WITH_AS(initialize_from_body(body, c), doctest::Contains("init_pose"), InvalidParameter);
    c.init_pose = "0,x";
    CHECK_THROWS_AS(c.validate(), InvalidParameter);
}

TEST_CASE("run writes every artifact") {
    const auto dir = std::filesystem::temp_directory_path() / "cforge_run_artifacts";
    std::filesystem::remove_all(dir);
    const auto result = run(quick_config(), "a woman wearing green coat, black jeans, white sneakers", dir);
    CHECK(std::filesystem::exists(dir / "cloud.ply"));
    CHECK(std::filesystem::exists(dir / "report.json"));
    for (int a = 0; a < 360; a += 45) {
        char name[32];
        std::snprintf(name, sizeof(name), "turntable_%03d.png", a);
        CHECK(std::filesystem::exists(dir / name));
    }
    std::ifstream in(dir / "report.json");
    const auto report = nlohmann::json::parse(in);
    CHECK(report.at("schema") == "contrast_forge.run_report");
    CHECK(report.at("version") == kRunReportVersion);
    CHECK(report.at("trace").size() == 6);
    CHECK(report.at("aborted") == false);
    CHECK(report.at("negation").at("negative_prompt").get<std::string>().rfind("blurry", 0) == 0);
    CHECK(report == result.report);
    std::filesystem::remove_all(dir);
}

TEST_CASE("run flushes partial outputs on abort") {
    const auto dir = std::filesystem::temp_directory_path() / "cforge_run_abort";
    std::filesystem::remove_all(dir);
    TrainConfig c = quick_config();
    c.guidance = "remote";
    c.guidance_url = "http://127.0.0.1:9";  // discard port, nothing listens
    CHECK_THROWS_AS(run(c, "a man wearing red jacket", dir), TransportError);
    std::ifstream in(dir / "report.json");
    REQUIRE(in.good());
    const auto report = nlohmann::json::parse(in);
    CHECK(report.at("aborted") == true);
    CHECK(report.at("error").get<std::string>().find("noise predictor") != std::string::npos);
    CHECK(std::filesystem::exists(dir / "cloud.ply"));
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(run(quick_config(), ""), InvalidParameter);
}

}

TEST_SUITE("config") {

TEST_CASE("key-value parsing") {
    const auto kv = parse_key_values(R"(
# comment
[train]
iterations = 12   # trailing
scorers = "mock:brightness, mock:keyword_color"
static_negations = "a # b, c"
)");
    CHECK(kv.at("iterations") == "12");
    CHECK(kv.at("scorers") == "mock:brightness, mock:keyword_color");
    CHECK(kv.at("static_negations") == "a # b, c");
    CHECK_THROWS_AS(parse_key_values("novalue\n"), FormatError);

    const auto c = apply_overrides(TrainConfig{}, kv);
    CHECK(c.iterations == 12);
    CHECK(c.scorer_ids() == std::vector<std::string>{"mock:brightness", "mock:keyword_color"});
    CHECK(c.static_negation_list() == std::vector<std::string>{"a # b", "c"});
}

TEST_CASE("set validates keys and values") {
    TrainConfig c;
    c.set("lr_color", "0.5");
    CHECK(c.lr_color == 0.5);
    c.set("use_negation", "false");
    CHECK_FALSE(c.use_negation);
    c.set("seed", "18446744073709551615");
    CHECK(c.seed == 18446744073709551615ull);
    CHECK_THROWS_AS(c.set("lr_colour", "1"), InvalidParameter);
    CHECK_THROWS_AS(c.set("iterations", "many"), InvalidParameter);
    CHECK_THROWS_AS(c.set("use_negation", "perhaps"), InvalidParameter);
}

TEST_CASE("validate rejects bad ranges") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.distance_min = 3.0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("distance"), InvalidParameter);
    TrainConfig d;
    d.lr_position = 0.0;
    CHECK_THROWS_AS(d.validate(), InvalidParameter);
    TrainConfig e;
    e.guidance = "remote";
    CHECK_THROWS_AS(e.validate(), InvalidParameter);
}

TEST_CASE("defaults follow the training recipe") {
    const TrainConfig c;
    CHECK(c.iterations == 3600);
    CHECK(c.lr_position == 5e-5);
    CHECK(c.lr_scale == 1e-3);
    CHECK(c.lr_rotation == 1e-2);
    CHECK(c.lr_color == 1.25e-2);
    CHECK(c.lr_opacity == 1e-2);
    CHECK(c.adam_beta1 == 0.9);
    CHECK(c.adam_beta2 == 0.99);
    CHECK(c.guidance_scale == 7.5);
    CHECK(c.prune_opacity == 0.008);
    CHECK(c.init_splats == 100000);
    CHECK(c.init_opacity == 0.1);
    const auto j = c.to_json();
    for (const auto& k : TrainConfig::keys()) CHECK(j.contains(k));
}

TEST_CASE("shipped config files load") {
    const std::filesystem::path root = CFORGE_SOURCE_DIR;
    const auto desk = load_config(root / "configs/desk.toml");
    CHECK(desk.init_splats == 500);
    CHECK(desk.iterations == 300);
    CHECK_NOTHROW(desk.validate());
    const auto full = load_config(root / "configs/full.toml");
    CHECK(full.init_splats == 100000);
    CHECK_NOTHROW(full.validate());
}

}
