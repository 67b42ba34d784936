#include "cforge/trainer.hpp"

#include "cforge/errors.hpp"
#include "cforge/image_io.hpp"
#include "cforge/lexicon.hpp"
#include "cforge/ply_io.hpp"

#include <Eigen/Geometry>
#include <omp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

namespace cforge {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 const AdamHyper& h, int step) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
        throw ShapeError("Adam buffers differ in length");
    }
    if (step < 1) throw RangeError("Adam step counts from 1");
    const T b1 = T(h.beta1), b2 = T(h.beta2);
    const T c1 = T(1) / (T(1) - T(std::pow(h.beta1, step)));
    const T c2 = T(1) / (T(1) - T(std::pow(h.beta2, step)));
    const T lr = T(h.lr), eps = T(h.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * grads[i];
        v[i] = b2 * v[i] + (T(1) - b2) * grads[i] * grads[i];
        params[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>, std::span<float>,
                                 const AdamHyper&, int);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  const AdamHyper&, int);

namespace {

static_assert(sizeof(std::array<float, 3>) == 3 * sizeof(float));
static_assert(sizeof(std::array<float, 4>) == 4 * sizeof(float));

template <typename T, std::size_t K>
std::span<T> flat(std::vector<std::array<T, K>>& v) {
    return {reinterpret_cast<T*>(v.data()), v.size() * K};
}

template <typename T, std::size_t K>
std::span<const T> flat(const std::vector<std::array<T, K>>& v) {
    return {reinterpret_cast<const T*>(v.data()), v.size() * K};
}

GaussianCloud zero_like(std::size_t n) {
    GaussianCloud z;
    z.positions.assign(n, {0, 0, 0});
    z.log_scales.assign(n, {0, 0, 0});
    z.rotations.assign(n, {0, 0, 0, 0});
    z.color_dc.assign(n, {0, 0, 0});
    z.opacity_logits.assign(n, 0.0f);
    return z;
}

void append_zero(GaussianCloud& c) {
    c.positions.push_back({0, 0, 0});
    c.log_scales.push_back({0, 0, 0});
    c.rotations.push_back({0, 0, 0, 0});
    c.color_dc.push_back({0, 0, 0});
    c.opacity_logits.push_back(0.0f);
}

}  // namespace

// ---------------------------------------------------------------------------
// Cameras and guidance
// ---------------------------------------------------------------------------

CameraPose sample_camera(const TrainConfig& config, Rng& rng, const std::array<double, 3>& target) {
    CameraPose cam;
    cam.distance = uniform(rng, config.distance_min, config.distance_max);
    cam.fovy_deg = uniform(rng, config.fovy_min, config.fovy_max);
    cam.elevation_deg = uniform(rng, config.elevation_min, config.elevation_max);
    cam.azimuth_deg = uniform(rng, config.azimuth_min, config.azimuth_max);
    cam.target = target;
    cam.width = config.resolution;
    cam.height = config.resolution;
    cam.near_plane = config.near_plane;
    cam.far_plane = config.far_plane;
    return cam;
}

TargetSceneGuidance::TargetSceneGuidance(GaussianCloud target, DiffusionSchedule schedule)
    : target_(std::move(target)), schedule_(std::move(schedule)) {}

std::shared_ptr<const NoisePredictor> TargetSceneGuidance::predictor_for(const CameraPose& camera,
                                                                         const RenderSettings& settings) const {
    return std::make_shared<ToyDenoiser>(render(target_, camera, settings).to_image(), schedule_);
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

TrainState::TrainState(GaussianCloud initial, std::uint64_t seed)
    : cloud(std::move(initial)),
      camera_rng(make_stream(seed, 1)),
      timestep_rng(make_stream(seed, 2)),
      noise_rng(make_stream(seed, 3)),
      background_rng(make_stream(seed, 4)),
      densify_rng(make_stream(seed, 5)) {
    cloud.validate();
    adam_m = zero_like(cloud.size());
    adam_v = zero_like(cloud.size());
    grad_accum.assign(cloud.size(), 0.0);
    grad_count.assign(cloud.size(), 0);
}

void TrainState::check_consistency() const {
    cloud.validate();
    adam_m.validate();
    adam_v.validate();
    const std::size_t n = cloud.size();
    if (adam_m.size() != n || adam_v.size() != n || grad_accum.size() != n || grad_count.size() != n) {
        throw ShapeError("optimizer state does not track the cloud length");
    }
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

nlohmann::json StepRecord::to_json() const {
    nlohmann::json j = {{"iteration", iteration},   {"skipped", skipped},
                        {"timesteps", timesteps},   {"sds_norm", sds_norm},
                        {"preference_norm", preference_norm}, {"mean_brightness", mean_brightness}};
    nlohmann::json s = nlohmann::json::object();
    for (const auto& [k, v] : scores) s[k] = v;
    j["scores"] = s;
    nlohmann::json ns = nlohmann::json::object();
    for (const auto& [k, v] : negative_scores) ns[k] = v;
    j["negative_scores"] = ns;
    j["weights"] = weights;
    return j;
}

StepRecord train_step(TrainState& state, const TrainConfig& config, const StepInputs& inputs) {
    state.check_consistency();
    ++state.iteration;
    StepRecord rec;
    rec.iteration = state.iteration;

    const std::size_t n = state.cloud.size();
    CloudGradients<float> total(n);
    std::vector<double> view_norm(n, 0.0);
    std::vector<int> view_count(n, 0);
    const bool preference = !inputs.scorers.empty() && config.use_preference && config.preference_weight != 0.0;
    const ScoreOptions score_options{config.scorer_retries, false};

    for (int b = 0; b < config.batch_size; ++b) {
        const CameraPose cam = sample_camera(config, state.camera_rng, state.look_at);
        RenderSettings settings;
        if (config.background == "random") {
            const double g = uniform(state.background_rng, 0.0, 1.0);
            settings.background = {g, g, g};
        }
        const RenderOutput<float> out = render(state.cloud, cam, settings);
        const Image x = out.to_image();
        rec.mean_brightness += mean_value(x) / config.batch_size;
        Image g_img(x.height, x.width);

        if (inputs.guidance && config.sds_weight != 0.0) {
            const int t = inputs.schedule.sample_timestep(state.timestep_rng, config.t_min, config.t_max);
            const Image eps = standard_normal_image(x.height, x.width, state.noise_rng);
            const auto predictor = inputs.guidance->predictor_for(cam, settings);
            const SdsGradient sds =
                sds_image_gradient(*predictor, inputs.schedule, x, inputs.prompt, t, eps, config.guidance_scale);
            g_img += sds.gradient * config.sds_weight;
            rec.timesteps.push_back(t);
            rec.sds_norm += norm(sds.gradient) / config.batch_size;
        }

        if (preference) {
            const auto signals = score_all(inputs.scorers, x, inputs.prompt, score_options);
            const FusedPreferenceGradient fused = fuse_positive(signals, config.divide_by_n);
            Image c_all = fused.gradient;
            std::vector<PreferenceSignal> neg;
            if (inputs.negation && config.use_negation) {
                neg = score_all(inputs.scorers, x, inputs.negation->text, score_options);
                c_all += negative_preference_grad(neg, config.literal_eq10);
            }
            g_img -= c_all * config.preference_weight;
            rec.preference_norm += norm(c_all) / config.batch_size;
            if (b == 0) {
                for (const auto& s : signals) rec.scores.emplace_back(s.scorer, s.score);
                for (const auto& s : neg) rec.negative_scores.emplace_back(s.scorer, s.score);
                rec.weights = fused.weights;
            }
        }

        const CloudGradients<float> g = render_backward(state.cloud, cam, out, g_img);
        total += g;
        for (std::size_t i = 0; i < n; ++i) {
            if (!g.visible[i]) continue;
            view_norm[i] += std::hypot(double(g.mean2d[i][0]), double(g.mean2d[i][1]));
            ++view_count[i];
        }
    }
    if (config.batch_size > 1) total *= 1.0f / static_cast<float>(config.batch_size);

    if (!total.all_finite()) {
        rec.skipped = true;
        ++state.skipped_steps;
        ++state.consecutive_skips;
        spdlog::warn("iteration {}: non-finite gradient, step skipped ({} in a row)", state.iteration,
                     state.consecutive_skips);
        if (state.consecutive_skips > config.max_consecutive_skips) {
            throw TrainingError("aborting after " + std::to_string(state.consecutive_skips) +
                                " consecutive non-finite gradients");
        }
        return rec;
    }
    state.consecutive_skips = 0;
    for (std::size_t i = 0; i < n; ++i) {
        state.grad_accum[i] += view_norm[i];
        state.grad_count[i] += view_count[i];
    }

    const int step = ++state.adam_step;
    auto hyper = [&](double lr) { return AdamHyper{lr, config.adam_beta1, config.adam_beta2, config.adam_eps}; };
    auto& c = state.cloud;
    auto& m = state.adam_m;
    auto& v = state.adam_v;
    adam_update<float>(flat(c.positions), flat(std::as_const(total.positions)), flat(m.positions), flat(v.positions),
                       hyper(config.lr_position), step);
    adam_update<float>(flat(c.log_scales), flat(std::as_const(total.log_scales)), flat(m.log_scales),
                       flat(v.log_scales), hyper(config.lr_scale), step);
    adam_update<float>(flat(c.rotations), flat(std::as_const(total.rotations)), flat(m.rotations), flat(v.rotations),
                       hyper(config.lr_rotation), step);
    adam_update<float>(flat(c.color_dc), flat(std::as_const(total.color_dc)), flat(m.color_dc), flat(v.color_dc),
                       hyper(config.lr_color), step);
    adam_update<float>(std::span<float>(c.opacity_logits), std::span<const float>(total.opacity_logits),
                       std::span<float>(m.opacity_logits), std::span<float>(v.opacity_logits),
                       hyper(config.lr_opacity), step);
    return rec;
}

// ---------------------------------------------------------------------------
// Densify / prune
// ---------------------------------------------------------------------------

nlohmann::json ScheduleEvent::to_json() const {
    return {{"iteration", iteration}, {"kind", kind},     {"before", before}, {"after", after},
            {"split", split},         {"cloned", cloned}, {"pruned", pruned}};
}

bool is_densify_tick(const TrainConfig& c, int it) {
    return it >= c.densify_from && it <= c.densify_until && (it - c.densify_from) % c.densify_interval == 0;
}

bool is_prune_tick(const TrainConfig& c, int it) {
    return it >= c.prune_from && it <= c.prune_until && (it - c.prune_from) % c.prune_interval == 0;
}

void split_splat(GaussianCloud& cloud, std::size_t i, Rng& rng, GaussianCloud& out) {
    const auto& q = cloud.rotations[i];
    Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    if (quat.norm() == 0.0) quat = Eigen::Quaterniond::Identity();
    const Eigen::Matrix3d r = quat.normalized().toRotationMatrix();
    const auto s = cloud.scale(i);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto rgb = cloud.color(i);
    for (int child = 0; child < 2; ++child) {
        Eigen::Vector3d local;
        for (int k = 0; k < 3; ++k) local[k] = std::clamp(normal(rng), -1.0, 1.0) * s[k];
        const Eigen::Vector3d offset = r * local;
        out.positions.push_back({cloud.positions[i][0] + float(offset[0]), cloud.positions[i][1] + float(offset[1]),
                                 cloud.positions[i][2] + float(offset[2])});
        const float half = std::log(2.0f);
        out.log_scales.push_back(
            {cloud.log_scales[i][0] - half, cloud.log_scales[i][1] - half, cloud.log_scales[i][2] - half});
        out.rotations.push_back(cloud.rotations[i]);
        out.color_dc.push_back(cloud.color_dc[i]);
        out.opacity_logits.push_back(cloud.opacity_logits[i]);
    }
    (void)rgb;
}

std::optional<ScheduleEvent> densify_and_prune(TrainState& state, const TrainConfig& config) {
    const bool densify = is_densify_tick(config, state.iteration);
    const bool prune = densify || is_prune_tick(config, state.iteration);
    if (!prune) return std::nullopt;
    state.check_consistency();

    ScheduleEvent ev;
    ev.iteration = state.iteration;
    ev.kind = densify ? "densify" : "prune";
    ev.before = state.cloud.size();

    if (densify) {
        const std::size_t n = state.cloud.size();
        std::vector<double> avg(n, 0.0);
        std::vector<double> seen;
        for (std::size_t i = 0; i < n; ++i) {
            if (state.grad_count[i] > 0) avg[i] = state.grad_accum[i] / state.grad_count[i];
            if (avg[i] > 0.0) seen.push_back(avg[i]);
        }
        if (!seen.empty()) {
            const auto k = static_cast<std::size_t>(std::floor(config.densify_percentile * (seen.size() - 1)));
            std::nth_element(seen.begin(), seen.begin() + static_cast<std::ptrdiff_t>(k), seen.end());
            const double threshold = seen[k];
            const double split_above = config.percent_dense * config.scene_extent;

            GaussianCloud grown;
            GaussianCloud kept;
            std::vector<bool> keep(n, true);
            for (std::size_t i = 0; i < n; ++i) {
                if (!(avg[i] > 0.0 && avg[i] >= threshold)) continue;
                const auto s = state.cloud.scale(i);
                if (std::max({s[0], s[1], s[2]}) > split_above) {
                    split_splat(state.cloud, i, state.densify_rng, grown);
                    keep[i] = false;
                    ++ev.split;
                } else {
                    grown.append_from(state.cloud, i);
                    ++ev.cloned;
                }
            }
            state.cloud.retain(keep);
            state.adam_m.retain(keep);
            state.adam_v.retain(keep);
            for (std::size_t j = 0; j < grown.size(); ++j) {
                state.cloud.append_from(grown, j);
                append_zero(state.adam_m);
                append_zero(state.adam_v);
            }
        }
    }

    {
        const std::size_t n = state.cloud.size();
        std::vector<bool> keep(n, true);
        const double scale_limit = config.prune_scale * config.scene_extent;
        for (std::size_t i = 0; i < n; ++i) {
            if (state.cloud.opacity(i) < config.prune_opacity) keep[i] = false;
            if (config.prune_scale > 0.0) {
                const auto s = state.cloud.scale(i);
                if (std::max({s[0], s[1], s[2]}) > scale_limit) keep[i] = false;
            }
        }
        ev.pruned = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false));
        state.cloud.retain(keep);
        state.adam_m.retain(keep);
        state.adam_v.retain(keep);
    }

    ev.after = state.cloud.size();
    state.grad_accum.assign(ev.after, 0.0);
    state.grad_count.assign(ev.after, 0);
    if (state.cloud.empty()) {
        throw TrainingError("densify/prune at iteration " + std::to_string(state.iteration) + " removed every splat");
    }
    return ev;
}

// ---------------------------------------------------------------------------
// Scene setup
// ---------------------------------------------------------------------------

InitialScene initialize_from_body(const BodyTemplate& body, const TrainConfig& config) {
    BodyParams params = BodyParams::neutral(body);
    auto fill = [&config](Eigen::VectorXd& dst, const char* key) {
        const auto values = config.number_list(key);
        if (values.empty()) return;
        if (values.size() != static_cast<std::size_t>(dst.size())) {
            throw InvalidParameter(std::string(key) + " needs " + std::to_string(dst.size()) + " values, got " +
                                   std::to_string(values.size()));
        }
        dst = Eigen::Map<const Eigen::VectorXd>(values.data(), dst.size());
    };
    fill(params.theta, "init_pose");
    fill(params.beta, "init_shape");
    fill(params.psi, "init_expression");
    const PosedMesh mesh = pose_mesh(body, params);
    const auto samples = sample_surface(mesh, config.init_splats, config.seed);
    const auto regions = face_regions(body);
    const double area = surface_area(mesh);
    const double scale = config.init_scale_factor * std::sqrt(area / config.init_splats);
    const float log_s = static_cast<float>(std::log(scale));

    InitialScene scene;
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const Eigen::Vector3d center = 0.5 * (lo + hi);
    scene.center = {center[0], center[1], center[2]};
    scene.cloud.reserve(samples.size());
    scene.regions.reserve(samples.size());
    for (const auto& s : samples) {
        scene.cloud.push_back({float(s.position[0]), float(s.position[1]), float(s.position[2])}, {log_s, log_s, log_s},
                              {1.0f, 0.0f, 0.0f, 0.0f}, {0.5f, 0.5f, 0.5f}, static_cast<float>(config.init_opacity));
        scene.regions.push_back(regions[static_cast<std::size_t>(s.face)]);
    }
    return scene;
}

GaussianCloud prompt_target_scene(const InitialScene& scene, const std::string& prompt) {
    const Lexicon& lex = Lexicon::bundled();
    std::array<std::array<double, 3>, 5> palette = {{
        {0.45, 0.3, 0.22},  // head
        {0.3, 0.35, 0.6},   // upper
        {0.25, 0.25, 0.3},  // lower
        {0.15, 0.15, 0.15}, // feet
        {0.8, 0.6, 0.5},    // hands
    }};
    for (const auto& m : extract_maps(prompt, lex)) {
        const auto category = lex.garment_category(m.attribute);
        const auto color = lex.first_color(m.modifier);
        if (!category || !color) continue;
        const auto& rgb = lex.colors.at(*color);
        if (*category == "upper") palette[1] = rgb;
        else if (*category == "lower") palette[2] = rgb;
        else if (*category == "shoes") palette[3] = rgb;
    }
    GaussianCloud target = scene.cloud;
    const float opaque = logit(0.95f);
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto& rgb = palette[static_cast<std::size_t>(scene.regions[i])];
        for (int k = 0; k < 3; ++k) target.color_dc[i][k] = color_to_dc(static_cast<float>(rgb[k]));
        target.opacity_logits[i] = opaque;
    }
    return target;
}

std::vector<CameraPose> turntable_cameras(const TrainConfig& config, const std::array<double, 3>& target) {
    std::vector<CameraPose> out;
    for (int k = 0; k < 8; ++k) {
        CameraPose cam;
        cam.distance = 0.5 * (config.distance_min + config.distance_max);
        cam.fovy_deg = 0.5 * (config.fovy_min + config.fovy_max);
        cam.elevation_deg = 0.0;
        cam.azimuth_deg = 45.0 * k;
        cam.target = target;
        cam.width = config.resolution;
        cam.height = config.resolution;
        cam.near_plane = config.near_plane;
        cam.far_plane = config.far_plane;
        out.push_back(cam);
    }
    return out;
}

double turntable_psnr(const GaussianCloud& cloud, const GaussianCloud& target, const TrainConfig& config,
                      const std::array<double, 3>& look_at) {
    double total = 0.0;
    for (const auto& cam : turntable_cameras(config, look_at)) {
        total += mse(render(cloud, cam).to_image(), render(target, cam).to_image());
    }
    const double m = total / 8.0;
    return m > 0.0 ? 10.0 * std::log10(1.0 / m) : std::numeric_limits<double>::infinity();
}

void write_turntable(const GaussianCloud& cloud, const TrainConfig& config, const std::array<double, 3>& target,
                     const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto cams = turntable_cameras(config, target);
    for (std::size_t k = 0; k < cams.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "turntable_%03d.png", static_cast<int>(45 * k));
        write_png(dir / name, render(cloud, cams[k]).to_image());
    }
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

namespace {

ScorerList build_scorers(const TrainConfig& config) {
    ScorerList out;
    for (const auto& id : config.scorer_ids()) {
        if (config.scorer_url.empty()) out.push_back(make_mock_scorer(id));
        else out.push_back(std::make_shared<RemoteScorer>(config.scorer_url, id));
    }
    return out;
}

void flush(const std::optional<std::filesystem::path>& dir, const GaussianCloud& cloud, const nlohmann::json& report,
           const TrainConfig& config, const std::array<double, 3>& look_at) {
    if (!dir) return;
    std::filesystem::create_directories(*dir);
    write_ply(*dir / "cloud.ply", cloud);
    std::ofstream(*dir / "report.json") << report.dump(2) << "\n";
    if (!config.dry_run) write_turntable(cloud, config, look_at, *dir);
}

}  // namespace

RunResult run(const TrainConfig& config, const std::string& prompt, const std::optional<std::filesystem::path>& output_dir) {
    config.validate();
    if (prompt.empty()) throw InvalidParameter("prompt must not be empty");
    if (config.threads > 0) omp_set_num_threads(config.threads);

    const BodyTemplate body = config.body_asset.empty() ? default_humanoid() : load_body_asset(config.body_asset);
    const InitialScene scene = initialize_from_body(body, config);
    TrainState state(scene.cloud, config.seed);
    state.look_at = scene.center;

    nlohmann::json report;
    report["schema"] = "contrast_forge.run_report";
    report["version"] = kRunReportVersion;
    report["prompt"] = prompt;
    report["config"] = config.to_json();
    report["initial_splats"] = state.cloud.size();
    {
        double sum = 0.0;
        for (std::size_t i = 0; i < state.cloud.size(); ++i) sum += state.cloud.opacity(i);
        report["initial_mean_opacity"] = sum / static_cast<double>(state.cloud.size());
    }
    report["look_at"] = scene.center;

    std::unique_ptr<LlmClient> llm;
    if (config.llm_url.empty()) llm = std::make_unique<RuleBasedLlmClient>();
    else llm = std::make_unique<RemoteLlmClient>(config.llm_url);
    const NegationSet negation = build_negation_set(prompt, *llm, config.static_negation_list());
    report["negation"] = negation.to_json();

    StepInputs inputs;
    inputs.prompt = prompt;
    inputs.schedule = DiffusionSchedule::linear(config.diffusion_steps);
    std::unique_ptr<GuidanceSource> guidance;
    std::optional<GaussianCloud> target;
    if (config.guidance == "toy") {
        target = prompt_target_scene(scene, prompt);
        guidance = std::make_unique<TargetSceneGuidance>(*target, inputs.schedule);
    } else if (config.guidance == "remote") {
        guidance = std::make_unique<FixedGuidance>(std::make_shared<RemoteNoisePredictor>(
            config.guidance_url, std::chrono::seconds(30), config.classifier_free));
    }
    inputs.guidance = guidance.get();
    if (config.use_preference) inputs.scorers = build_scorers(config);
    if (config.use_negation) inputs.negation = &negation;

    if (target && !config.dry_run) report["eval"]["psnr_initial"] = turntable_psnr(state.cloud, *target, config, state.look_at);

    nlohmann::json events = nlohmann::json::array();
    nlohmann::json counts = nlohmann::json::array();
    nlohmann::json trace = nlohmann::json::array();
    std::array<double, 4> cam_lo, cam_hi;
    cam_lo.fill(std::numeric_limits<double>::infinity());
    cam_hi.fill(-std::numeric_limits<double>::infinity());

    auto finish = [&](bool aborted, const std::string& error) {
        report["events"] = events;
        report["splat_counts"] = counts;
        report["trace"] = trace;
        report["final_splats"] = state.cloud.size();
        report["iterations_run"] = state.iteration;
        report["skipped_steps"] = state.skipped_steps;
        report["aborted"] = aborted;
        if (!error.empty()) report["error"] = error;
        report["warnings"] = negation.warnings;
        if (config.dry_run && std::isfinite(cam_lo[0])) {
            report["camera_ranges"] = {{"distance", {cam_lo[0], cam_hi[0]}},
                                       {"fovy", {cam_lo[1], cam_hi[1]}},
                                       {"elevation", {cam_lo[2], cam_hi[2]}},
                                       {"azimuth", {cam_lo[3], cam_hi[3]}}};
        }
        if (target && !config.dry_run) {
            report["eval"]["psnr_final"] = turntable_psnr(state.cloud, *target, config, state.look_at);
        }
    };

    try {
        for (int it = 1; it <= config.iterations; ++it) {
            if (config.dry_run) {
                ++state.iteration;
                for (int b = 0; b < config.batch_size; ++b) {
                    const CameraPose c = sample_camera(config, state.camera_rng, state.look_at);
                    const std::array<double, 4> v{c.distance, c.fovy_deg, c.elevation_deg, c.azimuth_deg};
                    for (int k = 0; k < 4; ++k) {
                        cam_lo[k] = std::min(cam_lo[k], v[k]);
                        cam_hi[k] = std::max(cam_hi[k], v[k]);
                    }
                }
            } else {
                const StepRecord rec = train_step(state, config, inputs);
                if (it % config.trace_interval == 0 || it == config.iterations) trace.push_back(rec.to_json());
            }
            if (auto ev = densify_and_prune(state, config)) {
                spdlog::info("iteration {}: {} {} -> {} splats", ev->iteration, ev->kind, ev->before, ev->after);
                events.push_back(ev->to_json());
                counts.push_back({{"iteration", ev->iteration}, {"count", ev->after}});
            }
        }
    } catch (const Error& e) {
        finish(true, e.what());
        flush(output_dir, state.cloud, report, config, state.look_at);
        throw;
    }
    finish(false, "");
    flush(output_dir, state.cloud, report, config, state.look_at);
    return {std::move(state.cloud), std::move(report)};
}

}  // namespace cforge
