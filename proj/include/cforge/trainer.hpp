#pragma once

#include "cforge/body_model.hpp"
#include "cforge/config.hpp"
#include "cforge/gaussian_cloud.hpp"
#include "cforge/guidance.hpp"
#include "cforge/negation.hpp"
#include "cforge/preference.hpp"
#include "cforge/random.hpp"
#include "cforge/splat_render.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cforge {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-15;
};

/// One bias-corrected Adam update; `step` counts from 1.
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v,
                 const AdamHyper& hyper, int step);

CameraPose sample_camera(const TrainConfig& config, Rng& rng, const std::array<double, 3>& target = {0, 0, 0});

/// Supplies the noise predictor for a given view. The toy source renders a
/// fixed target scene from the same camera so that the supervision is
/// 3D-consistent.
class GuidanceSource {
public:
    virtual ~GuidanceSource() = default;
    virtual std::shared_ptr<const NoisePredictor> predictor_for(const CameraPose& camera,
                                                                const RenderSettings& settings) const = 0;
};

class TargetSceneGuidance final : public GuidanceSource {
public:
    TargetSceneGuidance(GaussianCloud target, DiffusionSchedule schedule);
    std::shared_ptr<const NoisePredictor> predictor_for(const CameraPose& camera,
                                                        const RenderSettings& settings) const override;
    const GaussianCloud& target() const { return target_; }

private:
    GaussianCloud target_;
    DiffusionSchedule schedule_;
};

class FixedGuidance final : public GuidanceSource {
public:
    explicit FixedGuidance(std::shared_ptr<const NoisePredictor> predictor) : predictor_(std::move(predictor)) {}
    std::shared_ptr<const NoisePredictor> predictor_for(const CameraPose&, const RenderSettings&) const override {
        return predictor_;
    }

private:
    std::shared_ptr<const NoisePredictor> predictor_;
};

struct TrainState {
    int iteration = 0;
    GaussianCloud cloud;
    GaussianCloud adam_m;  ///< first moments, same layout as the cloud
    GaussianCloud adam_v;  ///< second moments
    int adam_step = 0;
    std::vector<double> grad_accum;  ///< summed screen-space center gradient norms
    std::vector<int> grad_count;     ///< views in which each splat was visible
    Rng camera_rng, timestep_rng, noise_rng, background_rng, densify_rng;
    int consecutive_skips = 0;
    int skipped_steps = 0;
    std::array<double, 3> look_at{0, 0, 0};

    TrainState() = default;
    TrainState(GaussianCloud initial, std::uint64_t seed);
    /// Throws ShapeError when moments or accumulators lost track of the cloud.
    void check_consistency() const;
};

struct StepInputs {
    const GuidanceSource* guidance = nullptr;  ///< null disables SDS
    ScorerList scorers;                        ///< empty disables preference terms
    const NegationSet* negation = nullptr;     ///< null disables the negation term
    std::string prompt;
    DiffusionSchedule schedule = DiffusionSchedule::linear();
};

struct StepRecord {
    int iteration = 0;
    bool skipped = false;
    std::vector<int> timesteps;
    double sds_norm = 0.0;
    double preference_norm = 0.0;
    std::vector<std::pair<std::string, double>> scores;
    std::vector<std::pair<std::string, double>> negative_scores;
    std::vector<double> weights;
    double mean_brightness = 0.0;

    nlohmann::json to_json() const;
};

/// One optimization step on the image-space objective
///   G = sds_weight * g_sds - preference_weight * (C+ + C-)
/// averaged over the batch and chained through render_backward.
StepRecord train_step(TrainState& state, const TrainConfig& config, const StepInputs& inputs);

struct ScheduleEvent {
    int iteration = 0;
    std::string kind;  ///< densify | prune
    std::size_t before = 0;
    std::size_t after = 0;
    std::size_t split = 0;
    std::size_t cloned = 0;
    std::size_t pruned = 0;

    nlohmann::json to_json() const;
};

bool is_densify_tick(const TrainConfig& config, int iteration);
bool is_prune_tick(const TrainConfig& config, int iteration);

/// Acts on schedule ticks only; returns the event when one fired.
std::optional<ScheduleEvent> densify_and_prune(TrainState& state, const TrainConfig& config);

/// Replaces splat `i` by two children with halved scales and offsets drawn
/// from the parent footprint (clamped to one standard deviation per axis).
void split_splat(GaussianCloud& cloud, std::size_t i, Rng& rng, GaussianCloud& out);

struct InitialScene {
    GaussianCloud cloud;
    std::vector<BodyRegion> regions;  ///< per splat
    std::array<double, 3> center{0, 0, 0};
};

/// Splats sampled uniformly on the rest-pose body surface.
InitialScene initialize_from_body(const BodyTemplate& body, const TrainConfig& config);

/// Same geometry, nearly opaque, colored per body region from the colors
/// the prompt names for each garment category.
GaussianCloud prompt_target_scene(const InitialScene& scene, const std::string& prompt);

/// Eight views at 45 degree azimuth steps around the body.
std::vector<CameraPose> turntable_cameras(const TrainConfig& config, const std::array<double, 3>& target);

/// PSNR of the pooled MSE over the turntable views.
double turntable_psnr(const GaussianCloud& cloud, const GaussianCloud& target, const TrainConfig& config,
                      const std::array<double, 3>& look_at);

struct RunResult {
    GaussianCloud cloud;
    nlohmann::json report;
};

/// Full pipeline. When `output_dir` is given, writes cloud.ply,
/// report.json and turntable_*.png there (also on abort).
RunResult run(const TrainConfig& config, const std::string& prompt,
              const std::optional<std::filesystem::path>& output_dir = std::nullopt);

void write_turntable(const GaussianCloud& cloud, const TrainConfig& config, const std::array<double, 3>& target,
                     const std::filesystem::path& dir);

inline constexpr int kRunReportVersion = 1;

}  // namespace cforge
