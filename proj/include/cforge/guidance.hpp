#pragma once

#include "cforge/image.hpp"
#include "cforge/random.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cforge {

/// Discrete DDPM schedule with a linear beta ramp. Index t runs over
/// [0, steps); alpha_bar is strictly decreasing.
struct DiffusionSchedule {
    std::vector<double> alpha_bar;

    static DiffusionSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

    int steps() const { return static_cast<int>(alpha_bar.size()); }
    /// Throws RangeError outside [0, steps).
    double alpha_bar_at(int t) const;
    /// omega_t = 1 - alpha_bar_t.
    double weight(int t) const;
    /// Nearest schedule index for a fraction of the schedule length.
    int index_from_fraction(double u) const;
    /// u ~ U(lo, hi) mapped to the nearest index.
    int sample_timestep(Rng& rng, double lo = 0.02, double hi = 0.5) const;
};

/// x_t = sqrt(alpha_bar) x + sqrt(1 - alpha_bar) eps.
Image add_noise(const Image& x, double alpha_bar, const Image& eps);
Image add_noise(const DiffusionSchedule& schedule, const Image& x, int t, const Image& eps);

Image standard_normal_image(int height, int width, Rng& rng);

class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Image predict(const Image& x_t, const std::string& text, int t) const = 0;
    /// Predictors with an unconditional branch enable classifier-free guidance.
    virtual std::optional<Image> predict_unconditional(const Image& /*x_t*/, int /*t*/) const { return std::nullopt; }
};

/// Exact noise under the hypothesis that the clean image is `target`.
class ToyDenoiser final : public NoisePredictor {
public:
    ToyDenoiser(Image target, DiffusionSchedule schedule);
    Image predict(const Image& x_t, const std::string& text, int t) const override;
    const Image& target() const { return target_; }

private:
    Image target_;
    DiffusionSchedule schedule_;
};

/// Toy denoiser whose target depends on the prompt: one target image per
/// distinct text, produced by `make_target`.
class PromptKeyedDenoiser final : public NoisePredictor {
public:
    using TargetFn = Image (*)(const std::string& text, int height, int width);
    PromptKeyedDenoiser(DiffusionSchedule schedule, TargetFn make_target);
    Image predict(const Image& x_t, const std::string& text, int t) const override;

private:
    DiffusionSchedule schedule_;
    TargetFn make_target_;
};

/// Smooth deterministic RGB pattern keyed by the prompt text.
Image prompt_target_image(const std::string& text, int height, int width);

/// Client for POST {url}/predict_noise.
class RemoteNoisePredictor final : public NoisePredictor {
public:
    explicit RemoteNoisePredictor(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(30),
                                  bool classifier_free = false);
    Image predict(const Image& x_t, const std::string& text, int t) const override;
    std::optional<Image> predict_unconditional(const Image& x_t, int t) const override;

private:
    std::pair<Image, std::optional<Image>> request(const Image& x_t, const std::string& text, int t,
                                                   bool want_uncond) const;
    std::string url_;
    std::chrono::milliseconds timeout_;
    bool classifier_free_;
};

struct SdsGradient {
    Image gradient;
    int timestep = 0;
    double weight = 0.0;
    std::uint64_t seed = 0;
};

/// weight * (eps_cfg - eps) with eps_cfg = eps_u + scale (eps_c - eps_u) when
/// an unconditional prediction is given, else eps_c.
Image sds_residual(const Image& eps_cond, const std::optional<Image>& eps_uncond, const Image& eps, double weight,
                   double guidance_scale);

SdsGradient sds_image_gradient(const NoisePredictor& predictor, const DiffusionSchedule& schedule, const Image& x,
                               const std::string& text, int t, const Image& eps, double guidance_scale = 7.5);

}  // namespace cforge
