#include "cforge/guidance.hpp"

#include "cforge/errors.hpp"
#include "cforge/wire.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>

namespace cforge {

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw InvalidParameter("diffusion schedule needs at least two steps");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw InvalidParameter("diffusion betas must satisfy 0 < start <= end < 1");
    }
    DiffusionSchedule s;
    s.alpha_bar.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        const double beta = beta_start + (beta_end - beta_start) * i / (steps - 1);
        prod *= 1.0 - beta;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

double DiffusionSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t >= steps()) {
        throw RangeError("timestep " + std::to_string(t) + " outside schedule [0, " + std::to_string(steps()) + ")");
    }
    return alpha_bar[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::weight(int t) const { return 1.0 - alpha_bar_at(t); }

int DiffusionSchedule::index_from_fraction(double u) const {
    if (!(u >= 0.0 && u <= 1.0)) throw RangeError("timestep fraction must lie in [0, 1]");
    const long idx = std::lround(u * steps());
    return static_cast<int>(std::clamp<long>(idx, 0, steps() - 1));
}

int DiffusionSchedule::sample_timestep(Rng& rng, double lo, double hi) const {
    return index_from_fraction(uniform(rng, lo, hi));
}

Image add_noise(const Image& x, double alpha_bar, const Image& eps) {
    require_same_shape(x, eps, "noise");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw RangeError("alpha_bar must lie in [0, 1]");
    const double a = std::sqrt(alpha_bar);
    const double b = std::sqrt(1.0 - alpha_bar);
    Image out(x.height, x.width);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = a * x.data[i] + b * eps.data[i];
    return out;
}

Image add_noise(const DiffusionSchedule& schedule, const Image& x, int t, const Image& eps) {
    return add_noise(x, schedule.alpha_bar_at(t), eps);
}

Image standard_normal_image(int height, int width, Rng& rng) {
    Image out(height, width);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : out.data) v = normal(rng);
    return out;
}

namespace {

Image toy_prediction(const Image& target, const DiffusionSchedule& schedule, const Image& x_t, int t) {
    require_same_shape(x_t, target, "toy denoiser input");
    const double ab = schedule.alpha_bar_at(t);
    const double a = std::sqrt(ab);
    const double inv_b = 1.0 / std::sqrt(1.0 - ab);
    Image out(x_t.height, x_t.width);
    for (std::size_t i = 0; i < x_t.size(); ++i) out.data[i] = (x_t.data[i] - a * target.data[i]) * inv_b;
    return out;
}

}  // namespace

ToyDenoiser::ToyDenoiser(Image target, DiffusionSchedule schedule)
    : target_(std::move(target)), schedule_(std::move(schedule)) {}

Image ToyDenoiser::predict(const Image& x_t, const std::string&, int t) const {
    return toy_prediction(target_, schedule_, x_t, t);
}

PromptKeyedDenoiser::PromptKeyedDenoiser(DiffusionSchedule schedule, TargetFn make_target)
    : schedule_(std::move(schedule)), make_target_(make_target) {}

Image PromptKeyedDenoiser::predict(const Image& x_t, const std::string& text, int t) const {
    return toy_prediction(make_target_(text, x_t.height, x_t.width), schedule_, x_t, t);
}

Image prompt_target_image(const std::string& text, int height, int width) {
    Rng rng = make_stream(stable_hash(text), 0x7A26);
    // A few low-frequency blobs over a base tint, values kept inside [0.1, 0.9].
    std::array<double, 3> base{uniform(rng, 0.3, 0.7), uniform(rng, 0.3, 0.7), uniform(rng, 0.3, 0.7)};
    struct Blob {
        double cx, cy, r;
        std::array<double, 3> delta;
    };
    std::vector<Blob> blobs(4);
    for (Blob& b : blobs) {
        b.cx = uniform(rng, 0.2, 0.8);
        b.cy = uniform(rng, 0.2, 0.8);
        b.r = uniform(rng, 0.1, 0.3);
        b.delta = {uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)};
    }
    Image out(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5) / width;
            const double v = (y + 0.5) / height;
            for (int c = 0; c < 3; ++c) {
                double val = base[c];
                for (const Blob& b : blobs) {
                    const double d2 = (u - b.cx) * (u - b.cx) + (v - b.cy) * (v - b.cy);
                    val += b.delta[c] * std::exp(-d2 / (2.0 * b.r * b.r));
                }
                out.at(y, x, c) = std::clamp(val, 0.1, 0.9);
            }
        }
    }
    return out;
}

RemoteNoisePredictor::RemoteNoisePredictor(std::string url, std::chrono::milliseconds timeout, bool classifier_free)
    : url_(std::move(url)), timeout_(timeout), classifier_free_(classifier_free) {}

std::pair<Image, std::optional<Image>> RemoteNoisePredictor::request(const Image& x_t, const std::string& text, int t,
                                                                     bool want_uncond) const {
    const EndpointUrl ep = parse_endpoint(url_);
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    nlohmann::json body = {{"image_b64", encode_float_image_b64(x_t)},
                           {"shape", {x_t.height, x_t.width, 3}},
                           {"text", text},
                           {"timestep", t},
                           {"want_uncond", want_uncond}};
    auto res = client.Post(ep.path_prefix + "/predict_noise", body.dump(), "application/json");
    if (!res) throw TransportError("noise predictor at " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw TransportError("noise predictor at " + url_ + " replied " + std::to_string(res->status));
    }
    try {
        const auto doc = nlohmann::json::parse(res->body);
        const auto shape = doc.at("shape").get<std::vector<int>>();
        if (shape.size() != 3 || shape[0] != x_t.height || shape[1] != x_t.width || shape[2] != 3) {
            throw ContractError("noise predictor returned a prediction of the wrong shape");
        }
        Image eps = decode_float_image_b64(doc.at("noise_b64").get<std::string>(), shape[0], shape[1]);
        std::optional<Image> uncond;
        if (want_uncond && doc.contains("uncond_b64")) {
            uncond = decode_float_image_b64(doc.at("uncond_b64").get<std::string>(), shape[0], shape[1]);
        }
        return {std::move(eps), std::move(uncond)};
    } catch (const nlohmann::json::exception& e) {
        throw TransportError("noise predictor at " + url_ + " sent malformed JSON: " + e.what());
    }
}

Image RemoteNoisePredictor::predict(const Image& x_t, const std::string& text, int t) const {
    return request(x_t, text, t, false).first;
}

std::optional<Image> RemoteNoisePredictor::predict_unconditional(const Image& x_t, int t) const {
    if (!classifier_free_) return std::nullopt;
    return request(x_t, "", t, true).second;
}

Image sds_residual(const Image& eps_cond, const std::optional<Image>& eps_uncond, const Image& eps, double weight,
                   double guidance_scale) {
    if (!eps_cond.same_shape(eps)) throw ContractError("noise prediction shape differs from the noisy image");
    Image out(eps.height, eps.width);
    if (eps_uncond) {
        if (!eps_uncond->same_shape(eps)) throw ContractError("unconditional prediction shape differs");
        for (std::size_t i = 0; i < eps.size(); ++i) {
            const double cfg = eps_uncond->data[i] + guidance_scale * (eps_cond.data[i] - eps_uncond->data[i]);
            out.data[i] = weight * (cfg - eps.data[i]);
        }
    } else {
        for (std::size_t i = 0; i < eps.size(); ++i) out.data[i] = weight * (eps_cond.data[i] - eps.data[i]);
    }
    return out;
}

SdsGradient sds_image_gradient(const NoisePredictor& predictor, const DiffusionSchedule& schedule, const Image& x,
                               const std::string& text, int t, const Image& eps, double guidance_scale) {
    const Image x_t = add_noise(schedule, x, t, eps);
    const Image eps_c = predictor.predict(x_t, text, t);
    const std::optional<Image> eps_u = predictor.predict_unconditional(x_t, t);
    SdsGradient g;
    g.timestep = t;
    g.weight = schedule.weight(t);
    g.gradient = sds_residual(eps_c, eps_u, eps, g.weight, guidance_scale);
    return g;
}

}  // namespace cforge
