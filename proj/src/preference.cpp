#include "cforge/preference.hpp"

#include "cforge/errors.hpp"
#include "cforge/guidance.hpp"
#include "cforge/lexicon.hpp"
#include "cforge/wire.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace cforge {

namespace {

struct Region {
    int y0, y1, x0, x1;
    std::size_t count() const { return static_cast<std::size_t>(y1 - y0) * (x1 - x0); }
};

Region central_half(const Image& img) {
    Region r{img.height / 4, img.height - img.height / 4, img.width / 4, img.width - img.width / 4};
    if (r.y1 <= r.y0) r = {0, img.height, r.x0, r.x1};
    if (r.x1 <= r.x0) r = {r.y0, r.y1, 0, img.width};
    return r;
}

void require_image(const Image& img) {
    if (img.empty()) throw ContractError("cannot score an empty image");
}

}  // namespace

PreferenceSignal BrightnessScorer::score(const Image& image, const std::string&) const {
    require_image(image);
    PreferenceSignal s;
    s.scorer = id();
    s.score = mean_value(image);
    s.gradient = Image(image.height, image.width, 1.0 / static_cast<double>(image.size()));
    return s;
}

PreferenceSignal TargetPatchScorer::score(const Image& image, const std::string& text) const {
    require_image(image);
    const Image target = prompt_target_image(text, image.height, image.width);
    const Region r = central_half(image);
    const double n = static_cast<double>(r.count() * 3);
    PreferenceSignal s;
    s.scorer = id();
    s.gradient = Image(image.height, image.width);
    double sq = 0.0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double d = image.at(y, x, c) - target.at(y, x, c);
                sq += d * d;
                s.gradient.at(y, x, c) = -2.0 * d / n;
            }
        }
    }
    s.score = -sq / n;
    return s;
}

KeywordColorScorer::KeywordColorScorer() : lexicon_(&Lexicon::bundled()) {}
KeywordColorScorer::KeywordColorScorer(const Lexicon& lexicon) : lexicon_(&lexicon) {}

PreferenceSignal KeywordColorScorer::score(const Image& image, const std::string& text) const {
    require_image(image);
    PreferenceSignal s;
    s.scorer = id();
    s.gradient = Image(image.height, image.width);
    const auto color = lexicon_->first_color(text);
    if (!color) return s;
    const auto& rgb = lexicon_->colors.at(*color);
    std::array<double, 3> u{rgb[0] - 0.5, rgb[1] - 0.5, rgb[2] - 0.5};
    const double len = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    if (len == 0.0) return s;
    for (double& v : u) v /= len;
    const Region r = central_half(image);
    const double inv_n = 1.0 / static_cast<double>(r.count());
    double sum = 0.0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            for (int c = 0; c < 3; ++c) {
                sum += (image.at(y, x, c) - 0.5) * u[c];
                s.gradient.at(y, x, c) = u[c] * inv_n;
            }
        }
    }
    s.score = sum * inv_n;
    return s;
}

std::vector<std::string> mock_scorer_ids() { return {"mock:brightness", "mock:target_patch", "mock:keyword_color"}; }

std::shared_ptr<const PreferenceScorer> make_mock_scorer(const std::string& id) {
    if (id == "mock:brightness") return std::make_shared<BrightnessScorer>();
    if (id == "mock:target_patch") return std::make_shared<TargetPatchScorer>();
    if (id == "mock:keyword_color") return std::make_shared<KeywordColorScorer>();
    throw InvalidParameter("unknown mock scorer '" + id + "'");
}

RemoteScorer::RemoteScorer(std::string url, std::string model, std::chrono::milliseconds timeout)
    : url_(std::move(url)), model_(std::move(model)), timeout_(timeout) {}

PreferenceSignal RemoteScorer::score(const Image& image, const std::string& text) const {
    require_image(image);
    const EndpointUrl ep = parse_endpoint(url_);
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    const nlohmann::json body = {
        {"image_b64", encode_png_b64(image)}, {"text", text}, {"model", model_}, {"want_gradient", true}};
    auto res = client.Post(ep.path_prefix + "/score", body.dump(), "application/json");
    if (!res) throw TransportError("scorer '" + model_ + "' at " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw TransportError("scorer '" + model_ + "' at " + url_ + " replied HTTP " + std::to_string(res->status) +
                             ": " + res->body);
    }
    try {
        const auto doc = nlohmann::json::parse(res->body);
        const auto shape = doc.at("shape").get<std::vector<int>>();
        if (shape.size() != 3 || shape[0] != image.height || shape[1] != image.width || shape[2] != 3) {
            throw TransportError("scorer '" + model_ + "' returned a gradient of the wrong shape");
        }
        PreferenceSignal s;
        s.scorer = model_;
        s.score = doc.at("score").get<double>();
        s.gradient = decode_float_image_b64(doc.at("gradient_b64").get<std::string>(), shape[0], shape[1]);
        if (!std::isfinite(s.score) || !all_finite(s.gradient)) {
            throw TransportError("scorer '" + model_ + "' returned non-finite values");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw TransportError("scorer '" + model_ + "' sent malformed JSON: " + e.what());
    } catch (const FormatError& e) {
        throw TransportError("scorer '" + model_ + "' sent an undecodable gradient: " + e.what());
    }
}

namespace {

PreferenceSignal score_with_retries(const PreferenceScorer& scorer, const Image& image, const std::string& text,
                                    int retries) {
    std::string last;
    for (int attempt = 0; attempt <= retries; ++attempt) {
        try {
            PreferenceSignal s = scorer.score(image, text);
            if (!s.gradient.same_shape(image)) {
                throw ContractError("scorer '" + scorer.id() + "' returned a gradient of the wrong shape");
            }
            return s;
        } catch (const TransportError& e) {
            last = e.what();
        }
    }
    throw TransportError("scorer '" + scorer.id() + "' failed after " + std::to_string(retries + 1) +
                         " attempts: " + last);
}

}  // namespace

std::vector<PreferenceSignal> score_all(const ScorerList& scorers, const Image& image, const std::string& text,
                                        const ScoreOptions& options) {
    if (scorers.empty()) throw ContractError("score_all needs at least one scorer");
    if (!all_finite(image)) throw InvalidParameter("image passed to the scorers is not finite");
    std::vector<PreferenceSignal> out(scorers.size());
    if (!options.concurrent || scorers.size() == 1) {
        for (std::size_t i = 0; i < scorers.size(); ++i) {
            out[i] = score_with_retries(*scorers[i], image, text, options.retries);
        }
        return out;
    }
    std::vector<std::exception_ptr> errors(scorers.size());
    std::vector<std::thread> workers;
    workers.reserve(scorers.size());
    for (std::size_t i = 0; i < scorers.size(); ++i) {
        workers.emplace_back([&, i] {
            try {
                out[i] = score_with_retries(*scorers[i], image, text, options.retries);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

int quantize_score(double s) {
    if (std::isnan(s)) throw InvalidParameter("cannot quantize a NaN score");
    const double logistic = 1.0 / (1.0 + std::exp(-s));
    return std::max(1, static_cast<int>(std::lround(100.0 * logistic)));
}

std::vector<double> lcm_weights(std::span<const int> quantized) {
    if (quantized.empty()) throw ContractError("lcm_weights needs at least one score");
    std::uint64_t l = 1;
    for (int q : quantized) {
        if (q < 1) throw InvalidParameter("quantized scores must be positive integers");
        const auto uq = static_cast<std::uint64_t>(q);
        const std::uint64_t step = uq / std::gcd(l, uq);
        if (l > std::numeric_limits<std::uint64_t>::max() / step) throw RangeError("LCM of the scores overflows");
        l *= step;
    }
    std::vector<double> raw;
    raw.reserve(quantized.size());
    double total = 0.0;
    for (int q : quantized) {
        raw.push_back(static_cast<double>(l / static_cast<std::uint64_t>(q)));
        total += raw.back();
    }
    for (double& w : raw) w /= total;
    return raw;
}

Image positive_preference_grad(std::span<const PreferenceSignal> signals, std::span<const double> weights,
                               bool divide_by_n) {
    if (signals.empty()) throw ContractError("no preference signals to fuse");
    if (signals.size() != weights.size()) throw ContractError("one weight per preference signal is required");
    Image out(signals[0].gradient.height, signals[0].gradient.width);
    for (std::size_t i = 0; i < signals.size(); ++i) {
        require_same_shape(out, signals[i].gradient, "preference gradient");
        for (std::size_t k = 0; k < out.size(); ++k) out.data[k] += weights[i] * signals[i].gradient.data[k];
    }
    if (divide_by_n) out *= 1.0 / static_cast<double>(signals.size());
    return out;
}

FusedPreferenceGradient fuse_positive(std::span<const PreferenceSignal> signals, bool divide_by_n) {
    FusedPreferenceGradient f;
    for (const auto& s : signals) f.quantized.push_back(quantize_score(s.score));
    f.weights = lcm_weights(f.quantized);
    f.gradient = positive_preference_grad(signals, f.weights, divide_by_n);
    return f;
}

}  // namespace cforge
