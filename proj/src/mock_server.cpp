#include "cforge/mock_server.hpp"

#include "cforge/errors.hpp"
#include "cforge/guidance.hpp"
#include "cforge/negation.hpp"
#include "cforge/preference.hpp"
#include "cforge/wire.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <map>
#include <thread>

namespace cforge {

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, {{"error", message}});
}

/// Counts a request against the in-flight budget for its lifetime.
class InFlight {
public:
    InFlight(std::atomic<int>& counter, int limit) : counter_(counter) { admitted_ = ++counter_ <= limit; }
    ~InFlight() { --counter_; }
    bool admitted() const { return admitted_; }

private:
    std::atomic<int>& counter_;
    bool admitted_;
};

struct BadRequest : Error {
    using Error::Error;
};

template <typename T>
T field(const nlohmann::json& doc, const char* name) {
    if (!doc.contains(name)) throw BadRequest(std::string("missing field '") + name + "'");
    try {
        return doc.at(name).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw BadRequest(std::string("field '") + name + "' has the wrong type");
    }
}

nlohmann::json parse_body(const httplib::Request& req) {
    nlohmann::json doc = nlohmann::json::parse(req.body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw BadRequest("body is not a JSON object");
    return doc;
}

}  // namespace

struct MockServer::Impl {
    MockServerOptions options;
    std::map<std::string, std::shared_ptr<const PreferenceScorer>> scorers;
    std::vector<std::string> model_ids;
    httplib::Server server;
    std::thread thread;
    std::atomic<int> in_flight{0};
    int bound_port = -1;
    DiffusionSchedule schedule = DiffusionSchedule::linear();

    explicit Impl(MockServerOptions opts) : options(std::move(opts)) {
        model_ids = options.models.empty() ? mock_scorer_ids() : options.models;
        for (const auto& id : model_ids) scorers[id] = make_mock_scorer(id);
        install_routes();
    }

    template <typename Handler>
    void guarded(const httplib::Request& req, httplib::Response& res, Handler&& handler) {
        InFlight slot(in_flight, options.max_in_flight);
        if (!slot.admitted()) return reply_error(res, 429, "server overloaded, retry later");
        try {
            handler(parse_body(req));
        } catch (const BadRequest& e) {
            reply_error(res, 400, e.what());
        } catch (const FormatError& e) {
            reply_error(res, 400, e.what());
        } catch (const RangeError& e) {
            reply_error(res, 400, e.what());
        } catch (const std::exception& e) {
            reply_error(res, 500, e.what());
        }
    }

    void install_routes() {
        server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            reply(res, 200, {{"status", "ok"}, {"models", model_ids}});
        });

        server.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(req, res, [&](const nlohmann::json& doc) {
                const auto model = field<std::string>(doc, "model");
                const auto text = field<std::string>(doc, "text");
                const auto image_b64 = field<std::string>(doc, "image_b64");
                const bool want_gradient = doc.contains("want_gradient") ? field<bool>(doc, "want_gradient") : true;
                auto it = scorers.find(model);
                if (it == scorers.end()) return reply_error(res, 404, "unknown model '" + model + "'");
                const Image image = decode_png_b64(image_b64);
                const PreferenceSignal s = it->second->score(image, text);
                nlohmann::json out = {{"score", s.score}, {"model", model}, {"shape", {image.height, image.width, 3}}};
                if (want_gradient) out["gradient_b64"] = encode_float_image_b64(s.gradient);
                reply(res, 200, out);
            });
        });

        server.Post("/predict_noise", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(req, res, [&](const nlohmann::json& doc) {
                const auto shape = field<std::vector<int>>(doc, "shape");
                if (shape.size() != 3 || shape[2] != 3 || shape[0] <= 0 || shape[1] <= 0) {
                    throw BadRequest("shape must be [H, W, 3]");
                }
                const Image x_t = decode_float_image_b64(field<std::string>(doc, "image_b64"), shape[0], shape[1]);
                const auto text = field<std::string>(doc, "text");
                const int t = field<int>(doc, "timestep");
                const PromptKeyedDenoiser denoiser(schedule, &prompt_target_image);
                const Image eps = denoiser.predict(x_t, text, t);
                reply(res, 200, {{"noise_b64", encode_float_image_b64(eps)}, {"shape", shape}});
            });
        });

        server.Post("/analyze", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(req, res, [&](const nlohmann::json& doc) {
                const auto prompt = field<std::string>(doc, "prompt");
                const RuleBasedLlmClient client;
                const MapList maps = extract_maps(prompt);
                const auto saliency = client.saliency(maps);
                nlohmann::json out_maps = nlohmann::json::array();
                std::vector<std::string> attrs;
                for (std::size_t i = 0; i < maps.size(); ++i) {
                    out_maps.push_back({{"modifier", maps[i].modifier},
                                        {"attribute", maps[i].attribute},
                                        {"spatial", std::string(side_name(maps[i].spatial))},
                                        {"saliency", saliency[i]}});
                    attrs.push_back(maps[i].attribute);
                }
                // Plain attribute lists carry no modifiers, so also look up each clause verbatim.
                if (maps.empty()) {
                    std::string clause;
                    for (char c : prompt + ",") {
                        if (c == ',') {
                            const auto words = split_words(clause);
                            std::string joined;
                            for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
                            if (!joined.empty()) attrs.push_back(joined);
                            clause.clear();
                        } else {
                            clause += c;
                        }
                    }
                }
                reply(res, 200, {{"maps", out_maps}, {"irrelevant", irrelevant_elements(attrs, client)}});
            });
        });
    }
};

MockServer::MockServer(MockServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

MockServer::~MockServer() { stop(); }

int MockServer::start() {
    if (impl_->thread.joinable()) return impl_->bound_port;
    auto& srv = impl_->server;
    if (impl_->options.port == 0) {
        impl_->bound_port = srv.bind_to_any_port(impl_->options.host);
    } else {
        impl_->bound_port = srv.bind_to_port(impl_->options.host, impl_->options.port) ? impl_->options.port : -1;
    }
    if (impl_->bound_port <= 0) {
        throw TransportError("mock server could not bind " + impl_->options.host + ":" +
                             std::to_string(impl_->options.port));
    }
    impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    spdlog::debug("mock server listening on {}", url());
    return impl_->bound_port;
}

void MockServer::stop() {
    if (!impl_ || !impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

void MockServer::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

int MockServer::port() const { return impl_->bound_port; }

std::string MockServer::url() const {
    return "http://" + impl_->options.host + ":" + std::to_string(impl_->bound_port);
}

const std::vector<std::string>& MockServer::models() const { return impl_->model_ids; }

}  // namespace cforge
