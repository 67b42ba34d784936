#include "cforge/conformance.hpp"

#include "cforge/errors.hpp"
#include "cforge/image.hpp"
#include "cforge/random.hpp"
#include "cforge/wire.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace cforge {

namespace {

struct Suite {
    std::vector<ConformanceCheck> checks;

    void add(std::string name, bool pass, std::string detail = {}) {
        checks.push_back({std::move(name), pass, std::move(detail)});
    }
};

Image probe_image(int height, int width) {
    Rng rng = make_stream(7, 0xC0F0);
    Image img(height, width);
    for (double& v : img.data) v = std::round(uniform(rng, 0.0, 1.0) * 255.0) / 255.0;
    return img;
}

bool error_body(const httplib::Result& res) {
    const auto doc = nlohmann::json::parse(res->body, nullptr, false);
    return !doc.is_discarded() && doc.is_object() && doc.contains("error") && doc["error"].is_string();
}

}  // namespace

std::vector<ConformanceCheck> run_scorer_conformance(const std::string& url, int height, int width,
                                                     std::chrono::milliseconds timeout) {
    Suite suite;
    const EndpointUrl ep = parse_endpoint(url);
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    const std::string prefix = ep.path_prefix;

    auto health = client.Get(prefix + "/health");
    if (!health) {
        suite.add("health reachable", false, httplib::to_string(health.error()));
        return suite.checks;
    }
    suite.add("health reachable", health->status == 200, "HTTP " + std::to_string(health->status));
    std::vector<std::string> models;
    {
        const auto doc = nlohmann::json::parse(health->body, nullptr, false);
        bool ok = !doc.is_discarded() && doc.is_object() && doc.value("status", "") == "ok" &&
                  doc.contains("models") && doc["models"].is_array() && !doc["models"].empty();
        if (ok) {
            for (const auto& m : doc["models"]) {
                if (!m.is_string()) ok = false;
                else models.push_back(m.get<std::string>());
            }
        }
        suite.add("health schema", ok, health->body);
    }
    if (models.empty()) return suite.checks;

    const Image image = probe_image(height, width);
    const std::string png = encode_png_b64(image);
    const std::string text = "a tall person wearing red jacket, blue jeans";
    auto post = [&](const nlohmann::json& body) {
        return client.Post(prefix + "/score", body.dump(), "application/json");
    };

    for (const auto& model : models) {
        const nlohmann::json req = {{"image_b64", png}, {"text", text}, {"model", model}, {"want_gradient", true}};
        auto first = post(req);
        if (!first || first->status != 200) {
            suite.add("score " + model + " status", false, first ? "HTTP " + std::to_string(first->status) : "no reply");
            continue;
        }
        suite.add("score " + model + " status", true);
        const auto doc = nlohmann::json::parse(first->body, nullptr, false);
        const bool has_fields = !doc.is_discarded() && doc.contains("score") && doc["score"].is_number() &&
                                doc.contains("gradient_b64") && doc["gradient_b64"].is_string() &&
                                doc.contains("shape") && doc["shape"].is_array();
        suite.add("score " + model + " schema", has_fields, has_fields ? "" : first->body.substr(0, 200));
        if (!has_fields) continue;

        const auto shape = doc["shape"].get<std::vector<int>>();
        suite.add("score " + model + " shape", shape == std::vector<int>{height, width, 3},
                  doc["shape"].dump());
        suite.add("score " + model + " finite score", std::isfinite(doc["score"].get<double>()));
        try {
            const Image g = decode_float_image_b64(doc["gradient_b64"].get<std::string>(), height, width);
            suite.add("score " + model + " gradient payload", all_finite(g));
        } catch (const Error& e) {
            suite.add("score " + model + " gradient payload", false, e.what());
        }

        auto second = post(req);
        suite.add("score " + model + " deterministic", second && second->status == 200 && second->body == first->body);

        nlohmann::json no_grad = req;
        no_grad["want_gradient"] = false;
        auto third = post(no_grad);
        bool same_score = false;
        if (third && third->status == 200) {
            const auto d3 = nlohmann::json::parse(third->body, nullptr, false);
            same_score = !d3.is_discarded() && d3.contains("score") && d3["score"] == doc["score"];
        }
        suite.add("score " + model + " without gradient", same_score);
    }

    {
        auto res = post({{"image_b64", png}, {"text", text}, {"model", "no-such-model"}, {"want_gradient", true}});
        suite.add("unknown model is 404", res && res->status == 404 && error_body(res),
                  res ? "HTTP " + std::to_string(res->status) : "no reply");
    }
    {
        auto res = client.Post(prefix + "/score", "{not json", "application/json");
        suite.add("malformed JSON is 400", res && res->status == 400 && error_body(res),
                  res ? "HTTP " + std::to_string(res->status) : "no reply");
    }
    {
        auto res = post({{"text", text}, {"model", models.front()}});
        suite.add("missing image is 400", res && res->status == 400 && error_body(res),
                  res ? "HTTP " + std::to_string(res->status) : "no reply");
    }
    {
        auto res = post({{"image_b64", "***"}, {"text", text}, {"model", models.front()}, {"want_gradient", true}});
        suite.add("bad base64 is 400", res && res->status == 400 && error_body(res),
                  res ? "HTTP " + std::to_string(res->status) : "no reply");
    }
    return suite.checks;
}

bool all_passed(const std::vector<ConformanceCheck>& checks) {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

}  // namespace cforge
