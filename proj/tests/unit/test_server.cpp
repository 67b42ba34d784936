#include "cforge/conformance.hpp"
#include "cforge/errors.hpp"
#include "cforge/guidance.hpp"
#include "cforge/mock_server.hpp"
#include "cforge/negation.hpp"
#include "cforge/preference.hpp"
#include "cforge/wire.hpp"

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstring>

using namespace cforge;

namespace {

Image pattern(int h, int w, std::uint64_t seed) {
    Rng rng = make_stream(seed, 3);
    Image img(h, w);
    for (double& v : img.data) v = uniform(rng, 0.0, 1.0);
    return img;
}

}  // namespace

TEST_SUITE("wire") {

TEST_CASE("base64 and float32 encodings") {
    const std::string s = "foobar";
    const std::vector<std::uint8_t> bytes(s.begin(), s.end());
    CHECK(base64_encode(bytes) == "Zm9vYmFy");
    CHECK(base64_encode(std::span<const std::uint8_t>(bytes.data(), 4)) == "Zm9vYg==");
    CHECK(base64_decode("Zm9vYmFy") == bytes);
    CHECK_THROWS_AS(base64_decode("Zm9v*mFy"), FormatError);

    const std::vector<double> one{1.0};
    CHECK(encode_float32_le(one) == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f});
    const Image img = pattern(5, 7, 1);
    const Image back = decode_float_image_b64(encode_float_image_b64(img), 5, 7);
    CHECK(max_abs_diff(img, back) < 1e-7);
    CHECK_THROWS(decode_float_image_b64(encode_float_image_b64(img), 5, 8));
}

TEST_CASE("endpoint parsing") {
    const auto a = parse_endpoint("http://127.0.0.1:8080");
    CHECK(a.origin == "http://127.0.0.1:8080");
    CHECK(a.path_prefix == "");
    const auto b = parse_endpoint("http://host:9/api/v1/");
    CHECK(b.origin == "http://host:9");
    CHECK(b.path_prefix == "/api/v1");
}

}

TEST_SUITE("server") {

TEST_CASE("mock server passes the scorer conformance suite") {
    MockServer server;
    server.start();
    const auto checks = run_scorer_conformance(server.url());
    for (const auto& c : checks) {
        INFO(c.name << ": " << c.detail);
        CHECK(c.pass);
    }
    CHECK(all_passed(checks));
    CHECK(checks.size() >= 5);
}

TEST_CASE("health lists the configured models") {
    MockServerOptions opts;
    opts.models = {"mock:brightness"};
    MockServer server(opts);
    const int port = server.start();
    CHECK(port > 0);
    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Get("/health");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto j = nlohmann::json::parse(res->body);
    CHECK(j.at("status") == "ok");
    CHECK(j.at("models") == nlohmann::json::array({"mock:brightness"}));

    const nlohmann::json body = {{"image_b64", encode_png_b64(pattern(8, 8, 2))},
                                 {"text", "x"}, {"model", "mock:keyword_color"}, {"want_gradient", true}};
    auto missing = cli.Post("/score", body.dump(), "application/json");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto broken = cli.Post("/score", "{not json", "application/json");
    REQUIRE(broken);
    CHECK(broken->status == 400);
    CHECK(nlohmann::json::parse(broken->body).contains("error"));
}

TEST_CASE("overloaded server answers 429") {
    MockServerOptions opts;
    opts.max_in_flight = 0;
    MockServer server(opts);
    server.start();
    httplib::Client cli(server.url());
    const nlohmann::json body = {{"image_b64", encode_png_b64(pattern(8, 8, 2))},
                                 {"text", "x"}, {"model", "mock:brightness"}, {"want_gradient", false}};
    auto res = cli.Post("/score", body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 429);
    RemoteScorer remote(server.url(), "mock:brightness", std::chrono::seconds(5));
    CHECK_THROWS_AS(remote.score(pattern(8, 8, 2), "x"), TransportError);
}

TEST_CASE("remote scorers match the local mocks") {
    MockServer server;
    server.start();
    // the wire carries 8-bit PNG, so compare against the quantized image
    const Image img = decode_png_b64(encode_png_b64(pattern(16, 20, 4)));
    for (const auto& id : mock_scorer_ids()) {
        const RemoteScorer remote(server.url(), id);
        const auto r = remote.score(img, "a man wearing red jacket, blue jeans");
        const auto l = make_mock_scorer(id)->score(img, "a man wearing red jacket, blue jeans");
        CHECK(r.scorer == id);
        CHECK(std::abs(r.score - l.score) < 1e-9);
        CHECK(max_abs_diff(r.gradient, l.gradient) < 1e-6 * (1 + norm(l.gradient)));
    }
}

TEST_CASE("remote noise predictor matches the prompt-keyed toy") {
    MockServer server;
    server.start();
    const auto sched = DiffusionSchedule::linear();
    const PromptKeyedDenoiser local(sched, prompt_target_image);
    const RemoteNoisePredictor remote(server.url());
    const Image x = pattern(12, 10, 5);
    for (int t : {20, 250, 499}) {
        const Image a = remote.predict(x, "a woman wearing green coat", t);
        const Image b = local.predict(x, "a woman wearing green coat", t);
        CHECK(max_abs_diff(a, b) < 1e-5 * (1 + norm(b)));
    }
}

TEST_CASE("remote analyzer reproduces the rule-based negation set") {
    MockServer server;
    server.start();
    const RemoteLlmClient remote(server.url());
    for (const std::string prompt : {"a man wearing white shirt, red jacket, blue jeans, red canvas shoes",
                                     "a woman with black glove on the left hand, green hat"}) {
        const auto a = build_negation_set(prompt, remote);
        const auto b = build_negation_set(prompt, RuleBasedLlmClient());
        CHECK(a.text == b.text);
    }
}

TEST_CASE("dead endpoints raise transport errors naming the scorer") {
    const ScorerList scorers{std::make_shared<RemoteScorer>("http://127.0.0.1:9", "mock:brightness",
                                                            std::chrono::milliseconds(500))};
    ScoreOptions opts;
    opts.retries = 1;
    CHECK_THROWS_WITH_AS(score_all(scorers, pattern(8, 8, 1), "x", opts), doctest::Contains("mock:brightness"),
                         TransportError);
    const RemoteNoisePredictor dead("http://127.0.0.1:9", std::chrono::milliseconds(500));
    CHECK_THROWS_AS(dead.predict(pattern(8, 8, 1), "x", 10), TransportError);
}

}
