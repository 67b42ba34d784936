#pragma once

#include <memory>
#include <string>
#include <vector>

namespace cforge {

struct MockServerOptions {
    std::string host = "127.0.0.1";
    int port = 0;             ///< 0 picks a free port
    int max_in_flight = 8;    ///< concurrent requests beyond this get HTTP 429
    std::vector<std::string> models;  ///< empty: every mock scorer
};

/// In-process HTTP server speaking the scorer, noise-predictor and analyzer
/// protocols with the mock scorers, the prompt-keyed toy denoiser and the
/// rule-based analyzer behind them.
///
///   GET  /health         -> {"status": "ok", "models": [...]}
///   POST /score          {image_b64, text, model, want_gradient} -> {score, gradient_b64, shape}
///   POST /predict_noise  {image_b64, shape, text, timestep, want_uncond} -> {noise_b64, shape}
///   POST /analyze        {prompt} -> {maps: [...], irrelevant: [...]}
///
/// Errors reply {"error": message} with 400 (malformed body), 404 (unknown
/// model) or 429 (overloaded).
class MockServer {
public:
    explicit MockServer(MockServerOptions options = {});
    ~MockServer();
    MockServer(const MockServer&) = delete;
    MockServer& operator=(const MockServer&) = delete;

    /// Binds and serves on a background thread; returns the bound port.
    int start();
    void stop();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();
    int port() const;
    std::string url() const;
    const std::vector<std::string>& models() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace cforge
