#pragma once

#include <chrono>
#include <string>
#include <vector>

namespace cforge {

struct ConformanceCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Scorer wire-protocol suite run against any server at `url`: /health
/// schema, /score schema and shapes for every advertised model, determinism,
/// want_gradient=false, and the 400/404 error contract.
std::vector<ConformanceCheck> run_scorer_conformance(const std::string& url, int height = 24, int width = 32,
                                                     std::chrono::milliseconds timeout = std::chrono::seconds(60));

bool all_passed(const std::vector<ConformanceCheck>& checks);

}  // namespace cforge
