#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cforge {

/// Every knob of a training run. Defaults reproduce the full schedule at
/// desk resolution; configs/desk.toml shrinks it to a few minutes.
struct TrainConfig {
    int iterations = 3600;
    int resolution = 64;
    int batch_size = 1;

    double lr_position = 5e-5;
    double lr_scale = 1e-3;
    double lr_rotation = 1e-2;
    double lr_color = 1.25e-2;
    double lr_opacity = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.99;
    double adam_eps = 1e-15;

    double distance_min = 1.5, distance_max = 2.0;
    double fovy_min = 40.0, fovy_max = 70.0;
    double elevation_min = -30.0, elevation_max = 30.0;
    double azimuth_min = -180.0, azimuth_max = 180.0;
    double near_plane = 0.01, far_plane = 100.0;

    std::string guidance = "toy";  ///< toy | remote | none
    std::string guidance_url;
    int diffusion_steps = 1000;
    double t_min = 0.02, t_max = 0.5;
    double sds_weight = 1.0;
    double guidance_scale = 7.5;
    bool classifier_free = false;  ///< remote guidance: also request the unconditional branch

    bool use_preference = true;
    bool use_negation = true;
    double preference_weight = 1.0;
    bool divide_by_n = true;
    bool literal_eq10 = false;
    std::string scorers = "mock:target_patch,mock:keyword_color";
    std::string scorer_url;  ///< empty: in-process mocks
    std::string llm_url;     ///< empty: rule-based analyzer
    std::string static_negations;  ///< comma list; empty: bundled default
    int scorer_retries = 2;

    int densify_from = 300, densify_until = 2100, densify_interval = 300;
    int prune_from = 2400, prune_until = 3300, prune_interval = 300;
    double prune_opacity = 0.008;
    double prune_scale = 0.0;  ///< max scale / scene_extent above which splats are pruned; 0 disables
    double densify_percentile = 0.9;
    double percent_dense = 0.01;
    double scene_extent = 1.0;

    int init_splats = 100000;
    double init_opacity = 0.1;
    double init_scale_factor = 0.6;  ///< initial scale = factor * sqrt(area / splats)
    std::string body_asset;          ///< empty: bundled humanoid
    /// Body parameters for initialization as comma lists; empty keeps the
    /// rest pose, neutral shape and neutral expression.
    std::string init_pose;        ///< axis-angle per joint, 3 * joints values
    std::string init_shape;       ///< beta
    std::string init_expression;  ///< psi

    std::string background = "white";  ///< white | random
    int max_consecutive_skips = 10;
    std::uint64_t seed = 0;
    int threads = 0;  ///< 0: OpenMP default; 1 gives bitwise-reproducible runs
    bool dry_run = false;
    int trace_interval = 1;

    /// Throws InvalidParameter naming the first offending key.
    void validate() const;

    /// Throws InvalidParameter for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    nlohmann::json to_json() const;

    std::vector<std::string> scorer_ids() const;
    std::vector<std::string> static_negation_list() const;
    /// Parses a numeric comma list such as init_pose; throws InvalidParameter.
    std::vector<double> number_list(const std::string& key) const;

    static std::vector<std::string> keys();
};

/// Parses `key = value` lines; '#' starts a comment, strings may be quoted.
std::map<std::string, std::string> parse_key_values(const std::string& text);

TrainConfig load_config(const std::filesystem::path& path);
/// Applies parsed pairs on top of `base`.
TrainConfig apply_overrides(TrainConfig base, const std::map<std::string, std::string>& values);

}  // namespace cforge
