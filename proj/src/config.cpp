#include "cforge/config.hpp"

#include "cforge/errors.hpp"
#include "cforge/negation.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <variant>

namespace cforge {

namespace {

using Member = std::variant<int TrainConfig::*, double TrainConfig::*, bool TrainConfig::*, std::string TrainConfig::*,
                            std::uint64_t TrainConfig::*>;

const std::vector<std::pair<std::string, Member>>& field_table() {
    using C = TrainConfig;
    static const std::vector<std::pair<std::string, Member>> table = {
        {"iterations", &C::iterations},
        {"resolution", &C::resolution},
        {"batch_size", &C::batch_size},
        {"lr_position", &C::lr_position},
        {"lr_scale", &C::lr_scale},
        {"lr_rotation", &C::lr_rotation},
        {"lr_color", &C::lr_color},
        {"lr_opacity", &C::lr_opacity},
        {"adam_beta1", &C::adam_beta1},
        {"adam_beta2", &C::adam_beta2},
        {"adam_eps", &C::adam_eps},
        {"distance_min", &C::distance_min},
        {"distance_max", &C::distance_max},
        {"fovy_min", &C::fovy_min},
        {"fovy_max", &C::fovy_max},
        {"elevation_min", &C::elevation_min},
        {"elevation_max", &C::elevation_max},
        {"azimuth_min", &C::azimuth_min},
        {"azimuth_max", &C::azimuth_max},
        {"near_plane", &C::near_plane},
        {"far_plane", &C::far_plane},
        {"guidance", &C::guidance},
        {"guidance_url", &C::guidance_url},
        {"diffusion_steps", &C::diffusion_steps},
        {"t_min", &C::t_min},
        {"t_max", &C::t_max},
        {"sds_weight", &C::sds_weight},
        {"guidance_scale", &C::guidance_scale},
        {"classifier_free", &C::classifier_free},
        {"use_preference", &C::use_preference},
        {"use_negation", &C::use_negation},
        {"preference_weight", &C::preference_weight},
        {"divide_by_n", &C::divide_by_n},
        {"literal_eq10", &C::literal_eq10},
        {"scorers", &C::scorers},
        {"scorer_url", &C::scorer_url},
        {"llm_url", &C::llm_url},
        {"static_negations", &C::static_negations},
        {"scorer_retries", &C::scorer_retries},
        {"densify_from", &C::densify_from},
        {"densify_until", &C::densify_until},
        {"densify_interval", &C::densify_interval},
        {"prune_from", &C::prune_from},
        {"prune_until", &C::prune_until},
        {"prune_interval", &C::prune_interval},
        {"prune_opacity", &C::prune_opacity},
        {"prune_scale", &C::prune_scale},
        {"densify_percentile", &C::densify_percentile},
        {"percent_dense", &C::percent_dense},
        {"scene_extent", &C::scene_extent},
        {"init_splats", &C::init_splats},
        {"init_opacity", &C::init_opacity},
        {"init_scale_factor", &C::init_scale_factor},
        {"body_asset", &C::body_asset},
        {"init_pose", &C::init_pose},
        {"init_shape", &C::init_shape},
        {"init_expression", &C::init_expression},
        {"background", &C::background},
        {"max_consecutive_skips", &C::max_consecutive_skips},
        {"seed", &C::seed},
        {"threads", &C::threads},
        {"dry_run", &C::dry_run},
        {"trace_interval", &C::trace_interval},
    };
    return table;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw InvalidParameter("config key '" + key + "': cannot parse '" + value + "'");
    }
    return out;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw InvalidParameter("invalid config: " + msg);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

std::vector<std::string> TrainConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [name, _] : field_table()) out.push_back(name);
    return out;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
    const std::string value = trim(raw);
    for (const auto& [name, member] : field_table()) {
        if (name != key) continue;
        std::visit(
            [&](auto ptr) {
                using V = std::remove_reference_t<decltype(this->*ptr)>;
                if constexpr (std::is_same_v<V, bool>) {
                    if (value == "true" || value == "1") this->*ptr = true;
                    else if (value == "false" || value == "0") this->*ptr = false;
                    else throw InvalidParameter("config key '" + key + "' expects true/false, got '" + value + "'");
                } else if constexpr (std::is_same_v<V, std::string>) {
                    this->*ptr = value;
                } else {
                    this->*ptr = parse_number<V>(key, value);
                }
            },
            member);
        return;
    }
    throw InvalidParameter("unknown config key '" + key + "'");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, member] : field_table()) {
        std::visit([&](auto ptr) { out[name] = this->*ptr; }, member);
    }
    return out;
}

std::vector<std::string> TrainConfig::scorer_ids() const { return split_list(scorers); }

std::vector<std::string> TrainConfig::static_negation_list() const {
    auto list = split_list(static_negations);
    return list.empty() ? default_static_negations() : list;
}

std::vector<double> TrainConfig::number_list(const std::string& key) const {
    const std::string* text = key == "init_pose"    ? &init_pose
                              : key == "init_shape" ? &init_shape
                              : key == "init_expression" ? &init_expression
                                                         : nullptr;
    if (!text) throw InvalidParameter("config key '" + key + "' is not a number list");
    std::vector<double> out;
    for (const auto& item : split_list(*text)) out.push_back(parse_number<double>(key, item));
    return out;
}

void TrainConfig::validate() const {
    require(iterations >= 0, "iterations must be non-negative");
    require(resolution > 0, "resolution must be positive");
    require(batch_size >= 1, "batch_size must be at least 1");
    for (double lr : {lr_position, lr_scale, lr_rotation, lr_color, lr_opacity}) {
        require(lr > 0.0, "learning rates must be positive");
    }
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "Adam betas in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(distance_min > 0.0 && distance_min <= distance_max, "distance range");
    require(fovy_min > 0.0 && fovy_min <= fovy_max && fovy_max < 180.0, "fovy range");
    require(elevation_min > -90.0 && elevation_min <= elevation_max && elevation_max < 90.0, "elevation range");
    require(azimuth_min <= azimuth_max, "azimuth range");
    require(near_plane > 0.0 && far_plane > near_plane, "near/far planes");
    require(guidance == "toy" || guidance == "remote" || guidance == "none", "guidance must be toy, remote or none");
    require(guidance != "remote" || !guidance_url.empty(), "guidance = remote needs guidance_url");
    require(diffusion_steps >= 2, "diffusion_steps");
    require(t_min >= 0.0 && t_min <= t_max && t_max <= 1.0, "timestep range");
    require(preference_weight >= 0.0, "preference_weight must be non-negative");
    require(!use_preference || !scorer_ids().empty(), "use_preference needs at least one scorer");
    require(scorer_retries >= 0, "scorer_retries");
    require(densify_interval > 0 && prune_interval > 0, "densify/prune intervals must be positive");
    require(densify_from <= densify_until && prune_from <= prune_until, "densify/prune windows");
    require(prune_opacity >= 0.0 && prune_opacity < 1.0, "prune_opacity");
    require(prune_scale >= 0.0, "prune_scale");
    require(densify_percentile > 0.0 && densify_percentile < 1.0, "densify_percentile in (0, 1)");
    require(percent_dense > 0.0 && scene_extent > 0.0, "percent_dense and scene_extent must be positive");
    require(init_splats >= 1, "init_splats");
    require(init_opacity > 0.0 && init_opacity < 1.0, "init_opacity in (0, 1)");
    require(init_scale_factor > 0.0, "init_scale_factor");
    for (const char* key : {"init_pose", "init_shape", "init_expression"}) {
        for (double v : number_list(key)) require(std::isfinite(v), std::string(key) + " values must be finite");
    }
    require(background == "white" || background == "random", "background must be white or random");
    require(max_consecutive_skips >= 0, "max_consecutive_skips");
    require(threads >= 0, "threads");
    require(trace_interval >= 1, "trace_interval");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Strip comments outside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        if (stripped.front() == '[') continue;  // tolerate table headers, keys are flat
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

TrainConfig apply_overrides(TrainConfig base, const std::map<std::string, std::string>& values) {
    for (const auto& [k, v] : values) base.set(k, v);
    return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return apply_overrides(TrainConfig{}, parse_key_values(ss.str()));
}

}  // namespace cforge
