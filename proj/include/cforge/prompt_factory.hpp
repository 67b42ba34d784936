#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cforge {

struct AccessoryItem {
    std::string item;
    std::string anchor;  ///< body part for "on the left/right ..."; empty when unsided
};

struct ApparelPool {
    std::vector<std::string> items;
    std::vector<std::string> modifiers;
};

/// Slot pools and the sentence frame. Placeholders in the frame are
/// {age} {body_shape} {gender} {region} {upper} {lower} {shoes} {accessory}.
struct PromptTemplate {
    std::string frame;
    std::map<std::string, std::vector<std::string>> slots;  ///< age, body_shape, gender, region
    ApparelPool upper;
    ApparelPool lower;
    ApparelPool shoes;
    std::vector<AccessoryItem> accessories;
    std::vector<std::string> accessory_modifiers;
    std::vector<std::string> sides;

    static const PromptTemplate& bundled();
    static PromptTemplate from_json(const nlohmann::json& doc);

    /// Throws FormatError when a pool is empty or a frame placeholder is unknown.
    void validate() const;
    /// Number of distinct prompts the template can produce (saturating).
    std::uint64_t combination_count() const;
};

/// Indices into each pool; `side` is -1 for unsided accessories.
struct SlotAssignment {
    int age = 0, body_shape = 0, gender = 0, region = 0;
    int upper = 0, upper_modifier = 0;
    int lower = 0, lower_modifier = 0;
    int shoes = 0, shoes_modifier = 0;
    int accessory = 0, accessory_modifier = 0;
    int side = -1;

    auto operator<=>(const SlotAssignment&) const = default;
};

struct PromptRecord {
    int id = 0;
    std::string text;
    SlotAssignment slots;
    std::map<std::string, std::string> values;  ///< slot name -> chosen text
    std::uint64_t seed = 0;
};

std::string render_prompt(const PromptTemplate& tmpl, const SlotAssignment& slots);

/// `n` distinct prompts by seeded uniform sampling with rejection of repeats.
std::vector<PromptRecord> generate_corpus(const PromptTemplate& tmpl, int n, std::uint64_t seed);

/// `k` records drawn uniformly without replacement.
std::vector<PromptRecord> sample_eval_subset(const std::vector<PromptRecord>& corpus, int k, std::uint64_t seed);

nlohmann::json corpus_to_json(const std::vector<PromptRecord>& corpus);
std::vector<PromptRecord> corpus_from_json(const nlohmann::json& doc);

}  // namespace cforge
