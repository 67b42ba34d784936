#pragma once

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cforge {

/// Word tables used by the rule-based negation engine and the mock scorers.
/// The bundled instance is compiled in from data/*.json.
struct Lexicon {
    std::map<std::string, double> saliency;                          ///< term -> visual dominance
    std::map<std::string, std::vector<std::string>> confusables;     ///< attribute -> unrelated look-alikes
    std::map<std::string, std::vector<std::string>> garments;        ///< category -> nouns
    std::map<std::string, std::array<double, 3>> colors;             ///< color word -> RGB

    static const Lexicon& bundled();
    static Lexicon from_json(const nlohmann::json& saliency_doc, const nlohmann::json& confusables_doc,
                             const nlohmann::json& garments_doc, const nlohmann::json& colors_doc);

    /// Maximum word score of a (possibly multiword) modifier; 0 when unknown.
    double modifier_saliency(std::string_view modifier) const;
    bool is_garment(std::string_view phrase) const;
    std::optional<std::string> garment_category(std::string_view phrase) const;
    /// First color word in `text`, scanning whole words left to right.
    std::optional<std::string> first_color(std::string_view text) const;
};

std::string to_lower(std::string_view s);
/// Whitespace split.
std::vector<std::string> split_words(std::string_view s);

}  // namespace cforge
