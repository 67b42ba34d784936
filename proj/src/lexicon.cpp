#include "cforge/lexicon.hpp"

#include "cforge/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>

namespace cforge {

namespace embedded {
std::string_view saliency_lexicon();
std::string_view confusables();
std::string_view garments();
std::string_view colors();
}  // namespace embedded

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

Lexicon Lexicon::from_json(const nlohmann::json& saliency_doc, const nlohmann::json& confusables_doc,
                           const nlohmann::json& garments_doc, const nlohmann::json& colors_doc) {
    Lexicon lex;
    try {
        for (const auto& [term, score] : saliency_doc.at("terms").items()) lex.saliency[to_lower(term)] = score.get<double>();
        for (const auto& [term, list] : confusables_doc.at("entries").items()) {
            lex.confusables[to_lower(term)] = list.get<std::vector<std::string>>();
        }
        for (const auto& [cat, list] : garments_doc.at("categories").items()) {
            auto& dst = lex.garments[cat];
            for (const auto& g : list) dst.push_back(to_lower(g.get<std::string>()));
        }
        for (const auto& [name, rgb] : colors_doc.at("colors").items()) {
            const auto v = rgb.get<std::vector<double>>();
            if (v.size() != 3) throw FormatError("color '" + name + "' must have three components");
            lex.colors[to_lower(name)] = {v[0], v[1], v[2]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("lexicon data: ") + e.what());
    }
    return lex;
}

const Lexicon& Lexicon::bundled() {
    static const Lexicon lex = from_json(nlohmann::json::parse(embedded::saliency_lexicon()),
                                         nlohmann::json::parse(embedded::confusables()),
                                         nlohmann::json::parse(embedded::garments()),
                                         nlohmann::json::parse(embedded::colors()));
    return lex;
}

double Lexicon::modifier_saliency(std::string_view modifier) const {
    double best = 0.0;
    for (const auto& w : split_words(to_lower(modifier))) {
        auto it = saliency.find(w);
        if (it != saliency.end()) best = std::max(best, it->second);
    }
    return best;
}

std::optional<std::string> Lexicon::garment_category(std::string_view phrase) const {
    const std::string key = to_lower(phrase);
    for (const auto& [cat, list] : garments) {
        if (std::find(list.begin(), list.end(), key) != list.end()) return cat;
    }
    return std::nullopt;
}

bool Lexicon::is_garment(std::string_view phrase) const { return garment_category(phrase).has_value(); }

std::optional<std::string> Lexicon::first_color(std::string_view text) const {
    std::string cleaned = to_lower(text);
    for (char& c : cleaned) {
        if (c == ',' || c == '.' || c == ';' || c == ':') c = ' ';
    }
    for (const auto& w : split_words(cleaned)) {
        if (colors.count(w)) return w;
    }
    return std::nullopt;
}

}  // namespace cforge
