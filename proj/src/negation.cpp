#include "cforge/negation.hpp"

#include "cforge/errors.hpp"
#include "cforge/wire.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>

namespace cforge {

std::string_view side_name(Side side) {
    switch (side) {
        case Side::left: return "left";
        case Side::right: return "right";
        case Side::none: break;
    }
    return "none";
}

Side parse_side(std::string_view name) {
    const std::string n = to_lower(name);
    if (n == "left") return Side::left;
    if (n == "right") return Side::right;
    if (n == "none" || n.empty()) return Side::none;
    throw InvalidParameter("unknown side '" + std::string(name) + "'");
}

std::string ModifierAttributePair::render() const {
    std::string out = modifier.empty() ? attribute : modifier + " " + attribute;
    if (spatial != Side::none) {
        out += " on the ";
        out += side_name(spatial);
        out += " ";
        out += anchor.empty() ? "side" : anchor;
    }
    return out;
}

bool ModifierAttributePair::same_content(const ModifierAttributePair& o) const {
    return modifier == o.modifier && attribute == o.attribute && spatial == o.spatial && anchor == o.anchor;
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

namespace {

struct Token {
    std::string text;
    std::string lower;
    std::size_t begin;
    std::size_t end;
};

bool is_separator(char c) { return c == ',' || c == ';' || c == '.' || c == '!' || c == '?'; }

std::vector<std::vector<Token>> split_clauses(std::string_view text) {
    std::vector<std::vector<Token>> clauses(1);
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (is_separator(c)) {
            clauses.emplace_back();
            ++i;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && !is_separator(text[j])) ++j;
        Token t{std::string(text.substr(i, j - i)), to_lower(text.substr(i, j - i)), i, j};
        if (t.lower == "and" || t.lower == "with") {
            clauses.emplace_back();
        } else {
            clauses.back().push_back(std::move(t));
        }
        i = j;
    }
    return clauses;
}

std::string join(const std::vector<Token>& toks, std::size_t from, std::size_t to, bool lower) {
    std::string out;
    for (std::size_t k = from; k < to; ++k) {
        if (!out.empty()) out += ' ';
        out += lower ? toks[k].lower : toks[k].text;
    }
    return out;
}

bool is_article(const std::string& w) { return w == "a" || w == "an" || w == "the"; }

bool is_person_noun(const std::string& w) {
    static const std::set<std::string> nouns = {"man",  "woman", "person", "boy",   "girl",       "lady",  "gentleman",
                                                "guy",  "child", "kid",    "adult", "individual", "people", "men",
                                                "women", "teenager", "figure", "male", "female"};
    return nouns.count(w) > 0;
}

}  // namespace

MapList extract_maps(std::string_view text, const Lexicon& lexicon) {
    MapList out;
    for (auto clause : split_clauses(text)) {
        // Subject before "wearing" is not apparel.
        for (std::size_t k = 0; k < clause.size(); ++k) {
            if (clause[k].lower == "wearing" || clause[k].lower == "wears") {
                clause.erase(clause.begin(), clause.begin() + static_cast<std::ptrdiff_t>(k + 1));
                k = static_cast<std::size_t>(-1);
            }
        }
        while (!clause.empty() && is_article(clause.front().lower)) clause.erase(clause.begin());
        if (clause.empty()) continue;

        ModifierAttributePair map;
        const std::size_t span_end = clause.back().end;
        std::size_t n = clause.size();
        // Trailing "on the left|right [anchor]", anchor at most two words.
        for (std::size_t k = clause.size() > 5 ? clause.size() - 5 : 0; k + 2 < clause.size(); ++k) {
            const auto& det = clause[k + 1].lower;
            const auto& side = clause[k + 2].lower;
            if (clause[k].lower == "on" && (det == "the" || det == "his" || det == "her" || det == "their") &&
                (side == "left" || side == "right")) {
                map.spatial = side == "left" ? Side::left : Side::right;
                map.anchor = join(clause, k + 3, clause.size(), false);
                n = k;
                break;
            }
        }
        if (n < 2) continue;

        std::size_t attr_begin = n;
        for (std::size_t k = 1; k < n; ++k) {
            if (lexicon.is_garment(join(clause, k, n, true))) {
                attr_begin = k;
                break;
            }
        }
        if (attr_begin == n) {
            std::size_t run = 0;
            while (run + 1 < n && lexicon.saliency.count(clause[run].lower)) ++run;
            if (run == 0 || is_person_noun(clause[n - 1].lower)) continue;
            attr_begin = run;
        }
        map.modifier = join(clause, 0, attr_begin, false);
        map.attribute = join(clause, attr_begin, n, false);
        map.span_begin = clause.front().begin;
        map.span_end = span_end;
        out.push_back(std::move(map));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Clients
// ---------------------------------------------------------------------------

RuleBasedLlmClient::RuleBasedLlmClient() : lexicon_(&Lexicon::bundled()) {}
RuleBasedLlmClient::RuleBasedLlmClient(const Lexicon& lexicon) : lexicon_(&lexicon) {}

std::vector<double> RuleBasedLlmClient::saliency(const MapList& maps) const {
    std::vector<double> out;
    out.reserve(maps.size());
    for (const auto& m : maps) out.push_back(lexicon_->modifier_saliency(m.modifier));
    return out;
}

std::vector<std::string> RuleBasedLlmClient::irrelevant(const std::vector<std::string>& attributes) const {
    std::vector<std::string> out;
    for (const auto& a : attributes) {
        auto it = lexicon_->confusables.find(to_lower(a));
        if (it == lexicon_->confusables.end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
}

RemoteLlmClient::RemoteLlmClient(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), timeout_(timeout) {}

nlohmann::json RemoteLlmClient::analyze(const std::string& prompt) const {
    const EndpointUrl ep = parse_endpoint(url_);
    httplib::Client client(ep.origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    const nlohmann::json body = {{"prompt", prompt}};
    auto res = client.Post(ep.path_prefix + "/analyze", body.dump(), "application/json");
    if (!res) throw TransportError("analyzer at " + url_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("analyzer at " + url_ + " replied " + std::to_string(res->status));
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw TransportError("analyzer at " + url_ + " sent malformed JSON: " + e.what());
    }
}

std::vector<double> RemoteLlmClient::saliency(const MapList& maps) const {
    std::string prompt;
    for (const auto& m : maps) prompt += (prompt.empty() ? "" : ", ") + m.render();
    const auto doc = analyze(prompt);
    std::vector<double> out(maps.size(), 0.0);
    try {
        for (const auto& entry : doc.at("maps")) {
            const auto mod = entry.at("modifier").get<std::string>();
            const auto attr = entry.at("attribute").get<std::string>();
            for (std::size_t i = 0; i < maps.size(); ++i) {
                if (maps[i].modifier == mod && maps[i].attribute == attr) out[i] = entry.at("saliency").get<double>();
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("analyzer reply lacks map fields: ") + e.what());
    }
    return out;
}

std::vector<std::string> RemoteLlmClient::irrelevant(const std::vector<std::string>& attributes) const {
    std::string prompt;
    for (const auto& a : attributes) prompt += (prompt.empty() ? "" : ", ") + a;
    const auto doc = analyze(prompt);
    try {
        return doc.at("irrelevant").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("analyzer reply lacks 'irrelevant': ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Negation construction
// ---------------------------------------------------------------------------

namespace {

void warn(std::vector<std::string>* warnings, std::string msg) {
    spdlog::warn("{}", msg);
    if (warnings) warnings->push_back(std::move(msg));
}

}  // namespace

MapList rank_saliency(const MapList& maps, const LlmClient& client, std::vector<std::string>* warnings) {
    std::vector<double> scores;
    try {
        scores = client.saliency(maps);
        if (scores.size() != maps.size()) throw ContractError("client returned the wrong number of saliency scores");
    } catch (const std::exception& e) {
        warn(warnings, "saliency client '" + client.id() + "' failed (" + e.what() + "); using rule-based ranking");
        scores = RuleBasedLlmClient().saliency(maps);
    }
    std::vector<std::size_t> order(maps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return maps[a].attribute < maps[b].attribute;
    });
    MapList out;
    out.reserve(maps.size());
    for (std::size_t i : order) out.push_back(maps[i]);
    return out;
}

MapList recombine_maps(const MapList& ordered) {
    MapList out = ordered;
    const std::size_t n = ordered.size();
    for (std::size_t i = 0; i < n; ++i) out[i].modifier = ordered[(i + 1) % n].modifier;
    return out;
}

ModifierAttributePair reverse_spatial(ModifierAttributePair map) {
    if (map.spatial == Side::left) {
        map.spatial = Side::right;
    } else if (map.spatial == Side::right) {
        map.spatial = Side::left;
    }
    return map;
}

std::vector<std::string> irrelevant_elements(const std::vector<std::string>& attributes, const LlmClient& client,
                                             std::vector<std::string>* warnings) {
    std::vector<std::string> raw;
    try {
        raw = client.irrelevant(attributes);
    } catch (const std::exception& e) {
        warn(warnings, "irrelevant-element client '" + client.id() + "' failed (" + e.what() +
                           "); using the confusable table");
        raw = RuleBasedLlmClient().irrelevant(attributes);
    }
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (auto& s : raw) {
        if (seen.insert(s).second) out.push_back(std::move(s));
    }
    return out;
}

std::vector<std::string> irrelevant_elements(const MapList& maps, const LlmClient& client,
                                             std::vector<std::string>* warnings) {
    std::vector<std::string> attrs;
    attrs.reserve(maps.size());
    for (const auto& m : maps) attrs.push_back(m.attribute);
    return irrelevant_elements(attrs, client, warnings);
}

const std::vector<std::string>& default_static_negations() {
    static const std::vector<std::string> list = {"blurry",    "oversaturated", "noisy",        "lowres",
                                                  "deformed",  "extra limbs",   "bad anatomy",  "watermark",
                                                  "text",      "jpeg artifacts"};
    return list;
}

NegationSet build_negation_set(const std::string& prompt, const LlmClient& client,
                               const std::vector<std::string>& static_phrases) {
    if (static_phrases.empty()) throw ContractError("the static negation list must not be empty");
    NegationSet set;
    set.static_phrases = static_phrases;

    const MapList maps = extract_maps(prompt);
    const MapList ranked = rank_saliency(maps, client, &set.warnings);
    std::set<std::string> emitted;
    for (const auto& m : recombine_maps(ranked)) {
        const bool original = std::any_of(maps.begin(), maps.end(), [&](const auto& o) { return o.same_content(m); });
        if (!original && emitted.insert(m.render()).second) set.negated_maps.push_back(m);
    }
    for (const auto& m : ranked) {
        if (m.spatial == Side::none) continue;
        std::string r = reverse_spatial(m).render();
        if (emitted.insert(r).second) set.spatial_reversals.push_back(std::move(r));
    }
    for (auto& s : irrelevant_elements(ranked, client, &set.warnings)) {
        if (emitted.insert(s).second) set.irrelevant.push_back(std::move(s));
    }

    std::vector<std::string> parts = set.static_phrases;
    for (const auto& m : set.negated_maps) parts.push_back(m.render());
    parts.insert(parts.end(), set.spatial_reversals.begin(), set.spatial_reversals.end());
    parts.insert(parts.end(), set.irrelevant.begin(), set.irrelevant.end());
    for (const auto& p : parts) set.text += (set.text.empty() ? "" : ", ") + p;
    return set;
}

nlohmann::json NegationSet::to_json() const {
    nlohmann::json maps = nlohmann::json::array();
    for (const auto& m : negated_maps) {
        maps.push_back({{"modifier", m.modifier},
                        {"attribute", m.attribute},
                        {"spatial", std::string(side_name(m.spatial))},
                        {"anchor", m.anchor},
                        {"text", m.render()}});
    }
    return {{"static", static_phrases},   {"negated_maps", maps},     {"spatial_reversals", spatial_reversals},
            {"irrelevant", irrelevant},   {"negative_prompt", text},  {"warnings", warnings}};
}

Image negative_preference_grad(std::span<const PreferenceSignal> signals, bool literal) {
    if (signals.empty()) throw ContractError("no negation signals");
    Image out(signals[0].gradient.height, signals[0].gradient.width);
    for (const auto& s : signals) {
        require_same_shape(out, s.gradient, "negation gradient");
        out += s.gradient;
    }
    out *= (literal ? 1.0 : -1.0) / static_cast<double>(signals.size());
    return out;
}

Image negative_preference_grad(const ScorerList& scorers, const Image& image, const std::string& negative_text,
                               bool literal, const ScoreOptions& options) {
    const auto signals = score_all(scorers, image, negative_text, options);
    return negative_preference_grad(signals, literal);
}

}  // namespace cforge
