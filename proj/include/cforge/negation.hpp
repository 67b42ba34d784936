#pragma once

#include "cforge/image.hpp"
#include "cforge/lexicon.hpp"
#include "cforge/preference.hpp"

#include <nlohmann/json_fwd.hpp>

#include <chrono>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cforge {

enum class Side { none, left, right };

std::string_view side_name(Side side);
/// "left" / "right" / "none"; throws InvalidParameter otherwise.
Side parse_side(std::string_view name);

/// A parsed (modifier, attribute) unit such as ("white", "canvas shoes"),
/// optionally placed on a side ("on the left hand": side left, anchor "hand").
struct ModifierAttributePair {
    std::string modifier;
    std::string attribute;
    Side spatial = Side::none;
    std::string anchor;
    std::size_t span_begin = 0;  ///< byte range in the source prompt
    std::size_t span_end = 0;

    /// "modifier attribute[ on the side anchor]".
    std::string render() const;

    /// Compares the content, not the source span.
    bool same_content(const ModifierAttributePair& other) const;
};

using MapList = std::vector<ModifierAttributePair>;

/// Comma/"and"/"with"-separated clauses; words before "wearing" are the
/// subject and are skipped. The attribute is the longest garment phrase that
/// ends the clause; the words before it form the modifier. Clauses without a
/// garment fall back to a leading run of known modifier words.
MapList extract_maps(std::string_view text, const Lexicon& lexicon = Lexicon::bundled());

/// Stand-in for the language model that ranks modifiers and proposes
/// irrelevant look-alike objects.
class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string id() const = 0;
    /// One score per pair, higher is more salient.
    virtual std::vector<double> saliency(const MapList& maps) const = 0;
    virtual std::vector<std::string> irrelevant(const std::vector<std::string>& attributes) const = 0;
};

/// Deterministic lexicon lookups, no network.
class RuleBasedLlmClient final : public LlmClient {
public:
    RuleBasedLlmClient();
    explicit RuleBasedLlmClient(const Lexicon& lexicon);
    std::string id() const override { return "rule_based"; }
    std::vector<double> saliency(const MapList& maps) const override;
    std::vector<std::string> irrelevant(const std::vector<std::string>& attributes) const override;

private:
    const Lexicon* lexicon_;
};

/// Client for POST {url}/analyze.
class RemoteLlmClient final : public LlmClient {
public:
    explicit RemoteLlmClient(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(30));
    std::string id() const override { return "remote:" + url_; }
    std::vector<double> saliency(const MapList& maps) const override;
    std::vector<std::string> irrelevant(const std::vector<std::string>& attributes) const override;

private:
    nlohmann::json analyze(const std::string& prompt) const;
    std::string url_;
    std::chrono::milliseconds timeout_;
};

/// Descending saliency, ties by attribute text. When the client throws or
/// returns the wrong number of scores the rule-based client is used and a
/// warning is appended.
MapList rank_saliency(const MapList& maps, const LlmClient& client, std::vector<std::string>* warnings = nullptr);

/// Attribute i receives the modifier of attribute i + 1 (cyclically).
MapList recombine_maps(const MapList& ordered);

ModifierAttributePair reverse_spatial(ModifierAttributePair map);

/// Look-alike objects for each attribute, first occurrence kept.
std::vector<std::string> irrelevant_elements(const std::vector<std::string>& attributes, const LlmClient& client,
                                             std::vector<std::string>* warnings = nullptr);
std::vector<std::string> irrelevant_elements(const MapList& maps, const LlmClient& client,
                                             std::vector<std::string>* warnings = nullptr);

const std::vector<std::string>& default_static_negations();

struct NegationSet {
    std::vector<std::string> static_phrases;
    MapList negated_maps;
    std::vector<std::string> spatial_reversals;
    std::vector<std::string> irrelevant;
    std::string text;  ///< Y_neg
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
};

/// Y_neg = static phrases, recombined pairs that differ from every original
/// pair, side-swapped pairs and irrelevant elements, joined with ", ".
NegationSet build_negation_set(const std::string& prompt, const LlmClient& client,
                               const std::vector<std::string>& static_phrases = default_static_negations());

/// C- = -(1/N) sum grad s_i(X, Y_neg); the sign flips when `literal` is set.
Image negative_preference_grad(std::span<const PreferenceSignal> signals, bool literal = false);
Image negative_preference_grad(const ScorerList& scorers, const Image& image, const std::string& negative_text,
                               bool literal = false, const ScoreOptions& options = {});

}  // namespace cforge
