#include "cforge/prompt_factory.hpp"

#include "cforge/errors.hpp"
#include "cforge/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <limits>
#include <set>

namespace cforge {

namespace embedded {
std::string_view prompt_template();
}  // namespace embedded

namespace {

const std::vector<std::string> kSlotNames = {"age", "body_shape", "gender", "region"};
const std::vector<std::string> kPlaceholders = {"age",   "body_shape", "gender", "region",
                                                "upper", "lower",      "shoes",  "accessory"};

ApparelPool read_pool(const nlohmann::json& doc) {
    return {doc.at("items").get<std::vector<std::string>>(), doc.at("modifiers").get<std::vector<std::string>>()};
}

std::uint64_t sat_mul(std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return std::numeric_limits<std::uint64_t>::max();
    return a * b;
}

int draw(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<int>(0, static_cast<int>(n) - 1)(rng);
}

}  // namespace

PromptTemplate PromptTemplate::from_json(const nlohmann::json& doc) {
    PromptTemplate t;
    try {
        t.frame = doc.at("frame").get<std::string>();
        for (const auto& name : kSlotNames) t.slots[name] = doc.at("slots").at(name).get<std::vector<std::string>>();
        const auto& app = doc.at("apparel");
        t.upper = read_pool(app.at("upper"));
        t.lower = read_pool(app.at("lower"));
        t.shoes = read_pool(app.at("shoes"));
        for (const auto& a : app.at("accessory").at("items")) {
            if (a.is_string()) {
                t.accessories.push_back({a.get<std::string>(), ""});
            } else {
                t.accessories.push_back({a.at("item").get<std::string>(), a.value("anchor", std::string())});
            }
        }
        t.accessory_modifiers = app.at("accessory").at("modifiers").get<std::vector<std::string>>();
        t.sides = doc.value("sides", std::vector<std::string>{"left", "right"});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("prompt template: ") + e.what());
    }
    t.validate();
    return t;
}

const PromptTemplate& PromptTemplate::bundled() {
    static const PromptTemplate t = from_json(nlohmann::json::parse(embedded::prompt_template()));
    return t;
}

void PromptTemplate::validate() const {
    for (const auto& name : kSlotNames) {
        auto it = slots.find(name);
        if (it == slots.end() || it->second.empty()) throw FormatError("prompt template slot '" + name + "' is empty");
    }
    auto need = [](bool ok, const char* what) {
        if (!ok) throw FormatError(std::string("prompt template pool '") + what + "' is empty");
    };
    need(!upper.items.empty() && !upper.modifiers.empty(), "upper");
    need(!lower.items.empty() && !lower.modifiers.empty(), "lower");
    need(!shoes.items.empty() && !shoes.modifiers.empty(), "shoes");
    need(!accessories.empty() && !accessory_modifiers.empty(), "accessory");
    auto distinct = [](const std::vector<std::string>& pool, const std::string& what) {
        if (std::set<std::string>(pool.begin(), pool.end()).size() != pool.size()) {
            throw FormatError("prompt template pool '" + what + "' repeats a value");
        }
    };
    for (const auto& [name, pool] : slots) distinct(pool, name);
    distinct(upper.items, "upper");
    distinct(lower.items, "lower");
    distinct(shoes.items, "shoes");
    distinct(upper.modifiers, "upper modifiers");
    distinct(lower.modifiers, "lower modifiers");
    distinct(shoes.modifiers, "shoes modifiers");
    distinct(accessory_modifiers, "accessory modifiers");
    const bool sided = std::any_of(accessories.begin(), accessories.end(), [](const auto& a) { return !a.anchor.empty(); });
    need(!sided || !sides.empty(), "sides");
    for (std::size_t pos = frame.find('{'); pos != std::string::npos; pos = frame.find('{', pos + 1)) {
        const auto close = frame.find('}', pos);
        if (close == std::string::npos) throw FormatError("prompt frame has an unterminated placeholder");
        const std::string key = frame.substr(pos + 1, close - pos - 1);
        if (std::find(kPlaceholders.begin(), kPlaceholders.end(), key) == kPlaceholders.end()) {
            throw FormatError("prompt frame uses unknown placeholder '" + key + "'");
        }
    }
}

std::uint64_t PromptTemplate::combination_count() const {
    std::uint64_t n = 1;
    for (const auto& name : kSlotNames) n = sat_mul(n, slots.at(name).size());
    n = sat_mul(n, upper.items.size() * upper.modifiers.size());
    n = sat_mul(n, lower.items.size() * lower.modifiers.size());
    n = sat_mul(n, shoes.items.size() * shoes.modifiers.size());
    std::uint64_t acc = 0;
    for (const auto& a : accessories) acc += a.anchor.empty() ? 1 : sides.size();
    return sat_mul(n, sat_mul(acc, accessory_modifiers.size()));
}

namespace {

// "a elderly" -> "an elderly"; spelling-based, which is enough for the pools.
std::string fix_indefinite_articles(const std::string& text) {
    std::string out;
    out.reserve(text.size() + 8);
    for (std::size_t i = 0; i < text.size(); ++i) {
        out += text[i];
        const bool word_start = i == 0 || text[i - 1] == ' ';
        if (word_start && (text[i] == 'a' || text[i] == 'A') && i + 2 < text.size() && text[i + 1] == ' ' &&
            std::strchr("aeiouAEIOU", text[i + 2]) != nullptr) {
            out += 'n';
        }
    }
    return out;
}

}  // namespace

std::string render_prompt(const PromptTemplate& t, const SlotAssignment& s) {
    const auto& acc = t.accessories.at(static_cast<std::size_t>(s.accessory));
    std::string accessory = t.accessory_modifiers.at(static_cast<std::size_t>(s.accessory_modifier)) + " " + acc.item;
    if (!acc.anchor.empty()) {
        accessory += " on the " + t.sides.at(static_cast<std::size_t>(s.side)) + " " + acc.anchor;
    }
    const std::map<std::string, std::string> values = {
        {"age", t.slots.at("age").at(static_cast<std::size_t>(s.age))},
        {"body_shape", t.slots.at("body_shape").at(static_cast<std::size_t>(s.body_shape))},
        {"gender", t.slots.at("gender").at(static_cast<std::size_t>(s.gender))},
        {"region", t.slots.at("region").at(static_cast<std::size_t>(s.region))},
        {"upper", t.upper.modifiers.at(static_cast<std::size_t>(s.upper_modifier)) + " " +
                      t.upper.items.at(static_cast<std::size_t>(s.upper))},
        {"lower", t.lower.modifiers.at(static_cast<std::size_t>(s.lower_modifier)) + " " +
                      t.lower.items.at(static_cast<std::size_t>(s.lower))},
        {"shoes", t.shoes.modifiers.at(static_cast<std::size_t>(s.shoes_modifier)) + " " +
                      t.shoes.items.at(static_cast<std::size_t>(s.shoes))},
        {"accessory", accessory}};
    std::string out;
    std::size_t pos = 0;
    while (pos < t.frame.size()) {
        const auto open = t.frame.find('{', pos);
        if (open == std::string::npos) {
            out += t.frame.substr(pos);
            break;
        }
        const auto close = t.frame.find('}', open);
        out += t.frame.substr(pos, open - pos);
        out += values.at(t.frame.substr(open + 1, close - open - 1));
        pos = close + 1;
    }
    return fix_indefinite_articles(out);
}

namespace {

PromptRecord make_record(const PromptTemplate& t, const SlotAssignment& s, int id, std::uint64_t seed) {
    PromptRecord r;
    r.id = id;
    r.slots = s;
    r.seed = seed;
    r.text = render_prompt(t, s);
    const auto& acc = t.accessories[static_cast<std::size_t>(s.accessory)];
    r.values = {{"age", t.slots.at("age")[static_cast<std::size_t>(s.age)]},
                {"body_shape", t.slots.at("body_shape")[static_cast<std::size_t>(s.body_shape)]},
                {"gender", t.slots.at("gender")[static_cast<std::size_t>(s.gender)]},
                {"region", t.slots.at("region")[static_cast<std::size_t>(s.region)]},
                {"upper", t.upper.items[static_cast<std::size_t>(s.upper)]},
                {"upper_modifier", t.upper.modifiers[static_cast<std::size_t>(s.upper_modifier)]},
                {"lower", t.lower.items[static_cast<std::size_t>(s.lower)]},
                {"lower_modifier", t.lower.modifiers[static_cast<std::size_t>(s.lower_modifier)]},
                {"shoes", t.shoes.items[static_cast<std::size_t>(s.shoes)]},
                {"shoes_modifier", t.shoes.modifiers[static_cast<std::size_t>(s.shoes_modifier)]},
                {"accessory", acc.item},
                {"accessory_modifier", t.accessory_modifiers[static_cast<std::size_t>(s.accessory_modifier)]}};
    if (s.side >= 0) r.values["side"] = t.sides[static_cast<std::size_t>(s.side)];
    return r;
}

}  // namespace

std::vector<PromptRecord> generate_corpus(const PromptTemplate& t, int n, std::uint64_t seed) {
    if (n < 0) throw RangeError("corpus size must be non-negative");
    if (static_cast<std::uint64_t>(n) > t.combination_count()) {
        throw CapacityError("requested " + std::to_string(n) + " prompts but the template yields only " +
                            std::to_string(t.combination_count()));
    }
    Rng rng = make_stream(seed, 0x9A0F);
    std::set<SlotAssignment> seen;
    std::set<std::string> seen_text;
    std::vector<PromptRecord> out;
    out.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(out.size()) < n) {
        // only reachable when two assignments spell the same sentence
        if (seen.size() == t.combination_count()) throw CapacityError("template ran out of distinct prompts");
        SlotAssignment s;
        s.age = draw(rng, t.slots.at("age").size());
        s.body_shape = draw(rng, t.slots.at("body_shape").size());
        s.gender = draw(rng, t.slots.at("gender").size());
        s.region = draw(rng, t.slots.at("region").size());
        s.upper = draw(rng, t.upper.items.size());
        s.upper_modifier = draw(rng, t.upper.modifiers.size());
        s.lower = draw(rng, t.lower.items.size());
        s.lower_modifier = draw(rng, t.lower.modifiers.size());
        s.shoes = draw(rng, t.shoes.items.size());
        s.shoes_modifier = draw(rng, t.shoes.modifiers.size());
        s.accessory = draw(rng, t.accessories.size());
        s.accessory_modifier = draw(rng, t.accessory_modifiers.size());
        s.side = t.accessories[static_cast<std::size_t>(s.accessory)].anchor.empty() ? -1 : draw(rng, t.sides.size());
        if (!seen.insert(s).second) continue;
        PromptRecord rec = make_record(t, s, static_cast<int>(out.size()), seed);
        if (!seen_text.insert(rec.text).second) continue;
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<PromptRecord> sample_eval_subset(const std::vector<PromptRecord>& corpus, int k, std::uint64_t seed) {
    if (k < 0 || static_cast<std::size_t>(k) > corpus.size()) {
        throw RangeError("cannot sample " + std::to_string(k) + " prompts from a corpus of " +
                         std::to_string(corpus.size()));
    }
    std::vector<std::size_t> idx(corpus.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = make_stream(seed, 0x5AB5);
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    std::vector<PromptRecord> out;
    out.reserve(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) out.push_back(corpus[idx[i]]);
    return out;
}

nlohmann::json corpus_to_json(const std::vector<PromptRecord>& corpus) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : corpus) {
        const auto& s = r.slots;
        arr.push_back({{"id", r.id},
                       {"text", r.text},
                       {"seed", r.seed},
                       {"values", r.values},
                       {"slots",
                        {{"age", s.age},
                         {"body_shape", s.body_shape},
                         {"gender", s.gender},
                         {"region", s.region},
                         {"upper", s.upper},
                         {"upper_modifier", s.upper_modifier},
                         {"lower", s.lower},
                         {"lower_modifier", s.lower_modifier},
                         {"shoes", s.shoes},
                         {"shoes_modifier", s.shoes_modifier},
                         {"accessory", s.accessory},
                         {"accessory_modifier", s.accessory_modifier},
                         {"side", s.side}}}});
    }
    return arr;
}

std::vector<PromptRecord> corpus_from_json(const nlohmann::json& doc) {
    std::vector<PromptRecord> out;
    try {
        for (const auto& e : doc) {
            PromptRecord r;
            r.id = e.at("id").get<int>();
            r.text = e.at("text").get<std::string>();
            r.seed = e.value("seed", std::uint64_t{0});
            r.values = e.value("values", std::map<std::string, std::string>{});
            if (e.contains("slots")) {
                const auto& j = e.at("slots");
                auto& s = r.slots;
                s.age = j.at("age");
                s.body_shape = j.at("body_shape");
                s.gender = j.at("gender");
                s.region = j.at("region");
                s.upper = j.at("upper");
                s.upper_modifier = j.at("upper_modifier");
                s.lower = j.at("lower");
                s.lower_modifier = j.at("lower_modifier");
                s.shoes = j.at("shoes");
                s.shoes_modifier = j.at("shoes_modifier");
                s.accessory = j.at("accessory");
                s.accessory_modifier = j.at("accessory_modifier");
                s.side = j.at("side");
            }
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("prompt corpus: ") + e.what());
    }
    return out;
}

}  // namespace cforge
