#pragma once

#include "cforge/image.hpp"

#include <chrono>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cforge {

struct Lexicon;

/// One scorer's verdict on an (image, text) pair. `gradient` is d score /
/// d pixel in [0, 1] pixel units.
struct PreferenceSignal {
    std::string scorer;
    double score = 0.0;
    Image gradient;
};

class PreferenceScorer {
public:
    virtual ~PreferenceScorer() = default;
    virtual std::string id() const = 0;
    virtual PreferenceSignal score(const Image& image, const std::string& text) const = 0;
};

using ScorerList = std::vector<std::shared_ptr<const PreferenceScorer>>;

/// Mean pixel value.
class BrightnessScorer final : public PreferenceScorer {
public:
    std::string id() const override { return "mock:brightness"; }
    PreferenceSignal score(const Image& image, const std::string& text) const override;
};

/// Negative MSE between the central half of the image and the same region of
/// the prompt-keyed target image.
class TargetPatchScorer final : public PreferenceScorer {
public:
    std::string id() const override { return "mock:target_patch"; }
    PreferenceSignal score(const Image& image, const std::string& text) const override;
};

/// Mean over the central half of <pixel - 0.5, u>, where u is the unit RGB
/// direction of the first color named in the prompt. Prompts naming no color
/// score 0 with a zero gradient.
class KeywordColorScorer final : public PreferenceScorer {
public:
    KeywordColorScorer();
    explicit KeywordColorScorer(const Lexicon& lexicon);
    std::string id() const override { return "mock:keyword_color"; }
    PreferenceSignal score(const Image& image, const std::string& text) const override;

private:
    const Lexicon* lexicon_;
};

/// Builds a mock scorer from its id ("mock:brightness", ...); throws
/// InvalidParameter for unknown ids.
std::shared_ptr<const PreferenceScorer> make_mock_scorer(const std::string& id);
std::vector<std::string> mock_scorer_ids();

/// Client for POST {url}/score. Transport failures and non-200 replies raise
/// TransportError.
class RemoteScorer final : public PreferenceScorer {
public:
    RemoteScorer(std::string url, std::string model, std::chrono::milliseconds timeout = std::chrono::seconds(60));
    std::string id() const override { return model_; }
    PreferenceSignal score(const Image& image, const std::string& text) const override;

private:
    std::string url_;
    std::string model_;
    std::chrono::milliseconds timeout_;
};

struct ScoreOptions {
    int retries = 2;          ///< extra attempts after a transport failure
    bool concurrent = false;  ///< one thread per scorer
};

/// One signal per scorer, in order. A scorer that still fails after the
/// retries aborts the whole call with a TransportError naming it.
std::vector<PreferenceSignal> score_all(const ScorerList& scorers, const Image& image, const std::string& text,
                                        const ScoreOptions& options = {});

/// max(1, round(100 * logistic(s))).
int quantize_score(double s);

/// w_i = lcm(scores) / s_i, normalized to sum 1.
std::vector<double> lcm_weights(std::span<const int> quantized);

struct FusedPreferenceGradient {
    Image gradient;
    std::vector<double> weights;
    std::vector<int> quantized;
};

/// (1/N) sum lambda_i grad s_i; the 1/N factor is dropped when divide_by_n is false.
Image positive_preference_grad(std::span<const PreferenceSignal> signals, std::span<const double> weights,
                               bool divide_by_n = true);

/// Quantize, weight and fuse in one go.
FusedPreferenceGradient fuse_positive(std::span<const PreferenceSignal> signals, bool divide_by_n = true);

}  // namespace cforge
