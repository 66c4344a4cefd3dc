#pragma once

#include "gptd/engine.hpp"
#include "gptd/random.hpp"
#include "gptd/tokenizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace gptd {

// ---- generation -----------------------------------------------------------

struct GenConfig {
    int beams = 5;
    int min_new_tokens = 20;
    double top_p = 0.9;
    double repetition_penalty = 1.3;
    int max_new_tokens = 100;
    uint64_t seed = 0;  // beam search is deterministic; kept for the manifest

    void validate() const;
    nlohmann::json to_json() const;
    static GenConfig from_json(const nlohmann::json& j);
};

struct Hypothesis {
    std::vector<int> tokens;  // generated ids, end-of-text included when finished
    double logprob = 0.0;     // sum of per-step log q
    double score = 0.0;       // logprob / tokens.size()
    bool finished = false;    // ended with end-of-text
};

// Per-step distribution used by beam search and sampling:
// p = softmax(logits); p[eos] = 0 while `allow_eos` is false; p[t] /= penalty
// for every t in `seen`; renormalise; keep the smallest most-probable prefix
// whose mass reaches top_p (ties broken by lower id); renormalise again.
// Returns (token, log q) pairs, most probable first.
std::vector<std::pair<int, double>> nucleus(std::span<const float> logits, const std::unordered_set<int>& seen,
                                            double repetition_penalty, double top_p, bool allow_eos, int eos_id);

// Beam search over continuations of `prompt`. Candidates from all live beams
// are ranked by cumulative log q (ties: beam order, then token id). An
// end-of-text candidate is kept as finished only if it ranks within the
// first `beams`; the search stops once `beams` hypotheses have finished or
// max_new_tokens is reached, when live beams are added unfinished. Returns
// up to `beams` hypotheses ordered by length-normalised score.
std::vector<Hypothesis> beam_search(const Model& model, std::span<const int> prompt, const GenConfig& config);

struct GeneratedText {
    std::string text;  // decoded continuation without end-of-text
    Hypothesis hypothesis;
    bool empty() const;
};

std::vector<GeneratedText> generate(const Model& model, const Tokenizer& tokenizer, const std::string& prompt,
                                    const GenConfig& config);

struct PairedGeneration {
    std::string prompt;
    bool ok = false;
    size_t rank = 0;  // 0-based rank of the chosen pair
    std::string base_text;
    std::string degraded_text;
    std::vector<GeneratedText> base_hypotheses;
    std::vector<GeneratedText> degraded_hypotheses;
    std::string failure;

    nlohmann::json to_json() const;
};

// First rank at which both models produced non-empty text.
PairedGeneration pick_first_nonempty_pair(std::string prompt, std::vector<GeneratedText> base,
                                          std::vector<GeneratedText> degraded);
PairedGeneration paired_generate(const std::string& prompt, const Model& base, const Model& degraded,
                                 const Tokenizer& tokenizer, const GenConfig& config);

// Side-by-side plain-text table: prompt | base output | degraded output.
std::string render_generation_table(const std::vector<PairedGeneration>& rows, size_t column_width = 36);

struct SampleConfig {
    int min_new_tokens = 20;
    int max_new_tokens = 60;
    double top_p = 0.9;
    double repetition_penalty = 1.0;
};

// Nucleus sampling of one continuation; stops at end-of-text (not returned).
std::vector<int> sample_continuation(const Model& model, std::span<const int> prompt, const SampleConfig& config,
                                     Rng& rng);

// ---- lexical statistics ---------------------------------------------------

// Word tokenizer in the style of the Penn Treebank: punctuation split off,
// negation clitics as "n't", other clitics as "'s", "'re", ...
std::vector<std::string> word_tokenize(std::string_view text);

class FreqTable {
public:
    FreqTable() = default;
    explicit FreqTable(std::unordered_map<std::string, double> counts);

    // Delimited text (tab, comma or whitespace). With a header row, the
    // "Word" and "FREQcount" columns are used when present, else the first two.
    static FreqTable parse(std::string_view text);
    static FreqTable load(const std::filesystem::path& path);

    std::optional<double> count(const std::string& word) const;  // case-insensitive
    size_t size() const noexcept { return counts_.size(); }
    double total() const noexcept { return total_; }

private:
    std::unordered_map<std::string, double> counts_;
    double total_ = 0.0;
};

struct LexConfig {
    std::unordered_set<std::string> stopwords;  // lowercase
    double log_base = 0.0;                      // <= 0: natural log
    bool per_million = false;                   // divide counts by total/1e6 first

    // Standard English list plus the closed-class pronoun lexicon, from data files.
    static LexConfig defaults(const std::filesystem::path& data_dir);
    nlohmann::json to_json() const;
};

bool is_stopword(const std::string& token, const LexConfig& config);

struct LexSide {
    size_t words = 0;               // word tokens before filtering
    size_t punctuation_removed = 0;
    size_t stopwords_removed = 0;
    size_t kept = 0;                // after stopword removal
    size_t types = 0;
    double ttr = 0.0;               // types / kept
    size_t oov_count = 0;
    std::vector<double> log_freqs;  // one per in-vocabulary kept token
    std::optional<double> mean_log_freq;

    nlohmann::json to_json() const;
};

LexSide lexical_side(const std::vector<std::string>& texts, const FreqTable& table, const LexConfig& config);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;  // two-sided
};

// Throws UndefinedMetric for fewer than 2 values per side or zero pooled variance.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct LexReport {
    LexSide base;
    LexSide degraded;
    std::optional<WelchResult> welch;  // degraded vs base log frequencies
    std::string note;

    nlohmann::json to_json() const;
};

LexReport lexical_stats(const std::vector<std::string>& base_texts, const std::vector<std::string>& degraded_texts,
                        const FreqTable& table, const LexConfig& config);

// ---- saliency -------------------------------------------------------------

struct SaliencyMap {
    std::string model_id;
    std::vector<int> ids;
    std::vector<std::string> tokens;
    std::vector<double> weights;      // ||grad_i * x_i||_2
    std::vector<double> percentages;  // sum to 100
    int predicted = -1;
    std::string predicted_token;

    nlohmann::json to_json() const;
};

// weights -> percentages; all-zero weights share equally.
std::vector<double> to_percentages(std::span<const double> weights);

// Gradient x input for the model's top-1 next token after `ids` (used as is,
// no end-of-text prefix).
SaliencyMap saliency(const Model& model, std::span<const int> ids, const std::string& model_id,
                     const Tokenizer* tokenizer = nullptr);

// Central differences of the target logit with respect to every embedding
// component; the probes run on `jobs` threads.
std::vector<float> finite_difference_gradient(const Model& model, std::span<const float> embeddings, int target,
                                              float h = 1e-3f, int jobs = 1);

struct PromptPrediction {
    std::string prompt;
    int base_prediction = -1;
    int degraded_prediction = -1;
};

struct AlignedSaliency {
    bool aligned = false;
    size_t prompt_index = 0;
    std::optional<SaliencyMap> base;
    std::optional<SaliencyMap> degraded;
    std::vector<PromptPrediction> attempts;

    nlohmann::json to_json() const;
};

// First prompt on which both models predict the same next token.
AlignedSaliency aligned_saliency(const std::vector<std::string>& prompts, const Model& base, const Model& degraded,
                                 const Tokenizer& tokenizer);

std::string render_saliency_text(const SaliencyMap& map);
std::string render_saliency_html(const std::vector<SaliencyMap>& maps);

}  // namespace gptd
