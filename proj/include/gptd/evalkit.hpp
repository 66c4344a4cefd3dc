#pragma once

#include "gptd/scoring.hpp"
#include "gptd/surgery.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gptd {

struct LabeledScore {
    double value = 0.0;
    bool is_case = false;
};

// Mann-Whitney AUC: share of (case, control) pairs with case > control, ties 0.5.
// Throws UndefinedMetric unless both classes are present.
double auc(std::span<const LabeledScore> scores);

struct EerPoint {
    double accuracy = 0.0;
    double threshold = 0.0;  // predict case when value > threshold
    double fpr = 0.0;
    double fnr = 0.0;
};

// Threshold among midpoints of adjacent distinct values and +-infinity that
// minimises |FPR - FNR|; ties go to the lower threshold.
EerPoint acc_at_eer(std::span<const LabeledScore> scores);

// Product-moment correlation. Throws UndefinedMetric for fewer than 3 pairs
// or zero variance in either variable.
double pearson(std::span<const std::pair<double, double>> xy);

struct EvalReport {
    double auc = 0.0;
    double acc_at_eer = 0.0;
    double eer_threshold = 0.0;
    std::optional<double> pearson_mmse;
    size_t n_cases = 0;
    size_t n_controls = 0;
    size_t n_without_mmse = 0;
    std::string corpus_id;
    std::string train_corpus_id;  // cross-dataset runs only
    LayerSet pattern;             // layers of the evaluated spec
    nlohmann::json spec;

    nlohmann::json to_json() const;
};

// Participants labelled unknown are ignored.
EvalReport evaluate(std::span<const PairedScore> rows);

// Degraded-model scores for every participant under many layer subsets of
// one spec. Base perplexities are computed once. Work is spread over
// participants; each worker owns a model copy and masks it in place per
// pattern. With prefix caching the residual stream below the lowest masked
// layer is reused, which is bit-identical to recomputing it.
class PatternScorer {
public:
    PatternScorer(const Model& base, std::vector<TokenizedParticipant> participants, DegradationSpec base_spec,
                  int jobs = 1, bool prefix_cache = true);

    const std::vector<TokenizedParticipant>& participants() const noexcept { return participants_; }
    const DegradationSpec& base_spec() const noexcept { return base_spec_; }
    const ModelConfig& config() const noexcept { return base_->config; }

    // One row per participant, in participants() order.
    std::vector<PairedScore> score(const LayerSet& layers) const;
    // Result i belongs to patterns[i].
    std::vector<std::vector<PairedScore>> score_all(const std::vector<LayerSet>& patterns) const;

private:
    struct Window {
        std::vector<int> ids;
        double base_nll = 0.0;
        size_t tokens = 0;
    };
    using Transcript = std::vector<Window>;

    const Model* base_;
    std::vector<TokenizedParticipant> participants_;
    DegradationSpec base_spec_;
    int jobs_;
    bool prefix_cache_;
    std::vector<std::vector<Transcript>> windows_;  // per participant, per transcript
};

struct PatternRow {
    LayerSet layers;
    double auc = 0.0;
    size_t enumeration_index = 0;
};

struct SearchResult {
    PatternStrategy strategy = PatternStrategy::Cumulative;
    std::vector<PatternRow> ranked;  // best first
    PatternRow winner;
    std::vector<std::string> tie_break;  // how the winner was separated from equal-AUC rows

    nlohmann::json to_json() const;
};

// Winner: highest AUC, then fewer layers, then lexicographically smallest layer list.
SearchResult select_pattern(PatternStrategy strategy, const std::vector<LayerSet>& patterns,
                            const std::vector<std::vector<PairedScore>>& scores, std::span<const size_t> subset);

SearchResult search_patterns(const PatternScorer& scorer, PatternStrategy strategy);

struct FoldResult {
    size_t fold = 0;
    std::vector<std::string> test_participants;
    PatternRow winner;  // training AUC
    std::optional<double> test_auc;
    std::optional<double> test_acc;
    std::optional<double> test_corr;
    std::string note;
};

struct MeanSd {
    std::optional<double> mean;
    std::optional<double> sd;  // population standard deviation
    size_t n = 0;
};

struct CVResult {
    size_t k = 5;
    uint64_t seed = 0;
    PatternStrategy strategy = PatternStrategy::Cumulative;
    std::vector<FoldResult> folds;
    MeanSd auc, acc, corr;

    nlohmann::json to_json() const;
};

// Shuffles participant indices with `seed` and deals them into k folds whose
// sizes differ by at most one (the first n % k folds get the extra member).
std::vector<std::vector<size_t>> kfold_assignment(size_t n, size_t k, uint64_t seed);

CVResult cross_validate(const PatternScorer& scorer, PatternStrategy strategy, size_t k, uint64_t seed);

// Winner chosen on `train`, then scored on `test` with the same base spec.
EvalReport cross_dataset(const PatternScorer& train, const PatternScorer& test, PatternStrategy strategy,
                         const std::string& train_id, const std::string& test_id, SearchResult* search_out = nullptr);

// Plain-text summary tables.
std::string render_cv_table(const std::vector<std::pair<std::string, CVResult>>& rows);
std::string render_eval_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace gptd
