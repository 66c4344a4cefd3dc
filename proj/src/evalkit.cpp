#include "gptd/evalkit.hpp"

#include "gptd/error.hpp"
#include "gptd/parallel.hpp"
#include "gptd/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>

namespace gptd {

using nlohmann::json;

namespace {

void require_both_classes(std::span<const LabeledScore> scores, const char* metric) {
    size_t cases = 0;
    for (const auto& s : scores) cases += s.is_case ? 1 : 0;
    if (cases == 0 || cases == scores.size()) {
        throw UndefinedMetric(std::string(metric) + " is undefined: scores must include at least one case and one control");
    }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

double auc(std::span<const LabeledScore> scores) {
    require_both_classes(scores, "AUC");
    std::vector<LabeledScore> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
    // Sum of mid-ranks of the cases (ranks are 1-based; ties share the mean rank).
    double rank_sum = 0.0;
    size_t n_cases = 0;
    for (size_t i = 0; i < sorted.size();) {
        size_t j = i;
        while (j < sorted.size() && sorted[j].value == sorted[i].value) ++j;
        const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (size_t k = i; k < j; ++k) {
            if (sorted[k].is_case) {
                rank_sum += mid_rank;
                ++n_cases;
            }
        }
        i = j;
    }
    const double n1 = static_cast<double>(n_cases);
    const double n0 = static_cast<double>(sorted.size() - n_cases);
    return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

EerPoint acc_at_eer(std::span<const LabeledScore> scores) {
    require_both_classes(scores, "accuracy at EER");
    std::vector<LabeledScore> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
    int64_t n_cases = 0;
    for (const auto& s : sorted) n_cases += s.is_case ? 1 : 0;
    const int64_t n_controls = static_cast<int64_t>(sorted.size()) - n_cases;

    // Sweep thresholds upward. At -inf everything is predicted case.
    int64_t false_pos = n_controls;  // controls above threshold
    int64_t false_neg = 0;           // cases at or below threshold
    auto imbalance = [&](int64_t fp, int64_t fn) { return std::llabs(fp * n_cases - fn * n_controls); };

    int64_t best = imbalance(false_pos, false_neg);
    EerPoint out{0.0, -std::numeric_limits<double>::infinity(), 0.0, 0.0};
    int64_t best_fp = false_pos, best_fn = false_neg;
    for (size_t i = 0; i < sorted.size();) {
        size_t j = i;
        while (j < sorted.size() && sorted[j].value == sorted[i].value) {
            (sorted[j].is_case ? false_neg : false_pos) += sorted[j].is_case ? 1 : -1;
            ++j;
        }
        const double threshold = j < sorted.size() ? sorted[i].value + (sorted[j].value - sorted[i].value) / 2.0
                                                   : std::numeric_limits<double>::infinity();
        const int64_t cur = imbalance(false_pos, false_neg);
        if (cur < best) {
            best = cur;
            out.threshold = threshold;
            best_fp = false_pos;
            best_fn = false_neg;
        }
        i = j;
    }
    out.fpr = static_cast<double>(best_fp) / static_cast<double>(n_controls);
    out.fnr = static_cast<double>(best_fn) / static_cast<double>(n_cases);
    out.accuracy = static_cast<double>(static_cast<int64_t>(sorted.size()) - best_fp - best_fn) /
                   static_cast<double>(sorted.size());
    return out;
}

double pearson(std::span<const std::pair<double, double>> xy) {
    if (xy.size() < 3) throw UndefinedMetric("correlation needs at least 3 pairs");
    // Welford-style co-moment accumulation.
    double mean_x = 0.0, mean_y = 0.0, m2x = 0.0, m2y = 0.0, cxy = 0.0;
    double n = 0.0;
    for (const auto& [x, y] : xy) {
        n += 1.0;
        const double dx = x - mean_x;
        const double dy = y - mean_y;
        mean_x += dx / n;
        mean_y += dy / n;
        m2x += dx * (x - mean_x);
        m2y += dy * (y - mean_y);
        cxy += dx * (y - mean_y);
    }
    if (m2x <= 0.0 || m2y <= 0.0) throw UndefinedMetric("correlation is undefined for zero variance");
    return std::clamp(cxy / std::sqrt(m2x * m2y), -1.0, 1.0);
}

json EvalReport::to_json() const {
    json j = {{"auc", auc},
              {"acc_at_eer", acc_at_eer},
              {"eer_threshold", std::isfinite(eer_threshold) ? json(eer_threshold) : json(eer_threshold > 0 ? "inf" : "-inf")},
              {"pearson_mmse", optional_json(pearson_mmse)},
              {"n_cases", n_cases},
              {"n_controls", n_controls},
              {"n_without_mmse", n_without_mmse},
              {"corpus_id", corpus_id},
              {"pattern", pattern},
              {"pattern_label", layer_set_string(pattern)},
              {"spec", spec}};
    if (!train_corpus_id.empty()) j["train_corpus_id"] = train_corpus_id;
    return j;
}

EvalReport evaluate(std::span<const PairedScore> rows) {
    EvalReport r;
    std::vector<LabeledScore> scores;
    std::vector<std::pair<double, double>> mmse;
    for (const auto& row : rows) {
        if (row.label == Label::Unknown) continue;
        const bool is_case = row.label == Label::Dementia;
        scores.push_back({row.ratio, is_case});
        (is_case ? r.n_cases : r.n_controls) += 1;
        if (row.mmse) {
            mmse.emplace_back(row.ratio, *row.mmse);
        } else {
            ++r.n_without_mmse;
        }
    }
    r.auc = auc(scores);
    const EerPoint eer = acc_at_eer(scores);
    r.acc_at_eer = eer.accuracy;
    r.eer_threshold = eer.threshold;
    if (!mmse.empty()) {
        try {
            r.pearson_mmse = pearson(mmse);
        } catch (const UndefinedMetric&) {
            r.pearson_mmse.reset();
        }
    }
    return r;
}

PatternScorer::PatternScorer(const Model& base, std::vector<TokenizedParticipant> participants,
                             DegradationSpec base_spec, int jobs, bool prefix_cache)
    : base_(&base),
      participants_(std::move(participants)),
      base_spec_(std::move(base_spec)),
      jobs_(std::max(jobs, 1)),
      prefix_cache_(prefix_cache && base_spec_.location == MaskLocation::AttentionValueColumns) {
    base_spec_.layers.clear();
    base_spec_.validate(base.config.n_layers);
    for (const auto& p : participants_) {
        if (p.transcripts.empty()) throw InvalidInput("participant '" + p.id + "' has no scoreable transcript");
    }
    windows_.resize(participants_.size());
    parallel_for(participants_.size(), jobs_, [&](int, size_t i) {
        for (const auto& ids : participants_[i].transcripts) {
            if (ids.empty()) throw InvalidInput("participant '" + participants_[i].id + "' has an empty transcript");
            Transcript t;
            for (auto& w : scoring_windows(ids, base.config)) {
                const LogProbTrace trace = sequence_logprobs(base, w, 1);
                t.push_back({std::move(w), trace.nll_sum, trace.size()});
            }
            windows_[i].push_back(std::move(t));
        }
    });
}

std::vector<PairedScore> PatternScorer::score(const LayerSet& layers) const { return score_all({layers}).front(); }

std::vector<std::vector<PairedScore>> PatternScorer::score_all(const std::vector<LayerSet>& patterns) const {
    const int n_layers = base_->config.n_layers;
    std::vector<DegradationSpec> specs;
    for (const auto& p : patterns) {
        specs.push_back(base_spec_.with_layers(p));
        specs.back().validate(n_layers);
    }
    std::vector<std::vector<PairedScore>> out(patterns.size(), std::vector<PairedScore>(participants_.size()));
    const int workers = static_cast<int>(std::min<size_t>(static_cast<size_t>(jobs_), std::max<size_t>(participants_.size(), 1)));
    std::vector<std::optional<Model>> models(static_cast<size_t>(workers));

    parallel_for(participants_.size(), workers, [&](int w, size_t i) {
        auto& model = models[static_cast<size_t>(w)];
        if (!model) model.emplace(*base_);
        const auto& transcripts = windows_[i];

        // checkpoints[t][win][l]: residual stream entering layer l under base weights.
        std::vector<std::vector<std::vector<LayerCheckpoint>>> checkpoints;
        if (prefix_cache_) {
            for (const auto& t : transcripts) {
                auto& per_window = checkpoints.emplace_back();
                for (const auto& win : t) {
                    auto& cps = per_window.emplace_back();
                    cps.push_back(run_until(*base_, win.ids, 0));
                    for (int l = 1; l < n_layers; ++l) cps.push_back(advance(*base_, cps.back(), l));
                }
            }
        }

        for (size_t p = 0; p < patterns.size(); ++p) {
            const bool unmasked = specs[p].location == MaskLocation::AttentionValueColumns && patterns[p].empty();
            std::optional<MaskSession> session;
            if (!unmasked) session.emplace(*model, specs[p]);
            const int lowest = patterns[p].empty() ? 0 : *std::min_element(patterns[p].begin(), patterns[p].end());

            std::vector<double> base_ppl, degraded_ppl;
            bool chunked = false;
            for (size_t t = 0; t < transcripts.size(); ++t) {
                NllTotal b, d;
                chunked = chunked || transcripts[t].size() > 1;
                for (size_t k = 0; k < transcripts[t].size(); ++k) {
                    const Window& win = transcripts[t][k];
                    b += NllTotal{win.base_nll, win.tokens, 1};
                    if (unmasked) {
                        d += NllTotal{win.base_nll, win.tokens, 1};
                        continue;
                    }
                    const LogProbTrace trace = prefix_cache_
                                                   ? resume_logprobs(*model, checkpoints[t][k][static_cast<size_t>(lowest)], win.ids, 1)
                                                   : sequence_logprobs(*model, win.ids, 1);
                    d += NllTotal{trace.nll_sum, trace.size(), 1};
                }
                base_ppl.push_back(b.perplexity());
                degraded_ppl.push_back(d.perplexity());
            }
            PairedScore s = combine_transcript_ppls(participants_[i].id, base_ppl, degraded_ppl);
            s.label = participants_[i].label;
            s.mmse = participants_[i].mmse;
            s.chunked = chunked;
            out[p][i] = std::move(s);
        }
    });
    return out;
}

json SearchResult::to_json() const {
    json rows = json::array();
    for (const auto& r : ranked) {
        rows.push_back({{"layers", r.layers}, {"pattern", layer_set_string(r.layers)}, {"auc", r.auc},
                        {"enumeration_index", r.enumeration_index}});
    }
    return {{"strategy", to_string(strategy)},
            {"n_patterns", ranked.size()},
            {"winner", {{"layers", winner.layers}, {"pattern", layer_set_string(winner.layers)}, {"auc", winner.auc}}},
            {"tie_break", tie_break},
            {"ranked", rows}};
}

namespace {

std::vector<LabeledScore> labeled_subset(const std::vector<PairedScore>& rows, std::span<const size_t> subset) {
    std::vector<LabeledScore> out;
    for (size_t i : subset) {
        if (rows[i].label == Label::Unknown) continue;
        out.push_back({rows[i].ratio, rows[i].label == Label::Dementia});
    }
    return out;
}

bool pattern_before(const PatternRow& a, const PatternRow& b) {
    if (a.auc != b.auc) return a.auc > b.auc;
    if (a.layers.size() != b.layers.size()) return a.layers.size() < b.layers.size();
    return a.layers < b.layers;
}

}  // namespace

SearchResult select_pattern(PatternStrategy strategy, const std::vector<LayerSet>& patterns,
                            const std::vector<std::vector<PairedScore>>& scores, std::span<const size_t> subset) {
    SearchResult result;
    result.strategy = strategy;
    for (size_t p = 0; p < patterns.size(); ++p) {
        const auto labeled = labeled_subset(scores[p], subset);
        double value;
        try {
            value = auc(labeled);
        } catch (const UndefinedMetric& e) {
            throw UndefinedMetric("pattern " + layer_set_string(patterns[p]) + ": " + e.what());
        }
        result.ranked.push_back({patterns[p], value, p});
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(), pattern_before);
    result.winner = result.ranked.front();
    size_t tied = 0;
    for (const auto& r : result.ranked) tied += r.auc == result.winner.auc ? 1 : 0;
    if (tied > 1) {
        size_t same_size = 0;
        for (const auto& r : result.ranked) {
            same_size += (r.auc == result.winner.auc && r.layers.size() == result.winner.layers.size()) ? 1 : 0;
        }
        result.tie_break.push_back(std::to_string(tied) + " patterns share the best AUC");
        result.tie_break.push_back(same_size > 1 ? "fewest layers left " + std::to_string(same_size) +
                                                       "; lexicographically smallest layer list chosen"
                                                 : "fewest layers decided");
    }
    return result;
}

SearchResult search_patterns(const PatternScorer& scorer, PatternStrategy strategy) {
    const auto patterns = enumerate_pattern(strategy, scorer.config().n_layers);
    const auto scores = scorer.score_all(patterns);
    std::vector<size_t> all(scorer.participants().size());
    std::iota(all.begin(), all.end(), size_t{0});
    return select_pattern(strategy, patterns, scores, all);
}

std::vector<std::vector<size_t>> kfold_assignment(size_t n, size_t k, uint64_t seed) {
    if (k < 2) throw InvalidInput("k must be at least 2");
    if (n < k) throw InvalidInput("cannot split " + std::to_string(n) + " participants into " + std::to_string(k) + " folds");
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<std::vector<size_t>> folds(k);
    size_t pos = 0;
    for (size_t f = 0; f < k; ++f) {
        const size_t size = n / k + (f < n % k ? 1 : 0);
        folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        std::sort(folds[f].begin(), folds[f].end());
        pos += size;
    }
    return folds;
}

namespace {

MeanSd summarize(const std::vector<std::optional<double>>& values) {
    MeanSd out;
    double sum = 0.0;
    for (const auto& v : values) {
        if (!v) continue;
        sum += *v;
        ++out.n;
    }
    if (out.n == 0) return out;
    const double mean = sum / static_cast<double>(out.n);
    double ss = 0.0;
    for (const auto& v : values) {
        if (v) ss += (*v - mean) * (*v - mean);
    }
    out.mean = mean;
    out.sd = std::sqrt(ss / static_cast<double>(out.n));
    return out;
}

json mean_sd_json(const MeanSd& m) {
    return {{"mean", optional_json(m.mean)}, {"sd", optional_json(m.sd)}, {"n", m.n}};
}

}  // namespace

json CVResult::to_json() const {
    json fs = json::array();
    for (const auto& f : folds) {
        fs.push_back({{"fold", f.fold},
                      {"test_participants", f.test_participants},
                      {"winner", {{"layers", f.winner.layers}, {"pattern", layer_set_string(f.winner.layers)}, {"train_auc", f.winner.auc}}},
                      {"test_auc", optional_json(f.test_auc)},
                      {"test_acc", optional_json(f.test_acc)},
                      {"test_corr", optional_json(f.test_corr)},
                      {"note", f.note}});
    }
    return {{"k", k},
            {"seed", seed},
            {"strategy", to_string(strategy)},
            {"folds", fs},
            {"auc", mean_sd_json(auc)},
            {"acc", mean_sd_json(acc)},
            {"corr", mean_sd_json(corr)}};
}

CVResult cross_validate(const PatternScorer& scorer, PatternStrategy strategy, size_t k, uint64_t seed) {
    const auto& participants = scorer.participants();
    CVResult result;
    result.k = k;
    result.seed = seed;
    result.strategy = strategy;
    const auto folds = kfold_assignment(participants.size(), k, seed);
    const auto patterns = enumerate_pattern(strategy, scorer.config().n_layers);
    const auto scores = scorer.score_all(patterns);

    std::vector<std::optional<double>> aucs, accs, corrs;
    for (size_t f = 0; f < folds.size(); ++f) {
        std::vector<size_t> train;
        std::vector<bool> in_test(participants.size(), false);
        for (size_t i : folds[f]) in_test[i] = true;
        for (size_t i = 0; i < participants.size(); ++i) {
            if (!in_test[i]) train.push_back(i);
        }
        FoldResult fr;
        fr.fold = f;
        for (size_t i : folds[f]) fr.test_participants.push_back(participants[i].id);
        try {
            fr.winner = select_pattern(strategy, patterns, scores, train).winner;
        } catch (const UndefinedMetric& e) {
            throw UndefinedMetric("fold " + std::to_string(f) + ": training split lacks a class (" + e.what() + ")");
        }
        size_t winner_index = 0;
        while (patterns[winner_index] != fr.winner.layers) ++winner_index;
        const auto& rows = scores[winner_index];

        const auto labeled = labeled_subset(rows, folds[f]);
        try {
            fr.test_auc = auc(labeled);
            fr.test_acc = acc_at_eer(labeled).accuracy;
        } catch (const UndefinedMetric&) {
            fr.note = "test fold holds a single class; AUC and accuracy undefined";
        }
        std::vector<std::pair<double, double>> xy;
        for (size_t i : folds[f]) {
            if (rows[i].label != Label::Unknown && rows[i].mmse) xy.emplace_back(rows[i].ratio, *rows[i].mmse);
        }
        if (!xy.empty()) {
            try {
                fr.test_corr = pearson(xy);
            } catch (const UndefinedMetric& e) {
                if (!fr.note.empty()) fr.note += "; ";
                fr.note += std::string("correlation undefined: ") + e.what();
            }
        }
        aucs.push_back(fr.test_auc);
        accs.push_back(fr.test_acc);
        corrs.push_back(fr.test_corr);
        result.folds.push_back(std::move(fr));
    }
    result.auc = summarize(aucs);
    result.acc = summarize(accs);
    result.corr = summarize(corrs);
    return result;
}

EvalReport cross_dataset(const PatternScorer& train, const PatternScorer& test, PatternStrategy strategy,
                         const std::string& train_id, const std::string& test_id, SearchResult* search_out) {
    if (!(train.base_spec() == test.base_spec())) throw InvalidInput("train and test scorers use different specs");
    SearchResult search = search_patterns(train, strategy);
    const auto rows = test.score(search.winner.layers);
    EvalReport report = evaluate(rows);
    report.corpus_id = test_id;
    report.train_corpus_id = train_id;
    report.pattern = search.winner.layers;
    report.spec = test.base_spec().with_layers(search.winner.layers).to_json();
    if (search_out) *search_out = std::move(search);
    return report;
}

namespace {

std::string fmt(const std::optional<double>& v, int precision = 3) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
    return buf;
}

std::string fmt_mean_sd(const MeanSd& m) {
    if (!m.mean) return "n/a";
    return fmt(m.mean) + " (" + fmt(m.sd) + ")";
}

std::string pad(std::string s, size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

std::string render(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths(header.size());
    for (size_t c = 0; c < header.size(); ++c) {
        widths[c] = header[c].size();
        for (const auto& r : rows) widths[c] = std::max(widths[c], r[c].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (size_t c = 0; c < cells.size(); ++c) out << (c ? "  " : "") << pad(cells[c], c + 1 < cells.size() ? widths[c] : 0);
        out << '\n';
    };
    line(header);
    std::vector<std::string> rule;
    for (size_t w : widths) rule.emplace_back(w, '-');
    line(rule);
    for (const auto& r : rows) line(r);
    return out.str();
}

}  // namespace

std::string render_cv_table(const std::vector<std::pair<std::string, CVResult>>& rows) {
    std::vector<std::vector<std::string>> body;
    for (const auto& [name, cv] : rows) {
        body.push_back({name, to_string(cv.strategy), std::to_string(cv.k), fmt_mean_sd(cv.auc), fmt_mean_sd(cv.acc),
                        fmt_mean_sd(cv.corr)});
    }
    return render({"Dataset", "Strategy", "k", "AUC mean (SD)", "ACC mean (SD)", "CORR mean (SD)"}, body);
}

std::string render_eval_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::vector<std::vector<std::string>> body;
    for (const auto& [name, r] : rows) {
        body.push_back({name, layer_set_string(r.pattern), fmt(r.auc), fmt(r.acc_at_eer), fmt(r.pearson_mmse),
                        std::to_string(r.n_cases) + "/" + std::to_string(r.n_controls)});
    }
    return render({"Setting", "Layers", "AUC", "ACC", "CORR", "cases/controls"}, body);
}

}  // namespace gptd
