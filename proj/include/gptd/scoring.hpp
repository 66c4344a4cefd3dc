#pragma once

#include "gptd/corpus.hpp"
#include "gptd/engine.hpp"
#include "gptd/tokenizer.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gptd {

// Summed negative log-likelihood of a token stream.
struct NllTotal {
    double nll = 0.0;
    size_t tokens = 0;
    size_t chunks = 0;

    double perplexity() const;
    NllTotal& operator+=(const NllTotal& o) {
        nll += o.nll;
        tokens += o.tokens;
        chunks += o.chunks;
        return *this;
    }
};

// Splits text tokens into scoring windows: each window is end-of-text followed
// by at most context_window - 1 tokens, and windows do not overlap.
std::vector<std::vector<int>> scoring_windows(std::span<const int> tokens, const ModelConfig& config);

// NLL over all windows; every text token is scored exactly once.
NllTotal transcript_nll(const Model& model, std::span<const int> tokens);

// exp(mean NLL) of a preprocessed transcript. Throws InvalidInput when the
// transcript is excluded or tokenizes to nothing.
double transcript_ppl(const Model& model, const Tokenizer& tokenizer, const Transcript& transcript);

struct PairedScore {
    std::string participant_id;
    Label label = Label::Unknown;
    std::optional<double> mmse;
    double ppl_base = 0.0;
    double ppl_degraded = 0.0;
    double ratio = 0.0;       // ppl_base / ppl_degraded
    double difference = 0.0;  // ppl_base - ppl_degraded
    size_t n_transcripts_averaged = 0;
    bool chunked = false;  // some transcript needed more than one window
};

// Averages per-transcript perplexities under each model, then takes ratio and difference.
PairedScore combine_transcript_ppls(const std::string& participant_id, std::span<const double> base_ppls,
                                    std::span<const double> degraded_ppls);

struct Exclusion {
    std::string participant_id;
    std::string reason;
};

struct TokenizedParticipant {
    std::string id;
    Label label = Label::Unknown;
    std::optional<double> mmse;
    std::vector<std::vector<int>> transcripts;  // scoreable transcripts only
};

// Participants whose transcripts are all empty go to `excluded`.
std::vector<TokenizedParticipant> tokenize_corpus(const Corpus& corpus, const Tokenizer& tokenizer,
                                                  std::vector<Exclusion>& excluded);

PairedScore paired_score(const TokenizedParticipant& participant, const Model& base, const Model& degraded);
PairedScore paired_score(const std::string& participant_id, std::span<const Transcript> transcripts,
                         const Tokenizer& tokenizer, const Model& base, const Model& degraded);

struct ScoreTable {
    std::string corpus_id;
    nlohmann::json spec;  // serialized DegradationSpec, or null
    std::vector<PairedScore> rows;
    std::vector<Exclusion> excluded;
};

ScoreTable score_corpus(const Corpus& corpus, const Tokenizer& tokenizer, const Model& base, const Model& degraded,
                        int jobs = 1);

// Tab-separated, '#'-prefixed JSON header line carrying corpus id, spec and exclusions.
std::string format_score_table(const ScoreTable& table, const nlohmann::json& provenance = nullptr);
ScoreTable parse_score_table(std::string_view text);
ScoreTable read_score_table(const std::filesystem::path& path);

}  // namespace gptd
