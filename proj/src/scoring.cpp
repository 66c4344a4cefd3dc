#include "gptd/scoring.hpp"

#include "gptd/error.hpp"
#include "gptd/io.hpp"
#include "gptd/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace gptd {

using nlohmann::json;

double NllTotal::perplexity() const {
    if (tokens == 0) throw InvalidInput("perplexity of an empty token stream is undefined");
    return std::exp(nll / static_cast<double>(tokens));
}

std::vector<std::vector<int>> scoring_windows(std::span<const int> tokens, const ModelConfig& config) {
    const size_t per_window = static_cast<size_t>(config.context_window) - 1;
    std::vector<std::vector<int>> out;
    for (size_t start = 0; start < tokens.size(); start += per_window) {
        const size_t end = std::min(tokens.size(), start + per_window);
        std::vector<int> w;
        w.reserve(end - start + 1);
        w.push_back(config.eos_id());
        w.insert(w.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start), tokens.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(std::move(w));
    }
    return out;
}

NllTotal transcript_nll(const Model& model, std::span<const int> tokens) {
    if (tokens.empty()) throw InvalidInput("cannot score an empty token sequence");
    NllTotal total;
    for (const auto& window : scoring_windows(tokens, model.config)) {
        const LogProbTrace trace = sequence_logprobs(model, window, 1);
        total.nll += trace.nll_sum;
        total.tokens += trace.size();
        ++total.chunks;
    }
    return total;
}

double transcript_ppl(const Model& model, const Tokenizer& tokenizer, const Transcript& transcript) {
    if (transcript.excluded || transcript.clean_text.empty()) {
        throw InvalidInput("transcript '" + transcript.transcript_id + "' is empty after preprocessing");
    }
    const auto ids = tokenizer.encode_ids(transcript.clean_text);
    if (ids.empty()) throw InvalidInput("transcript '" + transcript.transcript_id + "' tokenizes to nothing");
    return transcript_nll(model, ids).perplexity();
}

PairedScore combine_transcript_ppls(const std::string& participant_id, std::span<const double> base_ppls,
                                    std::span<const double> degraded_ppls) {
    if (base_ppls.empty() || base_ppls.size() != degraded_ppls.size()) {
        throw InvalidInput("participant '" + participant_id + "' needs matching, non-empty perplexity lists");
    }
    PairedScore s;
    s.participant_id = participant_id;
    for (double p : base_ppls) s.ppl_base += p;
    for (double p : degraded_ppls) s.ppl_degraded += p;
    s.ppl_base /= static_cast<double>(base_ppls.size());
    s.ppl_degraded /= static_cast<double>(degraded_ppls.size());
    s.ratio = s.ppl_base / s.ppl_degraded;
    s.difference = s.ppl_base - s.ppl_degraded;
    s.n_transcripts_averaged = base_ppls.size();
    return s;
}

std::vector<TokenizedParticipant> tokenize_corpus(const Corpus& corpus, const Tokenizer& tokenizer,
                                                  std::vector<Exclusion>& excluded) {
    std::vector<TokenizedParticipant> out;
    for (const auto& p : corpus.participants()) {
        TokenizedParticipant tp{p.id, p.label, p.mmse, {}};
        for (size_t idx : p.transcripts) {
            const auto& t = corpus.transcripts[idx];
            if (t.excluded) continue;
            auto ids = tokenizer.encode_ids(t.clean_text);
            if (!ids.empty()) tp.transcripts.push_back(std::move(ids));
        }
        if (tp.transcripts.empty()) {
            excluded.push_back({p.id, "no scoreable transcript after preprocessing"});
        } else {
            out.push_back(std::move(tp));
        }
    }
    return out;
}

PairedScore paired_score(const TokenizedParticipant& participant, const Model& base, const Model& degraded) {
    std::vector<double> b, d;
    bool chunked = false;
    for (const auto& ids : participant.transcripts) {
        const NllTotal nb = transcript_nll(base, ids);
        const NllTotal nd = transcript_nll(degraded, ids);
        chunked = chunked || nb.chunks > 1;
        b.push_back(nb.perplexity());
        d.push_back(nd.perplexity());
    }
    PairedScore s = combine_transcript_ppls(participant.id, b, d);
    s.label = participant.label;
    s.mmse = participant.mmse;
    s.chunked = chunked;
    return s;
}

PairedScore paired_score(const std::string& participant_id, std::span<const Transcript> transcripts,
                         const Tokenizer& tokenizer, const Model& base, const Model& degraded) {
    TokenizedParticipant p{participant_id, Label::Unknown, std::nullopt, {}};
    for (const auto& t : transcripts) {
        if (t.excluded) continue;
        auto ids = tokenizer.encode_ids(t.clean_text);
        if (!ids.empty()) p.transcripts.push_back(std::move(ids));
        p.label = t.label;
    }
    if (p.transcripts.empty()) {
        throw InvalidInput("participant '" + participant_id + "' has no scoreable transcript");
    }
    return paired_score(p, base, degraded);
}

ScoreTable score_corpus(const Corpus& corpus, const Tokenizer& tokenizer, const Model& base, const Model& degraded,
                        int jobs) {
    ScoreTable table;
    table.corpus_id = corpus.id;
    const auto participants = tokenize_corpus(corpus, tokenizer, table.excluded);
    table.rows.resize(participants.size());
    parallel_for(participants.size(), jobs,
                 [&](int, size_t i) { table.rows[i] = paired_score(participants[i], base, degraded); });
    return table;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string format_score_table(const ScoreTable& table, const json& provenance) {
    json header = {{"corpus_id", table.corpus_id}, {"spec", table.spec}};
    json excl = json::array();
    for (const auto& e : table.excluded) excl.push_back({{"participant_id", e.participant_id}, {"reason", e.reason}});
    header["excluded"] = excl;
    if (!provenance.is_null()) header["provenance"] = provenance;
    std::ostringstream out;
    out << "# " << header.dump() << "\n";
    out << "participant_id\tlabel\tmmse\tppl_base\tppl_degraded\tratio\tdifference\tn_transcripts\tchunked\n";
    for (const auto& r : table.rows) {
        out << r.participant_id << '\t' << to_string(r.label) << '\t' << (r.mmse ? fmt_double(*r.mmse) : "NA") << '\t'
            << fmt_double(r.ppl_base) << '\t' << fmt_double(r.ppl_degraded) << '\t' << fmt_double(r.ratio) << '\t'
            << fmt_double(r.difference) << '\t' << r.n_transcripts_averaged << '\t' << (r.chunked ? 1 : 0) << '\n';
    }
    return out.str();
}

ScoreTable parse_score_table(std::string_view text) {
    ScoreTable table;
    std::istringstream in{std::string(text)};
    std::string line;
    size_t line_no = 0;
    bool saw_columns = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            try {
                const json h = json::parse(line.substr(1));
                table.corpus_id = h.value("corpus_id", std::string());
                table.spec = h.value("spec", json(nullptr));
                for (const auto& e : h.value("excluded", json::array())) {
                    table.excluded.push_back({e.at("participant_id").get<std::string>(), e.at("reason").get<std::string>()});
                }
            } catch (const json::exception& e) {
                throw InvalidInput("score table header: " + std::string(e.what()));
            }
            continue;
        }
        if (!saw_columns) {
            saw_columns = true;
            continue;
        }
        std::vector<std::string> f;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '\t')) f.push_back(cell);
        if (f.size() < 8) throw InvalidInput("score table line " + std::to_string(line_no) + ": expected 9 columns");
        PairedScore r;
        try {
            r.participant_id = f[0];
            r.label = parse_label(f[1]);
            if (f[2] != "NA") r.mmse = std::stod(f[2]);
            r.ppl_base = std::stod(f[3]);
            r.ppl_degraded = std::stod(f[4]);
            r.ratio = std::stod(f[5]);
            r.difference = std::stod(f[6]);
            r.n_transcripts_averaged = std::stoul(f[7]);
            r.chunked = f.size() > 8 && f[8] == "1";
        } catch (const std::logic_error&) {
            throw InvalidInput("score table line " + std::to_string(line_no) + ": malformed number");
        }
        table.rows.push_back(std::move(r));
    }
    return table;
}

ScoreTable read_score_table(const std::filesystem::path& path) { return parse_score_table(io::read_text(path)); }

}  // namespace gptd
