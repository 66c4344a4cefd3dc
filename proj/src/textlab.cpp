#include "gptd/textlab.hpp"

#include "gptd/error.hpp"
#include "gptd/io.hpp"
#include "gptd/parallel.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace gptd {

using nlohmann::json;

void GenConfig::validate() const {
    if (beams < 1) throw InvalidInput("beams must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidInput("top_p must be in (0, 1]");
    if (!(repetition_penalty >= 1.0) || !std::isfinite(repetition_penalty)) {
        throw InvalidInput("repetition_penalty must be >= 1");
    }
    if (min_new_tokens < 0) throw InvalidInput("min_new_tokens must be >= 0");
    if (max_new_tokens < 1) throw InvalidInput("max_new_tokens must be >= 1");
    if (min_new_tokens > max_new_tokens) throw InvalidInput("min_new_tokens exceeds max_new_tokens");
}

json GenConfig::to_json() const {
    return {{"beams", beams},
            {"min_new_tokens", min_new_tokens},
            {"top_p", top_p},
            {"repetition_penalty", repetition_penalty},
            {"max_new_tokens", max_new_tokens},
            {"seed", seed},
            {"ranking", "length-normalised log-probability"}};
}

GenConfig GenConfig::from_json(const json& j) {
    GenConfig c;
    c.beams = j.value("beams", c.beams);
    c.min_new_tokens = j.value("min_new_tokens", c.min_new_tokens);
    c.top_p = j.value("top_p", c.top_p);
    c.repetition_penalty = j.value("repetition_penalty", c.repetition_penalty);
    c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

std::vector<std::pair<int, double>> nucleus(std::span<const float> logits, const std::unordered_set<int>& seen,
                                            double repetition_penalty, double top_p, bool allow_eos, int eos_id) {
    const std::vector<double> lp = log_softmax(logits);
    std::vector<double> p(lp.size());
    for (size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i]);
    if (!allow_eos && eos_id >= 0 && static_cast<size_t>(eos_id) < p.size()) p[static_cast<size_t>(eos_id)] = 0.0;
    if (repetition_penalty != 1.0) {
        for (int t : seen) {
            if (t >= 0 && static_cast<size_t>(t) < p.size()) p[static_cast<size_t>(t)] /= repetition_penalty;
        }
    }
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(total > 0.0)) throw InvalidInput("next-token distribution has no mass");

    std::vector<int> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return p[a] != p[b] ? p[a] > p[b] : a < b; });
    std::vector<std::pair<int, double>> out;
    double mass = 0.0;
    for (int t : order) {
        if (p[t] <= 0.0) break;
        const double q = p[t] / total;
        out.emplace_back(t, q);
        mass += q;
        if (mass >= top_p) break;
    }
    for (auto& [t, q] : out) q = std::log(q / mass);
    return out;
}

namespace {

void check_room(const Model& model, std::span<const int> prompt, int max_new_tokens) {
    if (prompt.empty()) throw InvalidInput("prompt is empty");
    if (prompt.size() + static_cast<size_t>(max_new_tokens) > static_cast<size_t>(model.config.context_window)) {
        throw InvalidInput("prompt of " + std::to_string(prompt.size()) + " tokens plus " + std::to_string(max_new_tokens) +
                           " new tokens exceeds the context window of " + std::to_string(model.config.context_window));
    }
}

struct Beam {
    DecoderState state;
    std::vector<float> logits;  // next-token logits after state
    std::vector<int> tokens;
    double logprob = 0.0;
};

struct Candidate {
    size_t beam;
    int token;
    double logprob;
};

Hypothesis make_hypothesis(std::vector<int> tokens, double logprob, bool finished) {
    Hypothesis h;
    h.tokens = std::move(tokens);
    h.logprob = logprob;
    h.score = logprob / static_cast<double>(std::max<size_t>(h.tokens.size(), 1));
    h.finished = finished;
    return h;
}

}  // namespace

std::vector<Hypothesis> beam_search(const Model& model, std::span<const int> prompt, const GenConfig& config) {
    config.validate();
    check_room(model, prompt, config.max_new_tokens);
    const int eos = model.config.eos_id();
    const size_t width = static_cast<size_t>(config.beams);

    std::vector<Beam> live;
    {
        Beam root{DecoderState(model), {}, {}, 0.0};
        root.logits = root.state.append(prompt);
        live.push_back(std::move(root));
    }
    std::vector<Hypothesis> finished;

    for (int step = 0; step < config.max_new_tokens && !live.empty(); ++step) {
        const bool allow_eos = step >= config.min_new_tokens;
        std::vector<Candidate> candidates;
        for (size_t b = 0; b < live.size(); ++b) {
            std::unordered_set<int> seen(prompt.begin(), prompt.end());
            seen.insert(live[b].tokens.begin(), live[b].tokens.end());
            for (const auto& [t, lq] : nucleus(live[b].logits, seen, config.repetition_penalty, config.top_p, allow_eos, eos)) {
                candidates.push_back({b, t, live[b].logprob + lq});
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            if (a.beam != b.beam) return a.beam < b.beam;
            return a.token < b.token;
        });

        std::vector<Beam> next;
        for (size_t rank = 0; rank < candidates.size() && next.size() < width; ++rank) {
            const Candidate& c = candidates[rank];
            std::vector<int> tokens = live[c.beam].tokens;
            tokens.push_back(c.token);
            if (c.token == eos) {
                if (rank < width) finished.push_back(make_hypothesis(std::move(tokens), c.logprob, true));
                continue;
            }
            Beam child{live[c.beam].state, {}, std::move(tokens), c.logprob};
            const int t = c.token;
            child.logits = child.state.append(std::span<const int>(&t, 1));
            next.push_back(std::move(child));
        }
        live = std::move(next);
        if (finished.size() >= width) break;
    }
    if (finished.size() < width) {
        for (auto& b : live) finished.push_back(make_hypothesis(std::move(b.tokens), b.logprob, false));
    }
    std::stable_sort(finished.begin(), finished.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    if (finished.size() > width) finished.resize(width);
    return finished;
}

bool GeneratedText::empty() const {
    return std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
}

std::vector<GeneratedText> generate(const Model& model, const Tokenizer& tokenizer, const std::string& prompt,
                                    const GenConfig& config) {
    const auto ids = tokenizer.encode_ids(prompt);
    std::vector<GeneratedText> out;
    for (auto& h : beam_search(model, ids, config)) {
        std::vector<int> body = h.tokens;
        if (!body.empty() && body.back() == model.config.eos_id()) body.pop_back();
        out.push_back({tokenizer.decode(body), std::move(h)});
    }
    return out;
}

namespace {

json hypotheses_json(const std::vector<GeneratedText>& hs) {
    json a = json::array();
    for (const auto& h : hs) {
        a.push_back({{"text", h.text},
                     {"tokens", h.hypothesis.tokens},
                     {"logprob", h.hypothesis.logprob},
                     {"score", h.hypothesis.score},
                     {"finished", h.hypothesis.finished}});
    }
    return a;
}

}  // namespace

json PairedGeneration::to_json() const {
    json j = {{"prompt", prompt}, {"ok", ok}};
    if (ok) {
        j["rank"] = rank;
        j["base_text"] = base_text;
        j["degraded_text"] = degraded_text;
    } else {
        j["failure"] = failure;
    }
    j["base_hypotheses"] = hypotheses_json(base_hypotheses);
    j["degraded_hypotheses"] = hypotheses_json(degraded_hypotheses);
    return j;
}

PairedGeneration pick_first_nonempty_pair(std::string prompt, std::vector<GeneratedText> base,
                                          std::vector<GeneratedText> degraded) {
    PairedGeneration g;
    g.prompt = std::move(prompt);
    g.base_hypotheses = std::move(base);
    g.degraded_hypotheses = std::move(degraded);
    const size_t n = std::min(g.base_hypotheses.size(), g.degraded_hypotheses.size());
    for (size_t r = 0; r < n; ++r) {
        if (!g.base_hypotheses[r].empty() && !g.degraded_hypotheses[r].empty()) {
            g.ok = true;
            g.rank = r;
            g.base_text = g.base_hypotheses[r].text;
            g.degraded_text = g.degraded_hypotheses[r].text;
            return g;
        }
    }
    g.failure = "no rank among " + std::to_string(n) + " has non-empty output from both models";
    return g;
}

PairedGeneration paired_generate(const std::string& prompt, const Model& base, const Model& degraded,
                                 const Tokenizer& tokenizer, const GenConfig& config) {
    return pick_first_nonempty_pair(prompt, generate(base, tokenizer, prompt, config),
                                    generate(degraded, tokenizer, prompt, config));
}

namespace {

std::vector<std::string> wrap(const std::string& text, size_t width) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string word, line;
    while (in >> word) {
        while (word.size() > width) {
            if (!line.empty()) {
                lines.push_back(line);
                line.clear();
            }
            lines.push_back(word.substr(0, width));
            word = word.substr(width);
        }
        if (line.empty()) {
            line = word;
        } else if (line.size() + 1 + word.size() <= width) {
            line += " " + word;
        } else {
            lines.push_back(line);
            line = word;
        }
    }
    if (!line.empty()) lines.push_back(line);
    if (lines.empty()) lines.emplace_back();
    return lines;
}

}  // namespace

std::string render_generation_table(const std::vector<PairedGeneration>& rows, size_t column_width) {
    const size_t w = std::max<size_t>(column_width, 8);
    std::ostringstream out;
    const std::string rule = "+" + std::string(w + 2, '-') + "+" + std::string(w + 2, '-') + "+" + std::string(w + 2, '-') + "+\n";
    auto emit = [&](const std::vector<std::string>& cells) {
        std::vector<std::vector<std::string>> cols;
        size_t height = 0;
        for (const auto& c : cells) {
            cols.push_back(wrap(c, w));
            height = std::max(height, cols.back().size());
        }
        for (size_t r = 0; r < height; ++r) {
            out << '|';
            for (const auto& col : cols) {
                const std::string s = r < col.size() ? col[r] : "";
                out << ' ' << s << std::string(w - s.size(), ' ') << " |";
            }
            out << '\n';
        }
        out << rule;
    };
    out << rule;
    emit({"Prompt", "GPT-2 output", "GPT-D output"});
    for (const auto& g : rows) {
        if (g.ok) {
            emit({g.prompt, g.base_text, g.degraded_text});
        } else {
            emit({g.prompt, "(failed: " + g.failure + ")", ""});
        }
    }
    return out.str();
}

std::vector<int> sample_continuation(const Model& model, std::span<const int> prompt, const SampleConfig& config,
                                     Rng& rng) {
    if (config.min_new_tokens < 0 || config.max_new_tokens < 1 || config.min_new_tokens > config.max_new_tokens) {
        throw InvalidInput("sampling needs 0 <= min_new_tokens <= max_new_tokens and max_new_tokens >= 1");
    }
    if (!(config.top_p > 0.0 && config.top_p <= 1.0)) throw InvalidInput("top_p must be in (0, 1]");
    if (!(config.repetition_penalty >= 1.0)) throw InvalidInput("repetition_penalty must be >= 1");
    check_room(model, prompt, config.max_new_tokens);
    const int eos = model.config.eos_id();
    DecoderState state(model);
    std::vector<float> logits = state.append(prompt);
    std::unordered_set<int> seen(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int step = 0; step < config.max_new_tokens; ++step) {
        const auto dist = nucleus(logits, seen, config.repetition_penalty, config.top_p, step >= config.min_new_tokens, eos);
        const double u = rng.uniform();
        double acc = 0.0;
        int chosen = dist.back().first;
        for (const auto& [t, lq] : dist) {
            acc += std::exp(lq);
            if (u < acc) {
                chosen = t;
                break;
            }
        }
        if (chosen == eos) break;
        out.push_back(chosen);
        seen.insert(chosen);
        if (step + 1 < config.max_new_tokens) logits = state.append(std::span<const int>(&chosen, 1));
    }
    return out;
}

// ---- lexical statistics ---------------------------------------------------

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) != 0; }

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool is_punctuation_token(const std::string& t) {
    return std::none_of(t.begin(), t.end(), [](unsigned char c) { return word_char(c); });
}

void split_clitic(const std::string& word, std::vector<std::string>& out) {
    const std::string lw = lower(word);
    if (lw.size() > 3 && lw.ends_with("n't")) {
        out.push_back(word.substr(0, word.size() - 3));
        out.push_back(word.substr(word.size() - 3));
        return;
    }
    const auto apos = word.find('\'');
    if (apos != std::string::npos && apos > 0) {
        out.push_back(word.substr(0, apos));
        out.push_back(word.substr(apos));
        return;
    }
    out.push_back(word);
}

}  // namespace

std::vector<std::string> word_tokenize(std::string_view text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (word_char(c)) {
            // letters/digits, joined by single internal hyphens or apostrophes
            size_t j = i;
            while (j < text.size()) {
                if (word_char(static_cast<unsigned char>(text[j]))) {
                    ++j;
                } else if ((text[j] == '-' || text[j] == '\'') && j + 1 < text.size() &&
                           word_char(static_cast<unsigned char>(text[j + 1]))) {
                    ++j;
                } else {
                    break;
                }
            }
            split_clitic(std::string(text.substr(i, j - i)), out);
            i = j;
            continue;
        }
        if (c == '\'' && i + 1 < text.size() && std::isalpha(static_cast<unsigned char>(text[i + 1]))) {
            // leading clitic such as 's after a space or a closing quote
            size_t j = i + 1;
            while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
            const std::string tok(text.substr(i, j - i));
            const std::string lt = lower(tok);
            if (lt == "'s" || lt == "'re" || lt == "'ve" || lt == "'m" || lt == "'ll" || lt == "'d" || lt == "'t") {
                out.push_back(tok);
                i = j;
                continue;
            }
        }
        // runs of identical punctuation ("...", "--") stay together
        size_t j = i + 1;
        while (j < text.size() && text[j] == text[i]) ++j;
        out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

FreqTable::FreqTable(std::unordered_map<std::string, double> counts) {
    for (auto& [w, c] : counts) {
        counts_[lower(w)] += c;
        total_ += c;
    }
}

FreqTable FreqTable::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::unordered_map<std::string, double> counts;
    int word_col = 0, count_col = 1;
    bool first = true;
    size_t line_no = 0;
    auto split = [](const std::string& l) {
        std::vector<std::string> f;
        const char delim = l.find('\t') != std::string::npos ? '\t' : (l.find(',') != std::string::npos ? ',' : ' ');
        std::string cell;
        if (delim == ' ') {
            std::istringstream ls(l);
            while (ls >> cell) f.push_back(cell);
        } else {
            std::istringstream ls(l);
            while (std::getline(ls, cell, delim)) f.push_back(cell);
        }
        for (auto& s : f) {
            while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '"')) s.pop_back();
            while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.erase(s.begin());
        }
        return f;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto f = split(line);
        if (first) {
            first = false;
            bool numeric = false;
            if (f.size() >= 2) {
                char* end = nullptr;
                std::strtod(f[1].c_str(), &end);
                numeric = end && *end == '\0' && !f[1].empty();
            }
            if (!numeric) {
                for (size_t c = 0; c < f.size(); ++c) {
                    const std::string h = lower(f[c]);
                    if (h == "word") word_col = static_cast<int>(c);
                    if (h == "freqcount" || h == "count") count_col = static_cast<int>(c);
                }
                continue;
            }
        }
        if (static_cast<int>(f.size()) <= std::max(word_col, count_col)) {
            throw InvalidInput("frequency table line " + std::to_string(line_no) + ": too few columns");
        }
        char* end = nullptr;
        const double c = std::strtod(f[static_cast<size_t>(count_col)].c_str(), &end);
        if (!end || *end != '\0' || !(c >= 0.0)) {
            throw InvalidInput("frequency table line " + std::to_string(line_no) + ": bad count '" +
                               f[static_cast<size_t>(count_col)] + "'");
        }
        counts[lower(f[static_cast<size_t>(word_col)])] += c;
    }
    if (counts.empty()) throw InvalidInput("frequency table is empty");
    return FreqTable(std::move(counts));
}

FreqTable FreqTable::load(const std::filesystem::path& path) { return parse(io::read_text(path)); }

std::optional<double> FreqTable::count(const std::string& word) const {
    auto it = counts_.find(lower(word));
    if (it == counts_.end() || it->second <= 0.0) return std::nullopt;
    return it->second;
}

LexConfig LexConfig::defaults(const std::filesystem::path& data_dir) {
    LexConfig c;
    for (const char* name : {"stopwords_en.txt", "closed_class_pronouns.txt"}) {
        for (const auto& l : io::read_lines(data_dir / "lexicon" / name)) {
            if (l.empty() || l[0] == '#') continue;
            c.stopwords.insert(lower(l));
        }
    }
    return c;
}

json LexConfig::to_json() const {
    std::vector<std::string> sorted(stopwords.begin(), stopwords.end());
    std::sort(sorted.begin(), sorted.end());
    return {{"stopwords", sorted},
            {"log_base", log_base > 0.0 ? json(log_base) : json("e")},
            {"per_million", per_million},
            {"clitic_rules", "n't and apostrophe-initial tokens are stopwords"}};
}

bool is_stopword(const std::string& token, const LexConfig& config) {
    const std::string t = lower(token);
    if (t == "n't" || (!t.empty() && t[0] == '\'')) return true;
    return config.stopwords.contains(t);
}

json LexSide::to_json() const {
    return {{"words", words},
            {"punctuation_removed", punctuation_removed},
            {"stopwords_removed", stopwords_removed},
            {"kept", kept},
            {"types", types},
            {"ttr", ttr},
            {"oov_count", oov_count},
            {"in_vocabulary", log_freqs.size()},
            {"mean_log_freq", mean_log_freq ? json(*mean_log_freq) : json(nullptr)}};
}

LexSide lexical_side(const std::vector<std::string>& texts, const FreqTable& table, const LexConfig& config) {
    if (table.size() == 0) throw InvalidInput("frequency table is empty");
    LexSide s;
    std::unordered_set<std::string> types;
    for (const auto& text : texts) {
        for (const auto& tok : word_tokenize(text)) {
            ++s.words;
            if (is_punctuation_token(tok)) {
                ++s.punctuation_removed;
                continue;
            }
            if (is_stopword(tok, config)) {
                ++s.stopwords_removed;
                continue;
            }
            ++s.kept;
            types.insert(lower(tok));
            const auto c = table.count(tok);
            if (!c) {
                ++s.oov_count;
                continue;
            }
            double lf = std::log(config.per_million ? *c / (table.total() / 1e6) : *c);
            if (config.log_base > 0.0) lf /= std::log(config.log_base);
            s.log_freqs.push_back(lf);
        }
    }
    s.types = types.size();
    if (s.kept == 0) throw InvalidInput("no tokens left after stopword removal");
    s.ttr = static_cast<double>(s.types) / static_cast<double>(s.kept);
    if (!s.log_freqs.empty()) {
        s.mean_log_freq = std::accumulate(s.log_freqs.begin(), s.log_freqs.end(), 0.0) / static_cast<double>(s.log_freqs.size());
    }
    return s;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw UndefinedMetric("Welch t-test needs at least 2 values per sample");
    auto moments = [](std::span<const double> x) {
        const double n = static_cast<double>(x.size());
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        return std::pair{m, ss / (n - 1.0)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double sa = va / na, sb = vb / nb;
    if (!(sa + sb > 0.0)) throw UndefinedMetric("Welch t-test is undefined when both samples have zero variance");
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    const boost::math::students_t dist(r.df);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    return r;
}

json LexReport::to_json() const {
    json j = {{"base", base.to_json()}, {"degraded", degraded.to_json()}};
    if (welch) {
        j["welch"] = {{"t", welch->t}, {"df", welch->df}, {"p_value", welch->p_value}, {"direction", "degraded minus base"}};
    } else {
        j["welch"] = nullptr;
    }
    if (!note.empty()) j["note"] = note;
    return j;
}

LexReport lexical_stats(const std::vector<std::string>& base_texts, const std::vector<std::string>& degraded_texts,
                        const FreqTable& table, const LexConfig& config) {
    if (base_texts.empty() || degraded_texts.empty()) throw InvalidInput("lexical statistics need texts from both models");
    LexReport r;
    r.base = lexical_side(base_texts, table, config);
    r.degraded = lexical_side(degraded_texts, table, config);
    std::vector<std::string> notes;
    if (!r.base.mean_log_freq) notes.push_back("all base tokens are out of vocabulary; mean frequency undefined");
    if (!r.degraded.mean_log_freq) notes.push_back("all degraded tokens are out of vocabulary; mean frequency undefined");
    try {
        r.welch = welch_t_test(r.degraded.log_freqs, r.base.log_freqs);
    } catch (const UndefinedMetric& e) {
        notes.emplace_back(e.what());
    }
    for (size_t i = 0; i < notes.size(); ++i) r.note += (i ? "; " : "") + notes[i];
    return r;
}

// ---- saliency -------------------------------------------------------------

std::vector<double> to_percentages(std::span<const double> weights) {
    std::vector<double> out(weights.size());
    if (weights.empty()) return out;
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (size_t i = 0; i < weights.size(); ++i) {
        out[i] = total > 0.0 ? 100.0 * weights[i] / total : 100.0 / static_cast<double>(weights.size());
    }
    return out;
}

json SaliencyMap::to_json() const {
    json toks = json::array();
    for (size_t i = 0; i < ids.size(); ++i) {
        toks.push_back({{"id", ids[i]},
                        {"token", i < tokens.size() ? tokens[i] : std::string()},
                        {"weight", weights[i]},
                        {"percent", percentages[i]}});
    }
    return {{"model", model_id}, {"predicted", predicted}, {"predicted_token", predicted_token}, {"tokens", toks}};
}

SaliencyMap saliency(const Model& model, std::span<const int> ids, const std::string& model_id, const Tokenizer* tokenizer) {
    if (ids.empty()) throw InvalidInput("saliency needs a non-empty prompt");
    if (ids.size() > static_cast<size_t>(model.config.context_window)) throw InvalidInput("prompt exceeds the context window");
    const int d = model.config.d_model;
    const auto logits = next_token_logits(model, ids);
    const int target = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    const auto emb = lookup_embeddings(model, ids);
    const auto g = logit_gradient_wrt_embeddings(model, emb, target);

    SaliencyMap m;
    m.model_id = model_id;
    m.ids.assign(ids.begin(), ids.end());
    m.predicted = target;
    for (size_t i = 0; i < ids.size(); ++i) {
        double ss = 0.0;
        for (int c = 0; c < d; ++c) {
            const size_t k = i * static_cast<size_t>(d) + static_cast<size_t>(c);
            const double v = static_cast<double>(g.grad[k]) * static_cast<double>(emb[k]);
            ss += v * v;
        }
        m.weights.push_back(std::sqrt(ss));
    }
    m.percentages = to_percentages(m.weights);
    if (tokenizer) {
        for (int id : ids) m.tokens.push_back(tokenizer->decode(std::span<const int>(&id, 1)));
        m.predicted_token = tokenizer->decode(std::span<const int>(&target, 1));
    } else {
        for (int id : ids) m.tokens.push_back(std::to_string(id));
        m.predicted_token = std::to_string(target);
    }
    return m;
}

std::vector<float> finite_difference_gradient(const Model& model, std::span<const float> embeddings, int target, float h,
                                              int jobs) {
    if (target < 0 || target >= model.config.vocab_size) throw InvalidInput("target token out of range");
    std::vector<float> grad(embeddings.size());
    parallel_for(embeddings.size(), jobs, [&](int, size_t k) {
        std::vector<float> e(embeddings.begin(), embeddings.end());
        e[k] = embeddings[k] + h;
        const double up = forward_logits_with_embedding_override(model, e)[static_cast<size_t>(target)];
        e[k] = embeddings[k] - h;
        const double down = forward_logits_with_embedding_override(model, e)[static_cast<size_t>(target)];
        grad[k] = static_cast<float>((up - down) / (2.0 * h));
    });
    return grad;
}

json AlignedSaliency::to_json() const {
    json a = json::array();
    for (const auto& p : attempts) {
        a.push_back({{"prompt", p.prompt}, {"base_prediction", p.base_prediction}, {"degraded_prediction", p.degraded_prediction}});
    }
    json j = {{"aligned", aligned}, {"attempts", a}};
    if (aligned) {
        j["prompt_index"] = prompt_index;
        j["base"] = base->to_json();
        j["degraded"] = degraded->to_json();
    }
    return j;
}

AlignedSaliency aligned_saliency(const std::vector<std::string>& prompts, const Model& base, const Model& degraded,
                                 const Tokenizer& tokenizer) {
    AlignedSaliency out;
    for (size_t i = 0; i < prompts.size(); ++i) {
        const auto ids = tokenizer.encode_ids(prompts[i]);
        if (ids.empty()) continue;
        auto argmax = [&](const Model& m) {
            const auto l = next_token_logits(m, ids);
            return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
        };
        PromptPrediction p{prompts[i], argmax(base), argmax(degraded)};
        out.attempts.push_back(p);
        if (p.base_prediction == p.degraded_prediction) {
            out.aligned = true;
            out.prompt_index = i;
            out.base = saliency(base, ids, "gpt2", &tokenizer);
            out.degraded = saliency(degraded, ids, "gpt-d", &tokenizer);
            return out;
        }
    }
    return out;
}

std::string render_saliency_text(const SaliencyMap& map) {
    std::ostringstream out;
    out << "model: " << map.model_id << "\npredicted: " << json(map.predicted_token).dump() << " (" << map.predicted << ")\n";
    for (size_t i = 0; i < map.ids.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%7.2f%%  ", map.percentages[i]);
        out << buf << json(map.tokens[i]).dump() << '\n';
    }
    return out.str();
}

namespace {

std::string html_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_saliency_html(const std::vector<SaliencyMap>& maps) {
    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>saliency</title>\n"
           "<style>body{font-family:sans-serif}span.t{display:inline-block;padding:2px 3px;margin:1px;"
           "border-radius:3px;white-space:pre}span.p{font-size:70%;color:#444;display:block;text-align:center}</style>"
           "</head><body>\n";
    for (const auto& m : maps) {
        double peak = 0.0;
        for (double p : m.percentages) peak = std::max(peak, p);
        out << "<h3>" << html_escape(m.model_id) << " &rarr; <code>" << html_escape(m.predicted_token) << "</code></h3>\n<div>";
        for (size_t i = 0; i < m.ids.size(); ++i) {
            const double a = peak > 0.0 ? m.percentages[i] / peak : 0.0;
            char style[64];
            std::snprintf(style, sizeof style, "background:rgba(200,40,40,%.3f)", a);
            char pct[32];
            std::snprintf(pct, sizeof pct, "%.1f%%", m.percentages[i]);
            out << "<span class=\"t\" style=\"" << style << "\">" << html_escape(m.tokens[i]) << "<span class=\"p\">" << pct
                << "</span></span>";
        }
        out << "</div>\n";
    }
    out << "</body></html>\n";
    return out.str();
}

}  // namespace gptd
