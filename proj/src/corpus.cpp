#include "gptd/corpus.hpp"

#include "gptd/error.hpp"
#include "gptd/io.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

namespace gptd {

using nlohmann::json;

std::string to_string(Label l) {
    switch (l) {
        case Label::Dementia: return "dementia";
        case Label::Control: return "control";
        case Label::Unknown: return "unknown";
    }
    return "unknown";
}

Label parse_label(const std::string& s) {
    if (s == "dementia" || s == "case" || s == "1") return Label::Dementia;
    if (s == "control" || s == "0") return Label::Control;
    if (s == "unknown" || s.empty()) return Label::Unknown;
    throw InvalidInput("label must be dementia, control or unknown, got '" + s + "'");
}

std::vector<std::string> PreprocessConfig::default_artifact_patterns() {
    return {
        R"(\[[^\]]*\])",              // [laughs] [: cookie] [//] [+ gram]
        R"(&=\S+)",                   // &=coughs &=points:picture
        R"(\b(?:xxx|yyy|www)\b)",     // unintelligible / untranscribed
        R"(\(\.+\))",                 // (.) (..) pauses
        R"(\x15[^\x15]*\x15)",        // media time bullets
        R"(\+[./!?"<,]+)",            // utterance terminators and linkers
        R"(@[A-Za-z:]+)",             // special form markers: word@o
        R"([<>])",                    // retracing scope brackets
    };
}

std::string PreprocessConfig::hash() const {
    std::string joined;
    for (const auto& p : artifact_patterns) {
        joined += p;
        joined.push_back('\n');
    }
    return io::sha256_hex(joined).substr(0, 16);
}

namespace {

struct Transliteration {
    char32_t from;
    const char* to;
};

constexpr Transliteration kTransliterations[] = {
    {0x201C, "\""}, {0x201D, "\""}, {0x201E, "\""}, {0x201F, "\""}, {0x00AB, "\""}, {0x00BB, "\""},
    {0x2018, "'"},  {0x2019, "'"},  {0x201A, "'"},  {0x201B, "'"},  {0x2032, "'"},  {0x00B4, "'"},
    {0x2010, "-"},  {0x2011, "-"},  {0x2012, "-"},  {0x2013, "-"},  {0x2014, "-"},  {0x2015, "-"},
    {0x2212, "-"},  {0x2026, "..."}, {0x00A0, " "}, {0x2002, " "},  {0x2003, " "},  {0x2009, " "},
    {0x200A, " "},  {0x202F, " "},  {0x2022, "*"},
};

// Decoded code point with its byte length; invalid bytes come back as length 1 with cp 0xFFFD.
std::pair<char32_t, size_t> next_codepoint(std::string_view s, size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    size_t len = b0 < 0x80 ? 1 : (b0 & 0xE0) == 0xC0 ? 2 : (b0 & 0xF0) == 0xE0 ? 3 : (b0 & 0xF8) == 0xF0 ? 4 : 0;
    if (len == 0 || i + len > s.size()) return {0xFFFD, 1};
    char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
    for (size_t k = 1; k < len; ++k) {
        const auto b = static_cast<unsigned char>(s[i + k]);
        if ((b & 0xC0) != 0x80) return {0xFFFD, 1};
        cp = (cp << 6) | (b & 0x3F);
    }
    return {cp, len};
}

std::string to_ascii(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (size_t i = 0; i < raw.size();) {
        auto [cp, len] = next_codepoint(raw, i);
        i += len;
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
            continue;
        }
        for (const auto& t : kTransliterations) {
            if (t.from == cp) {
                out += t.to;
                break;
            }
        }
    }
    return out;
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending = false;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (u <= 0x20 || u == 0x7F) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

}  // namespace

std::string preprocess(std::string_view raw, const PreprocessConfig& config) {
    std::vector<std::regex> patterns;
    patterns.reserve(config.artifact_patterns.size());
    for (const auto& p : config.artifact_patterns) {
        try {
            patterns.emplace_back(p, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw InvalidInput("artifact pattern '" + p + "' is not a valid regex: " + e.what());
        }
    }
    std::string text = collapse_whitespace(to_ascii(raw));
    for (;;) {
        std::string next = text;
        for (const auto& re : patterns) next = std::regex_replace(next, re, " ");
        next = collapse_whitespace(next);
        if (next == text) break;
        text = std::move(next);
    }
    return text;
}

std::vector<ParticipantView> Corpus::participants() const {
    std::vector<ParticipantView> out;
    std::map<std::string, size_t> index;
    std::vector<std::vector<int>> mmse_values;
    for (size_t i = 0; i < transcripts.size(); ++i) {
        const auto& t = transcripts[i];
        auto [it, inserted] = index.emplace(t.participant_id, out.size());
        if (inserted) {
            out.push_back({t.participant_id, t.label, std::nullopt, {}});
            mmse_values.emplace_back();
        }
        auto& p = out[it->second];
        if (p.label != t.label) {
            throw InvalidInput("participant '" + p.id + "' has transcripts with conflicting labels");
        }
        p.transcripts.push_back(i);
        if (t.mmse) mmse_values[it->second].push_back(*t.mmse);
    }
    for (size_t k = 0; k < out.size(); ++k) {
        const auto& v = mmse_values[k];
        if (v.empty()) continue;
        double sum = 0.0;
        for (int m : v) sum += m;
        out[k].mmse = sum / static_cast<double>(v.size());
    }
    return out;
}

std::map<Label, size_t> Corpus::class_counts() const {
    std::map<Label, size_t> out;
    for (const auto& p : participants()) ++out[p.label];
    return out;
}

void Corpus::validate() const {
    std::set<std::string> ids;
    for (const auto& t : transcripts) {
        if (t.transcript_id.empty()) throw InvalidInput("transcript with empty id");
        if (t.participant_id.empty()) throw InvalidInput("transcript '" + t.transcript_id + "' has no participant id");
        if (!ids.insert(t.transcript_id).second) throw InvalidInput("duplicate transcript id '" + t.transcript_id + "'");
        if (t.mmse && (*t.mmse < 0 || *t.mmse > 30)) {
            throw InvalidInput("transcript '" + t.transcript_id + "': mmse " + std::to_string(*t.mmse) + " outside 0..30");
        }
        for (char c : t.clean_text) {
            if (static_cast<unsigned char>(c) >= 0x80) {
                throw InvalidInput("transcript '" + t.transcript_id + "': clean text is not ASCII");
            }
        }
        if (!t.excluded && t.clean_text.empty()) {
            throw InvalidInput("transcript '" + t.transcript_id + "' is empty but not marked excluded");
        }
    }
    (void)participants();
}

Corpus Corpus::select(const std::vector<std::string>& participant_ids) const {
    Corpus out;
    out.id = id;
    out.provenance = provenance;
    out.preprocess_hash = preprocess_hash;
    std::map<std::string, std::vector<size_t>> by_participant;
    for (size_t i = 0; i < transcripts.size(); ++i) by_participant[transcripts[i].participant_id].push_back(i);
    for (const auto& pid : participant_ids) {
        auto it = by_participant.find(pid);
        if (it == by_participant.end()) throw InvalidInput("unknown participant '" + pid + "'");
        for (size_t i : it->second) out.transcripts.push_back(transcripts[i]);
    }
    return out;
}

json transcript_to_json(const Transcript& t) {
    json j = {{"transcript_id", t.transcript_id},
              {"participant_id", t.participant_id},
              {"label", to_string(t.label)},
              {"text", t.raw_text},
              {"clean_text", t.clean_text},
              {"source", t.source},
              {"excluded", t.excluded}};
    j["mmse"] = t.mmse ? json(*t.mmse) : json(nullptr);
    return j;
}

void Corpus::save(const std::filesystem::path& dir) const {
    validate();
    std::string lines;
    for (const auto& t : transcripts) lines += transcript_to_json(t).dump() + "\n";
    json counts = json::object();
    for (const auto& [label, n] : class_counts()) counts[to_string(label)] = n;
    json manifest = {{"format", "gptd-corpus"},
                     {"format_version", 1},
                     {"id", id},
                     {"provenance", provenance},
                     {"preprocess_hash", preprocess_hash},
                     {"n_transcripts", transcripts.size()},
                     {"participants_by_label", counts},
                     {"transcripts_sha256", io::sha256_hex(lines)}};
    io::write_atomic(dir / "transcripts.jsonl", lines);
    io::write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

Transcript transcript_from_json(const json& j, const PreprocessConfig& pre, bool saved_form) {
    Transcript t;
    t.transcript_id = j.at("transcript_id").get<std::string>();
    t.participant_id = j.contains("participant_id") ? j.at("participant_id").get<std::string>() : t.transcript_id;
    t.label = parse_label(j.value("label", std::string("unknown")));
    if (j.contains("mmse") && !j["mmse"].is_null()) t.mmse = j["mmse"].get<int>();
    t.raw_text = j.at("text").get<std::string>();
    t.source = j.value("source", std::string());
    if (saved_form && j.contains("clean_text")) {
        t.clean_text = j["clean_text"].get<std::string>();
        t.excluded = j.value("excluded", false);
    } else {
        t.clean_text = preprocess(t.raw_text, pre);
        t.excluded = t.clean_text.empty();
    }
    return t;
}

Corpus parse_lines(std::string_view text, const std::string& id, const PreprocessConfig& pre, bool saved_form) {
    Corpus c;
    c.id = id;
    c.preprocess_hash = pre.hash();
    std::istringstream in{std::string(text)};
    std::string line;
    size_t line_no = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Transcript t;
        try {
            t = transcript_from_json(json::parse(line), pre, saved_form);
        } catch (const json::exception& e) {
            throw InvalidInput("line " + std::to_string(line_no) + ": malformed record: " + e.what());
        } catch (const InvalidInput& e) {
            throw InvalidInput("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen.insert(t.transcript_id).second) {
            throw InvalidInput("line " + std::to_string(line_no) + ": duplicate transcript id '" + t.transcript_id + "'");
        }
        if (t.mmse && (*t.mmse < 0 || *t.mmse > 30)) {
            throw InvalidInput("line " + std::to_string(line_no) + ": mmse " + std::to_string(*t.mmse) + " outside 0..30");
        }
        c.transcripts.push_back(std::move(t));
    }
    c.validate();
    return c;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

Label label_from_group(const std::string& group) {
    static const std::set<std::string> kCases = {"ProbableAD", "PossibleAD", "Dementia", "AD", "dementia", "ProbableAD/Vascular"};
    if (group == "Control" || group == "control") return Label::Control;
    if (kCases.count(group)) return Label::Dementia;
    return Label::Unknown;
}

}  // namespace

Corpus parse_jsonl_corpus(std::string_view text, const std::string& id, const PreprocessConfig& pre) {
    return parse_lines(text, id, pre, false);
}

Transcript parse_chat_transcript(std::string_view text, const std::string& transcript_id, const PreprocessConfig& pre,
                                 const ChatOptions& chat) {
    Transcript t;
    t.transcript_id = transcript_id;
    const auto dash = transcript_id.find('-');
    t.participant_id = dash == std::string::npos ? transcript_id : transcript_id.substr(0, dash);
    t.source = "chat";

    std::istringstream in{std::string(text)};
    std::string line;
    std::vector<std::string> kept;
    bool in_kept_tier = false;
    auto is_kept = [&](const std::string& code) {
        return std::find(chat.participant_tiers.begin(), chat.participant_tiers.end(), code) != chat.participant_tiers.end();
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '\t') {  // continuation of the previous tier
            if (in_kept_tier) kept.back() += " " + trim(line);
            continue;
        }
        in_kept_tier = false;
        if (line[0] == '*') {
            const auto colon = line.find(':');
            if (colon == std::string::npos) continue;
            const std::string code = line.substr(1, colon - 1);
            if (is_kept(code)) {
                in_kept_tier = true;
                kept.push_back(trim(line.substr(colon + 1)));
            }
        } else if (line.rfind("@ID:", 0) == 0) {
            const auto fields = split(trim(line.substr(4)), '|');
            if (fields.size() > 5 && is_kept(fields[2])) {
                t.label = label_from_group(fields[5]);
                if (chat.mmse_id_field >= 0 && static_cast<size_t>(chat.mmse_id_field) < fields.size()) {
                    const std::string m = trim(fields[chat.mmse_id_field]);
                    if (!m.empty() && std::all_of(m.begin(), m.end(), ::isdigit)) t.mmse = std::stoi(m);
                }
            }
        } else if (line.rfind("@PID:", 0) == 0) {
            const std::string pid = trim(line.substr(5));
            if (!pid.empty()) t.participant_id = pid;
        }
    }
    std::string joined;
    for (const auto& u : kept) joined += (joined.empty() ? "" : " ") + u;
    t.raw_text = joined;
    t.clean_text = preprocess(joined, pre);
    t.excluded = t.clean_text.empty();
    if (t.mmse && (*t.mmse < 0 || *t.mmse > 30)) {
        throw InvalidInput("transcript '" + transcript_id + "': mmse " + std::to_string(*t.mmse) + " outside 0..30");
    }
    return t;
}

CorpusFormat parse_corpus_format(const std::string& s) {
    if (s == "jsonl") return CorpusFormat::Jsonl;
    if (s == "chat" || s == "chat-subset") return CorpusFormat::ChatSubset;
    if (s == "dir" || s == "directory") return CorpusFormat::Directory;
    throw InvalidInput("corpus format must be jsonl, chat-subset or dir, got '" + s + "'");
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format, const PreprocessConfig& pre,
                   const ChatOptions& chat) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw LoadError(LoadErrorKind::Io, "corpus not found: " + path.string());
    switch (format) {
        case CorpusFormat::Jsonl: {
            Corpus c = parse_jsonl_corpus(io::read_text(path), path.stem().string(), pre);
            c.provenance.push_back("jsonl:" + path.filename().string());
            return c;
        }
        case CorpusFormat::Directory: {
            const json manifest = json::parse(io::read_text(path / "manifest.json"));
            Corpus c = parse_lines(io::read_text(path / "transcripts.jsonl"), manifest.at("id").get<std::string>(), pre, true);
            c.provenance = manifest.value("provenance", std::vector<std::string>{});
            c.preprocess_hash = manifest.value("preprocess_hash", std::string());
            return c;
        }
        case CorpusFormat::ChatSubset: {
            std::vector<fs::path> files;
            if (fs::is_directory(path)) {
                for (const auto& e : fs::directory_iterator(path)) {
                    if (e.path().extension() == ".cha") files.push_back(e.path());
                }
                std::sort(files.begin(), files.end());
            } else {
                files.push_back(path);
            }
            Corpus c;
            c.id = path.stem().string();
            c.preprocess_hash = pre.hash();
            c.provenance.push_back("chat-subset:" + path.filename().string());
            for (const auto& f : files) c.transcripts.push_back(parse_chat_transcript(io::read_text(f), f.stem().string(), pre, chat));
            c.validate();
            return c;
        }
    }
    throw InvalidInput("unknown corpus format");
}

}  // namespace gptd
