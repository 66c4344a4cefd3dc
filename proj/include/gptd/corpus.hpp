#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gptd {

enum class Label { Dementia, Control, Unknown };

std::string to_string(Label l);
Label parse_label(const std::string& s);

struct Transcript {
    std::string participant_id;
    std::string transcript_id;
    std::string raw_text;
    std::string clean_text;
    Label label = Label::Unknown;
    std::optional<int> mmse;
    std::string source;
    bool excluded = false;  // set when preprocessing leaves nothing to score

    bool operator==(const Transcript&) const = default;
};

struct PreprocessConfig {
    // ECMAScript regexes; every match is deleted. Applied until nothing changes.
    std::vector<std::string> artifact_patterns = default_artifact_patterns();

    static std::vector<std::string> default_artifact_patterns();
    std::string hash() const;
};

// Removes annotation spans, transliterates common Unicode punctuation to
// ASCII, drops any other non-ASCII code point and collapses whitespace.
std::string preprocess(std::string_view raw, const PreprocessConfig& config = {});

struct ParticipantView {
    std::string id;
    Label label = Label::Unknown;
    std::optional<double> mmse;        // mean over transcripts that carry one
    std::vector<size_t> transcripts;   // indices into Corpus::transcripts
};

class Corpus {
public:
    std::string id;
    std::vector<Transcript> transcripts;
    std::vector<std::string> provenance;
    std::string preprocess_hash;

    // Participants in order of first appearance. Throws if a participant's
    // transcripts disagree on label.
    std::vector<ParticipantView> participants() const;
    std::map<Label, size_t> class_counts() const;  // per participant

    // Throws InvalidInput on duplicate transcript ids, MMSE outside 0..30,
    // non-ASCII clean text or label conflicts.
    void validate() const;

    // Subset holding only the given participants, in the given order.
    Corpus select(const std::vector<std::string>& participant_ids) const;

    // Directory layout: manifest.json + transcripts.jsonl.
    void save(const std::filesystem::path& dir) const;

    bool operator==(const Corpus&) const = default;
};

enum class CorpusFormat { Jsonl, ChatSubset, Directory };

struct ChatOptions {
    std::vector<std::string> participant_tiers = {"PAR"};
    int mmse_id_field = 8;  // '|'-separated @ID field holding MMSE, when numeric
};

CorpusFormat parse_corpus_format(const std::string& s);

// jsonl: one {"transcript_id","participant_id","label","mmse","text","source"} object per line.
// chat-subset: a .cha file or a directory of them; only participant tiers are kept.
// directory: a corpus written by Corpus::save.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format, const PreprocessConfig& pre = {},
                   const ChatOptions& chat = {});

Corpus parse_jsonl_corpus(std::string_view text, const std::string& id, const PreprocessConfig& pre = {});
Transcript parse_chat_transcript(std::string_view text, const std::string& transcript_id, const PreprocessConfig& pre = {},
                                 const ChatOptions& chat = {});

nlohmann::json transcript_to_json(const Transcript& t);

}  // namespace gptd
