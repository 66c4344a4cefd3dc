#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gptd {

inline constexpr int kGpt2VocabSize = 50257;
inline constexpr int kGpt2EndOfText = 50256;

struct TokenSequence {
    std::vector<int> ids;
    std::string source_text;
};

// Byte-level BPE, bit-compatible with the published GPT-2 vocabulary.
//
// Immutable after construction; encode/decode are safe to call concurrently.
// The end-of-text marker is never produced by encode: "<|endoftext|>" in
// input text is encoded as ordinary characters.
class Tokenizer {
public:
    // vocab_json: token string -> id; merges: "#version" line then one "a b" rule per line.
    Tokenizer(std::string_view vocab_json, std::string_view merges_text);

    static Tokenizer from_files(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);
    // Loads vocab.json and merges.txt from a directory.
    static Tokenizer from_directory(const std::filesystem::path& dir);

    TokenSequence encode(std::string_view text) const;
    std::vector<int> encode_ids(std::string_view text) const { return encode(text).ids; }
    std::string decode(std::span<const int> ids) const;

    int vocab_size() const noexcept { return static_cast<int>(id_to_token_.size()); }
    int end_of_text() const noexcept { return eot_id_; }
    const std::string& token(int id) const;

    // GPT-2 pre-tokenization: contractions, letter runs, digit runs, other-symbol runs, whitespace.
    static std::vector<std::string> pretokenize(std::string_view text);

private:
    void bpe(const std::string& word, std::vector<int>& out) const;

    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> merge_rank_;  // key: left + '\x01' + right
    std::array<std::string, 256> byte_encoder_;
    std::unordered_map<std::string, uint8_t> byte_decoder_;
    int eot_id_ = -1;
};

}  // namespace gptd
