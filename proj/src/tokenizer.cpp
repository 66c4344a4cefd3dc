#include "gptd/tokenizer.hpp"

#include "gptd/error.hpp"
#include "gptd/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <sstream>

namespace gptd {

namespace {

struct CodepointRange {
    char32_t lo, hi;
};

#include "unicode_tables.inc"

template <size_t N>
bool in_ranges(const CodepointRange (&table)[N], char32_t cp) {
    auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                               [](char32_t c, const CodepointRange& r) { return c < r.lo; });
    if (it == std::begin(table)) return false;
    --it;
    return cp <= it->hi;
}

bool is_letter(char32_t cp) { return in_ranges(kLetterRanges, cp); }
bool is_number(char32_t cp) { return in_ranges(kNumberRanges, cp); }
bool is_space(char32_t cp) { return in_ranges(kSpaceRanges, cp); }

// One decoded code point and the byte span it occupies. Invalid UTF-8 bytes
// become lone "code points" outside the Unicode range so they classify as symbols.
struct Cp {
    char32_t cp;
    size_t offset;
    size_t len;
};

std::vector<Cp> decode_utf8(std::string_view s) {
    std::vector<Cp> out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        size_t len = 0;
        char32_t cp = 0;
        if (b0 < 0x80) {
            len = 1;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        }
        bool ok = len != 0 && i + len <= s.size();
        for (size_t k = 1; ok && k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b & 0xC0) != 0x80) ok = false;
            cp = (cp << 6) | (b & 0x3F);
        }
        if (!ok) {
            out.push_back({0x110000u + b0, i, 1});
            ++i;
        } else {
            out.push_back({cp, i, len});
            i += len;
        }
    }
    return out;
}

std::string encode_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

// Printable stand-ins for raw bytes: printable Latin-1 maps to itself, the
// rest is shifted to U+0100 upward.
std::array<char32_t, 256> byte_to_codepoint() {
    std::array<char32_t, 256> table{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) table[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return table;
}

std::string merge_key(std::string_view a, std::string_view b) {
    std::string k;
    k.reserve(a.size() + b.size() + 1);
    k.append(a);
    k.push_back('\x01');
    k.append(b);
    return k;
}

}  // namespace

Tokenizer::Tokenizer(std::string_view vocab_json, std::string_view merges_text) {
    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(LoadErrorKind::Corrupt, std::string("vocabulary is not valid JSON: ") + e.what());
    }
    if (!vocab.is_object() || vocab.empty()) throw LoadError(LoadErrorKind::Corrupt, "vocabulary must be a non-empty object");
    id_to_token_.resize(vocab.size());
    std::vector<bool> seen(vocab.size(), false);
    for (auto& [tok, idj] : vocab.items()) {
        const int id = idj.get<int>();
        if (id < 0 || static_cast<size_t>(id) >= vocab.size() || seen[id]) {
            throw LoadError(LoadErrorKind::Corrupt, "vocabulary ids are not dense: " + std::to_string(id));
        }
        seen[id] = true;
        id_to_token_[id] = tok;
        token_to_id_.emplace(tok, id);
    }
    auto eot = token_to_id_.find("<|endoftext|>");
    if (eot == token_to_id_.end()) throw LoadError(LoadErrorKind::Corrupt, "vocabulary lacks <|endoftext|>");
    eot_id_ = eot->second;

    std::istringstream lines{std::string(merges_text)};
    std::string line;
    int rank = 0;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        const auto space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 == line.size()) {
            throw LoadError(LoadErrorKind::Corrupt, "malformed merge rule: " + line);
        }
        merge_rank_.emplace(merge_key(line.substr(0, space), line.substr(space + 1)), rank++);
    }

    const auto table = byte_to_codepoint();
    for (int b = 0; b < 256; ++b) {
        byte_encoder_[b] = encode_utf8(table[b]);
        byte_decoder_.emplace(byte_encoder_[b], static_cast<uint8_t>(b));
    }
}

Tokenizer Tokenizer::from_files(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
    return Tokenizer(io::read_text(vocab_json), io::read_text(merges_txt));
}

Tokenizer Tokenizer::from_directory(const std::filesystem::path& dir) {
    return from_files(dir / "vocab.json", dir / "merges.txt");
}

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || id >= vocab_size()) throw InvalidInput("token id out of range: " + std::to_string(id));
    return id_to_token_[id];
}

std::vector<std::string> Tokenizer::pretokenize(std::string_view text) {
    const auto cps = decode_utf8(text);
    const size_t n = cps.size();
    std::vector<std::string> out;
    auto emit = [&](size_t from, size_t to) {  // code point indices [from, to)
        const size_t b = cps[from].offset;
        const size_t e = to < n ? cps[to].offset : text.size();
        out.emplace_back(text.substr(b, e - b));
    };
    auto letter = [&](size_t i) { return i < n && is_letter(cps[i].cp); };
    auto number = [&](size_t i) { return i < n && is_number(cps[i].cp); };
    auto space = [&](size_t i) { return i < n && is_space(cps[i].cp); };
    auto other = [&](size_t i) { return i < n && !is_space(cps[i].cp) && !is_letter(cps[i].cp) && !is_number(cps[i].cp); };

    size_t i = 0;
    while (i < n) {
        // 's 't 're 've 'm 'll 'd
        if (cps[i].cp == U'\'' && i + 1 < n) {
            const char32_t c1 = cps[i + 1].cp;
            const char32_t c2 = i + 2 < n ? cps[i + 2].cp : 0;
            size_t len = 0;
            if (c1 == U's' || c1 == U't' || c1 == U'm' || c1 == U'd') {
                len = 2;
            } else if ((c1 == U'r' && c2 == U'e') || (c1 == U'v' && c2 == U'e') || (c1 == U'l' && c2 == U'l')) {
                len = 3;
            }
            if (len) {
                emit(i, i + len);
                i += len;
                continue;
            }
        }
        const size_t start = i;
        const size_t body = cps[i].cp == U' ' ? i + 1 : i;
        if (letter(body)) {
            size_t j = body;
            while (letter(j)) ++j;
            emit(start, j);
            i = j;
            continue;
        }
        if (number(body)) {
            size_t j = body;
            while (number(j)) ++j;
            emit(start, j);
            i = j;
            continue;
        }
        if (other(body)) {
            size_t j = body;
            while (other(j)) ++j;
            emit(start, j);
            i = j;
            continue;
        }
        // \s+(?!\S) then \s+
        size_t j = i;
        while (space(j)) ++j;
        if (j == n || j - i == 1) {
            emit(i, j);
            i = j;
        } else {
            emit(i, j - 1);
            i = j - 1;
        }
    }
    return out;
}

void Tokenizer::bpe(const std::string& word, std::vector<int>& out) const {
    std::vector<std::string> symbols;
    symbols.reserve(word.size());
    for (unsigned char b : word) symbols.push_back(byte_encoder_[b]);

    while (symbols.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        size_t best = 0;
        for (size_t k = 0; k + 1 < symbols.size(); ++k) {
            auto it = merge_rank_.find(merge_key(symbols[k], symbols[k + 1]));
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
                best = k;
            }
        }
        if (best_rank == std::numeric_limits<int>::max()) break;
        const std::string left = symbols[best];
        const std::string right = symbols[best + 1];
        std::vector<std::string> merged;
        merged.reserve(symbols.size());
        for (size_t k = 0; k < symbols.size();) {
            if (k + 1 < symbols.size() && symbols[k] == left && symbols[k + 1] == right) {
                merged.push_back(left + right);
                k += 2;
            } else {
                merged.push_back(std::move(symbols[k]));
                ++k;
            }
        }
        symbols = std::move(merged);
    }
    for (const auto& s : symbols) {
        auto it = token_to_id_.find(s);
        if (it == token_to_id_.end()) throw Error("BPE produced a symbol missing from the vocabulary");
        out.push_back(it->second);
    }
}

TokenSequence Tokenizer::encode(std::string_view text) const {
    TokenSequence seq;
    seq.source_text = std::string(text);
    for (const auto& piece : pretokenize(text)) bpe(piece, seq.ids);
    return seq;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        const std::string& tok = token(id);
        if (id == eot_id_) {
            out += tok;
            continue;
        }
        for (const auto& c : decode_utf8(tok)) {
            auto it = byte_decoder_.find(std::string(tok.substr(c.offset, c.len)));
            if (it == byte_decoder_.end()) throw Error("vocabulary token holds a non byte-level character");
            out.push_back(static_cast<char>(it->second));
        }
    }
    return out;
}

}  // namespace gptd
