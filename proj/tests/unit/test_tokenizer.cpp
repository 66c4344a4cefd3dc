#include "support/paths.hpp"

#include "gptd/error.hpp"
#include "gptd/random.hpp"

#include <doctest.h>

using namespace gptd;
using gptd::testing::gpt2_tokenizer;

namespace {

// Random valid UTF-8 mixing ASCII, whitespace runs, Latin-1, CJK and 4-byte code points.
std::string random_utf8(Rng& rng) {
    static const char32_t pool[] = {U' ', U'\n', U'\t', U'a', U'Z', U'0', U'\'', U'!', U'.', U'<', U'|',
                                    U'é', U'ß', U'—', U'“', U'中', U'文', U'😀', U'🦙', U' ', U'　'};
    std::string out;
    const uint64_t n = rng.below(40);
    for (uint64_t i = 0; i < n; ++i) {
        char32_t cp;
        switch (rng.below(4)) {
            case 0: cp = pool[rng.below(std::size(pool))]; break;
            case 1: cp = static_cast<char32_t>(0x20 + rng.below(0x5f)); break;
            case 2: cp = static_cast<char32_t>(0x80 + rng.below(0x780)); break;
            default: {
                do {
                    cp = static_cast<char32_t>(0x800 + rng.below(0x10f800));
                } while (cp >= 0xd800 && cp <= 0xdfff);
            }
        }
        if (cp < 0x80) {
            out += static_cast<char>(cp);
        } else if (cp < 0x800) {
            out += static_cast<char>(0xc0 | (cp >> 6));
            out += static_cast<char>(0x80 | (cp & 0x3f));
        } else if (cp < 0x10000) {
            out += static_cast<char>(0xe0 | (cp >> 12));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
            out += static_cast<char>(0x80 | (cp & 0x3f));
        } else {
            out += static_cast<char>(0xf0 | (cp >> 18));
            out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
            out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
            out += static_cast<char>(0x80 | (cp & 0x3f));
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("tokenizer") {
    TEST_CASE("vocabulary shape") {
        const auto& tok = gpt2_tokenizer();
        CHECK(tok.vocab_size() == kGpt2VocabSize);
        CHECK(tok.end_of_text() == kGpt2EndOfText);
    }

    TEST_CASE("empty input") {
        const auto& tok = gpt2_tokenizer();
        CHECK(tok.encode("").ids.empty());
        CHECK(tok.decode(std::vector<int>{}).empty());
    }

    TEST_CASE("Hello is one token") { CHECK(gpt2_tokenizer().encode_ids("Hello") == std::vector<int>{15496}); }

    TEST_CASE("golden parity on 200 sentences") {
        const auto golden = gptd::testing::load_fixture_json("tokenizer_golden.json");
        const auto& tok = gpt2_tokenizer();
        REQUIRE(golden["cases"].size() == 200);
        for (const auto& c : golden["cases"]) {
            const auto text = c["text"].get<std::string>();
            const auto expected = c["ids"].get<std::vector<int>>();
            const auto ids = tok.encode_ids(text);
            INFO(text);
            CHECK(ids == expected);
            CHECK(tok.decode(ids) == text);
        }
    }

    TEST_CASE("the boy has climbed up round-trips") {
        const auto& tok = gpt2_tokenizer();
        const auto seq = tok.encode("the boy has climbed up");
        CHECK(seq.ids == std::vector<int>{1169, 2933, 468, 19952, 510});
        CHECK(seq.source_text == "the boy has climbed up");
        CHECK(tok.decode(seq.ids) == "the boy has climbed up");
    }

    TEST_CASE("end-of-text decodes to its marker") {
        const auto golden = gptd::testing::load_fixture_json("tokenizer_golden.json");
        CHECK(gpt2_tokenizer().decode(std::vector<int>{kGpt2EndOfText}) == golden["eos_decoded"].get<std::string>());
    }

    TEST_CASE("marker text in input is ordinary text") {
        const auto& tok = gpt2_tokenizer();
        const auto ids = tok.encode_ids("a <|endoftext|> b");
        for (int id : ids) CHECK(id != kGpt2EndOfText);
        CHECK(tok.decode(ids) == "a <|endoftext|> b");
    }

    TEST_CASE("fuzzed UTF-8 round-trips") {
        const auto& tok = gpt2_tokenizer();
        Rng rng(7);
        for (int i = 0; i < 1000; ++i) {
            const std::string s = random_utf8(rng);
            const auto ids = tok.encode_ids(s);
            INFO(s);
            CHECK(tok.decode(ids) == s);
            CHECK(tok.encode_ids(s) == ids);
        }
    }

    TEST_CASE("out-of-range id is rejected") {
        const auto& tok = gpt2_tokenizer();
        CHECK_THROWS_AS(tok.decode(std::vector<int>{kGpt2VocabSize}), InvalidInput);
        CHECK_THROWS_AS(tok.decode(std::vector<int>{-1}), InvalidInput);
    }

    TEST_CASE("pretokenization splits contractions and spaces") {
        const auto parts = Tokenizer::pretokenize("He's  going 42!");
        CHECK(parts == std::vector<std::string>{"He", "'s", " ", " going", " 42", "!"});
    }

    TEST_CASE("malformed vocabulary") {
        CHECK_THROWS_AS(Tokenizer("not json", "#version: 0.2\n"), LoadError);
        CHECK_THROWS_AS(Tokenizer("{\"a\": 0}", "#version: 0.2\n"), LoadError);
    }
}
