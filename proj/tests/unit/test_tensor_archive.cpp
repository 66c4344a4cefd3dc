#include "support/paths.hpp"
#include "support/seeded_model.hpp"

#include "gptd/engine.hpp"
#include "gptd/error.hpp"
#include "gptd/tensor_archive.hpp"

#include <doctest.h>

#include <cstring>

using namespace gptd;
using nlohmann::json;

namespace {

// Hand-assembled safetensors buffer.
std::vector<uint8_t> raw_safetensors(const json& header, const std::vector<uint8_t>& payload) {
    const std::string text = header.dump();
    std::vector<uint8_t> out(8 + text.size());
    const uint64_t len = text.size();
    std::memcpy(out.data(), &len, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

}  // namespace

TEST_SUITE("tensor_archive") {
    TEST_CASE("serialize and parse round-trip") {
        TensorArchive a;
        Tensor t({2, 3});
        for (size_t i = 0; i < t.numel(); ++i) t.data[i] = static_cast<float>(i) * 0.5f - 1.0f;
        a.tensors["b"] = t;
        a.tensors["a"] = Tensor({4});
        a.metadata["n_head"] = "2";
        const auto bytes = a.serialize_safetensors();
        CHECK(TensorArchive::parse_safetensors(bytes) == a);
        CHECK(a.serialize_safetensors() == bytes);

        gptd::testing::TempDir dir("archive");
        a.write_safetensors(dir / "x.safetensors");
        CHECK(TensorArchive::read_safetensors(dir / "x.safetensors") == a);
        CHECK(a.parameter_count() == 10);
    }

    TEST_CASE("F16, BF16 and F64 widen to float32") {
        // 1.0, -2.0 in each encoding
        std::vector<uint8_t> payload = {0x00, 0x3c, 0x00, 0xc0,  // f16
                                        0x80, 0x3f, 0x00, 0xc0};  // bf16
        double d[2] = {1.0, -2.0};
        const auto* dp = reinterpret_cast<const uint8_t*>(d);
        payload.insert(payload.end(), dp, dp + 16);
        const json header = {{"h", {{"dtype", "F16"}, {"shape", {2}}, {"data_offsets", {0, 4}}}},
                             {"b", {{"dtype", "BF16"}, {"shape", {2}}, {"data_offsets", {4, 8}}}},
                             {"d", {{"dtype", "F64"}, {"shape", {2}}, {"data_offsets", {8, 24}}}}};
        const auto a = TensorArchive::parse_safetensors(raw_safetensors(header, payload));
        for (const char* name : {"h", "b", "d"}) {
            CHECK(a.at(name).data == std::vector<float>{1.0f, -2.0f});
        }
    }

    TEST_CASE("transformer prefix stripped and buffers skipped") {
        const std::vector<uint8_t> payload(12, 0);
        const json header = {{"transformer.wte.weight", {{"dtype", "F32"}, {"shape", {1, 2}}, {"data_offsets", {0, 8}}}},
                             {"transformer.h.0.attn.bias", {{"dtype", "U8"}, {"shape", {2}}, {"data_offsets", {8, 10}}}},
                             {"lm_head.weight", {{"dtype", "F16"}, {"shape", {1}}, {"data_offsets", {10, 12}}}}};
        const auto a = TensorArchive::parse_safetensors(raw_safetensors(header, payload));
        CHECK(a.tensors.size() == 1);
        CHECK(a.contains("wte.weight"));
    }

    TEST_CASE("c_attn.bias is a parameter, not a buffer") {
        TensorArchive a;
        a.tensors["h.0.attn.c_attn.bias"] = Tensor({3});
        a.tensors["h.0.attn.bias"] = Tensor({2});
        const auto back = TensorArchive::parse_safetensors(a.serialize_safetensors());
        CHECK(back.contains("h.0.attn.c_attn.bias"));
        CHECK_FALSE(back.contains("h.0.attn.bias"));
    }

    TEST_CASE("corrupt inputs are load errors") {
        auto kind_of = [](const std::vector<uint8_t>& bytes) {
            try {
                TensorArchive::parse_safetensors(bytes);
            } catch (const LoadError& e) {
                return e.kind();
            }
            FAIL("no error");
            return LoadErrorKind::Io;
        };
        CHECK(kind_of({1, 2, 3}) == LoadErrorKind::Corrupt);
        CHECK(kind_of({0xff, 0, 0, 0, 0, 0, 0, 0, '{', '}'}) == LoadErrorKind::Corrupt);
        CHECK(kind_of(raw_safetensors(json::parse("[1]"), {})) == LoadErrorKind::Corrupt);
        const json too_long = {{"x", {{"dtype", "F32"}, {"shape", {4}}, {"data_offsets", {0, 16}}}}};
        CHECK(kind_of(raw_safetensors(too_long, std::vector<uint8_t>(8))) == LoadErrorKind::Corrupt);
        const json odd_dtype = {{"x", {{"dtype", "I64"}, {"shape", {1}}, {"data_offsets", {0, 8}}}}};
        CHECK(kind_of(raw_safetensors(odd_dtype, std::vector<uint8_t>(8))) == LoadErrorKind::Corrupt);

        gptd::testing::TempDir dir("corrupt");
        try {
            TensorArchive::read_safetensors(dir / "absent.safetensors");
            FAIL("no error");
        } catch (const LoadError& e) {
            CHECK(e.kind() == LoadErrorKind::Io);
        }
        auto bytes = TensorArchive{{{"x", Tensor({64})}}, {}}.serialize_safetensors();
        bytes.resize(bytes.size() - 10);
        io::write_atomic(dir / "short.safetensors", bytes);
        CHECK_THROWS_AS(TensorArchive::read_safetensors(dir / "short.safetensors"), LoadError);
    }

    TEST_CASE("missing name lookup") {
        TensorArchive a;
        CHECK_THROWS_AS(a.at("nope"), LoadError);
    }
}
