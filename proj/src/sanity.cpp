#include "gptd/sanity.hpp"

#include "gptd/error.hpp"
#include "gptd/parallel.hpp"
#include "gptd/random.hpp"
#include "gptd/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gptd {

using nlohmann::json;

json SanityConfig::to_json() const {
    return {{"n_per_class", n_per_class},
            {"seed", seed},
            {"sampling",
             {{"min_new_tokens", sampling.min_new_tokens},
              {"max_new_tokens", sampling.max_new_tokens},
              {"top_p", sampling.top_p},
              {"repetition_penalty", sampling.repetition_penalty}}},
            {"mmse_noise_sd", mmse_noise_sd}};
}

namespace {

constexpr uint64_t kClassStream = 1'000'000;
constexpr uint64_t kMmseStream = 9'000'000;

}  // namespace

SanityResult build_sanity_corpus(const Model& base, const Model& degraded, const Tokenizer& tokenizer,
                                 const std::vector<std::string>& prompts, const SanityConfig& config) {
    if (prompts.empty()) throw InvalidInput("sanity corpus needs at least one prompt");
    if (config.n_per_class == 0) throw InvalidInput("n_per_class must be positive");
    if (!(base.config == degraded.config)) throw InvalidInput("base and degraded models differ in architecture");

    const size_t n = 2 * config.n_per_class;
    struct Slot {
        std::optional<Transcript> transcript;
        std::string failure;
        double ratio = 0.0;
    };
    std::vector<Slot> slots(n);
    parallel_for(n, config.jobs, [&](int, size_t k) {
        const bool is_case = k >= config.n_per_class;
        const size_t i = is_case ? k - config.n_per_class : k;
        const std::string& prompt = prompts[i % prompts.size()];
        const Model& model = is_case ? degraded : base;
        Rng rng = Rng::derive(config.seed, (is_case ? 1 : 0) * kClassStream + i);
        const auto prompt_ids = tokenizer.encode_ids(prompt);
        const auto continuation = sample_continuation(model, prompt_ids, config.sampling, rng);

        char id[32];
        std::snprintf(id, sizeof id, "%s-%03zu", is_case ? "case" : "ctrl", i);
        Transcript t;
        t.participant_id = id;
        t.transcript_id = id;
        t.raw_text = prompt + tokenizer.decode(continuation);
        t.clean_text = preprocess(t.raw_text);
        t.label = is_case ? Label::Dementia : Label::Control;
        t.source = is_case ? "sanity:gpt-d" : "sanity:gpt2";
        const auto ids = tokenizer.encode_ids(t.clean_text);
        if (continuation.empty() || ids.empty()) {
            slots[k].failure = std::string(id) + ": generation produced no text";
            return;
        }
        slots[k].ratio = transcript_nll(base, ids).perplexity() / transcript_nll(degraded, ids).perplexity();
        slots[k].transcript = std::move(t);
    });

    SanityResult out;
    double mean = 0.0, m2 = 0.0;
    size_t count = 0;
    for (const auto& s : slots) {
        if (!s.transcript) continue;
        ++count;
        const double d = s.ratio - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (s.ratio - mean);
    }
    const double sd = count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1)) : 0.0;

    for (size_t k = 0; k < n; ++k) {
        auto& s = slots[k];
        if (!s.transcript) {
            out.failures.push_back(s.failure);
            continue;
        }
        Rng noise = Rng::derive(config.seed, kMmseStream + k);
        const double z = sd > 0.0 ? (s.ratio - mean) / sd : 0.0;
        const double v = std::round(24.0 - 4.0 * z + config.mmse_noise_sd * noise.normal());
        s.transcript->mmse = static_cast<int>(std::clamp(v, 0.0, 30.0));
        out.corpus.transcripts.push_back(std::move(*s.transcript));
    }
    char seed_text[32];
    std::snprintf(seed_text, sizeof seed_text, "%llu", static_cast<unsigned long long>(config.seed));
    out.corpus.id = std::string("sanity-") + seed_text;
    out.corpus.preprocess_hash = PreprocessConfig{}.hash();
    out.corpus.provenance = {
        "synthetic sanity corpus: controls sampled from the base model, cases from the degraded model",
        "MMSE values are synthetic: clamp(round(24 - 4 z(ratio) + N(0, sd)), 0, 30)",
        "config: " + config.to_json().dump(),
    };
    return out;
}

}  // namespace gptd
