#pragma once

#include "gptd/corpus.hpp"
#include "gptd/engine.hpp"
#include "gptd/textlab.hpp"
#include "gptd/tokenizer.hpp"

#include <string>
#include <vector>

namespace gptd {

struct SanityConfig {
    size_t n_per_class = 20;
    uint64_t seed = 1;
    SampleConfig sampling;
    double mmse_noise_sd = 1.5;
    int jobs = 1;

    nlohmann::json to_json() const;
};

struct SanityResult {
    Corpus corpus;
    std::vector<std::string> failures;  // one line per transcript that could not be generated
};

// Controls are sampled from `base`, cases from `degraded`, each from a prompt
// drawn in turn from `prompts`; every transcript has its own random stream,
// so the result does not depend on `jobs`. MMSE is synthetic:
// clamp(round(24 - 4 z + noise), 0, 30), z the standardised paired ratio.
SanityResult build_sanity_corpus(const Model& base, const Model& degraded, const Tokenizer& tokenizer,
                                 const std::vector<std::string>& prompts, const SanityConfig& config);

}  // namespace gptd
