// One PASS/FAIL line per acceptance criterion. Criteria 8 and 9 need real
// GPT-2 small weights (GPTD_WEIGHTS); without them they report FAIL.

#include "support/cli.hpp"
#include "support/oracles.hpp"
#include "support/paths.hpp"
#include "support/reference_forward.hpp"
#include "support/seeded_model.hpp"

#include "gptd/corpus.hpp"
#include "gptd/error.hpp"
#include "gptd/evalkit.hpp"
#include "gptd/parallel.hpp"
#include "gptd/sanity.hpp"
#include "gptd/scoring.hpp"
#include "gptd/surgery.hpp"
#include "gptd/textlab.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

using namespace gptd;
using namespace gptd::testing;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

const Model& full_seeded() {
    static const Model m = seeded_model(ModelConfig::gpt2_small(), 20220526, 0.1f);
    return m;
}

Outcome tokenizer_parity() {
    const auto golden = load_fixture_json("tokenizer_golden.json");
    const Tokenizer& tok = gpt2_tokenizer();
    size_t n = 0, ok = 0;
    for (const auto& c : golden["cases"]) {
        ++n;
        ok += tok.encode_ids(c["text"].get<std::string>()) == c["ids"].get<std::vector<int>>();
    }
    return {n == 200 && ok == n, fmt("%zu/%zu sentences identical", ok, n)};
}

std::string weights_digest(const Model& m) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    for (const auto& [name, shape] : expected_tensors(m.config)) {
        const auto& t = m.weights.at(name);
        EVP_DigestUpdate(ctx.get(), t.data.data(), t.data.size() * sizeof(float));
    }
    unsigned char md[32];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    for (unsigned i = 0; i < len; ++i) hex += fmt("%02x", md[i]);
    return hex;
}

Outcome engine_parity() {
    const auto golden = load_fixture_json("engine_golden.json");
    const Model& m = full_seeded();
    if (weights_digest(m) != golden["weights_sha256"]) return {false, "seeded checkpoint digest differs from the golden"};
    const Tokenizer& tok = gpt2_tokenizer();
    double worst = 0.0;
    size_t n = 0;
    for (const auto& p : golden["probes"]) {
        const auto ids = p["ids"].get<std::vector<int>>();
        if (tok.encode_ids(p["text"].get<std::string>()) != ids) return {false, "probe ids disagree with the tokenizer"};
        const double nll = forward_logprobs(m, ids).nll_sum;
        const double want = p["nll_sum"].get<double>();
        worst = std::max(worst, std::abs(nll - want) / std::abs(want));
        ++n;
    }
    return {n == 10 && worst <= 5e-3, fmt("%zu probes, worst relative NLL error %.2e", n, worst)};
}

Outcome surgery_exactness() {
    const Model& m = full_seeded();
    DegradationSpec emb;
    emb.location = MaskLocation::EmbeddingRows;
    const auto [emb_model, emb_report] = degrade(m, emb);
    const Tensor& wte = emb_model.weights.at("wte.weight");
    size_t zero_rows = 0;
    for (int64_t r = 0; r < wte.dim(0); ++r) {
        bool all = true;
        for (int64_t c = 0; c < wte.dim(1) && all; ++c) all = wte.data[static_cast<size_t>(r * wte.dim(1) + c)] == 0.0f;
        zero_rows += all;
    }
    if (zero_rows != 25128 || emb_report.parameters_zeroed != 25128ull * 768) return {false, fmt("embedding spec zeroed %zu rows", zero_rows)};

    DegradationSpec val;
    val.location = MaskLocation::AttentionValueColumns;
    val.layers = {0, 1, 2, 3, 4, 5, 6, 7, 8};
    const auto [deg, report] = degrade(m, val);
    for (int l = 0; l < 12; ++l) {
        const Tensor& src = m.weights.at(tensor_names::qkv_weight(l));
        const Tensor& dst = deg.weights.at(tensor_names::qkv_weight(l));
        const int64_t cols = src.dim(1);
        for (int64_t r = 0; r < src.dim(0); ++r) {
            for (int64_t c = 0; c < cols; ++c) {
                const size_t k = static_cast<size_t>(r * cols + c);
                const bool masked = l <= 8 && c >= 1536 && (c - 1536) % 64 < 32;
                if (masked ? dst.data[k] != 0.0f : dst.data[k] != src.data[k]) {
                    return {false, fmt("layer %d column %lld is wrong", l, static_cast<long long>(c))};
                }
            }
        }
    }
    for (const auto& [name, t] : m.weights.tensors) {
        if (name.find("c_attn.weight") != std::string::npos) continue;
        if (std::memcmp(t.data.data(), deg.weights.at(name).data.data(), t.data.size() * sizeof(float)) != 0) {
            return {false, "untargeted tensor changed: " + name};
        }
    }
    if (weights_digest(m) != load_fixture_json("engine_golden.json")["weights_sha256"]) return {false, "source model was modified"};
    const auto twice = degrade(deg, val).first;
    for (int l = 0; l < 12; ++l) {
        if (twice.weights.at(tensor_names::qkv_weight(l)).data != deg.weights.at(tensor_names::qkv_weight(l)).data) return {false, "degrading twice changed weights"};
    }
    return {true, fmt("25128 embedding rows; 9 layers x 12 heads x 32 value columns (%llu parameters); layers 9-11 identical",
                      static_cast<unsigned long long>(report.parameters_zeroed))};
}

Outcome pattern_enumeration() {
    const auto ind = enumerate_pattern(PatternStrategy::Individual);
    const auto cum = enumerate_pattern(PatternStrategy::Cumulative);
    const auto comb = enumerate_pattern(PatternStrategy::Combination);
    bool ok = ind.size() == 12 && cum.size() == 12 && comb.size() == 4096;
    for (int i = 0; ok && i < 12; ++i) {
        LayerSet prefix;
        for (int l = 0; l <= i; ++l) prefix.push_back(l);
        ok = ind[i] == LayerSet{i} && cum[i] == prefix;
    }
    std::set<LayerSet> unique(comb.begin(), comb.end());
    ok = ok && unique.size() == 4096;
    return {ok, fmt("individual %zu, cumulative %zu, combination %zu (%zu distinct)", ind.size(), cum.size(), comb.size(), unique.size())};
}

Outcome metric_oracles() {
    Rng rng(2024);
    size_t auc_ok = 0, eer_ok = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = random_instance(rng, 4 + rng.below(120));
        auc_ok += auc(s) == brute_auc(s);
        const auto got = acc_at_eer(s), want = brute_eer(s);
        eer_ok += got.accuracy == want.accuracy && got.threshold == want.threshold;
    }
    double worst_r = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::pair<double, double>> xy(3 + rng.below(200));
        for (auto& [x, y] : xy) {
            x = rng.uniform() * 30.0;
            y = 0.3 * x + rng.uniform() * 5.0 + 100.0;
        }
        long double mx = 0, my = 0;
        for (auto [x, y] : xy) mx += x, my += y;
        mx /= xy.size();
        my /= xy.size();
        long double sxy = 0, sxx = 0, syy = 0;
        for (auto [x, y] : xy) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        worst_r = std::max(worst_r, std::abs(pearson(xy) - static_cast<double>(sxy / std::sqrt(sxx * syy))));
    }
    double worst_t = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(2 + rng.below(30)), b(2 + rng.below(30));
        for (auto& v : a) v = rng.uniform() * 10.0;
        for (auto& v : b) v = rng.uniform() * 12.0 + 1.0;
        auto mv = [](const std::vector<double>& x) {
            long double m = 0, s = 0;
            for (double v : x) m += v;
            m /= x.size();
            for (double v : x) s += (v - m) * (v - m);
            return std::pair<double, double>{static_cast<double>(m), static_cast<double>(s / (x.size() - 1))};
        };
        const auto [ma, va] = mv(a);
        const auto [mb, vb] = mv(b);
        const double t = (ma - mb) / std::sqrt(va / a.size() + vb / b.size());
        worst_t = std::max(worst_t, std::abs(welch_t_test(a, b).t - t));
    }
    const bool ok = auc_ok == 100 && eer_ok == 100 && worst_r <= 1e-12 && worst_t <= 1e-9;
    return {ok, fmt("AUC %zu/100, EER %zu/100, Pearson max |err| %.1e, Welch t max |err| %.1e", auc_ok, eer_ok, worst_r, worst_t)};
}

Outcome beam_oracle() {
    const Model stub = seeded_model(tiny_config(5, 2, 2, 8, 16), 31, 0.9f);
    size_t runs = 0, ok = 0;
    for (int beams : {1, 2, 5}) {
        for (int min_new : {0, 2}) {
            for (double penalty : {1.0, 1.3}) {
                for (double top_p : {1.0, 0.9}) {
                    for (const std::vector<int>& prompt : {std::vector<int>{1}, std::vector<int>{3, 0, 2}}) {
                        GenConfig cfg;
                        cfg.beams = beams;
                        cfg.max_new_tokens = 3;
                        cfg.min_new_tokens = min_new;
                        cfg.repetition_penalty = penalty;
                        cfg.top_p = top_p;
                        const auto got = beam_search(stub, prompt, cfg), want = oracle_beam(stub, prompt, cfg);
                        bool same = got.size() == want.size();
                        for (size_t i = 0; same && i < got.size(); ++i) {
                            same = got[i].tokens == want[i].tokens && got[i].finished == want[i].finished &&
                                   std::abs(got[i].logprob - want[i].logprob) <= 1e-5 * (1 + std::abs(want[i].logprob));
                        }
                        ++runs;
                        ok += same;
                    }
                }
            }
        }
    }
    GenConfig g;
    g.beams = 1;
    g.top_p = 1.0;
    g.repetition_penalty = 1.0;
    g.min_new_tokens = 0;
    g.max_new_tokens = 8;
    std::vector<int> ctx = {0, 2}, greedy;
    const auto hyps = beam_search(stub, ctx, g);
    for (int step = 0; step < g.max_new_tokens; ++step) {
        const auto l = next_token_logits(stub, ctx);
        const int t = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
        greedy.push_back(t);
        if (t == stub.config.eos_id()) break;
        ctx.push_back(t);
    }
    const bool greedy_ok = hyps.size() == 1 && hyps[0].tokens == greedy;
    return {ok == runs && greedy_ok, fmt("%zu/%zu configurations match enumeration; greedy reduction %s", ok, runs, greedy_ok ? "holds" : "fails")};
}

Outcome saliency_check() {
    const Model m = seeded_model(tiny_config(12, 2, 2, 8, 16), 9, 0.5f);
    const std::vector<int> ids = {3, 7, 1, 10};
    const auto emb = lookup_embeddings(m, ids);
    const auto map = saliency(m, ids, "stub");
    const int target = map.predicted;
    const auto analytic = logit_gradient_wrt_embeddings(m, emb, target).grad;
    const double h = 1e-3;
    Mat x = ref_embeddings(m, ids);
    double worst = 0.0;
    size_t bad = 0;
    for (size_t t = 0; t < ids.size(); ++t) {
        for (size_t c = 0; c < 8; ++c) {
            const double orig = x[t][c];
            x[t][c] = orig + h;
            const double up = ref_logits_from_embeddings(m, x).back()[target];
            x[t][c] = orig - h;
            const double down = ref_logits_from_embeddings(m, x).back()[target];
            x[t][c] = orig;
            const double fd = (up - down) / (2 * h);
            const double err = std::abs(analytic[t * 8 + c] - fd);
            bad += err > 1e-3 * std::abs(fd) + 1e-6;
            worst = std::max(worst, err / std::max(std::abs(fd), 1e-12));
        }
    }
    Rng rng(3);
    double worst_sum = 0.0;
    const Model big = seeded_model(tiny_config(50, 2, 2, 8, 32), 8, 0.4f);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> s(1 + rng.below(20));
        for (auto& id : s) id = static_cast<int>(rng.below(50));
        double sum = 0.0;
        for (double p : saliency(big, s, "m").percentages) sum += p;
        worst_sum = std::max(worst_sum, std::abs(sum - 100.0));
    }
    return {bad == 0 && worst_sum <= 1e-6, fmt("%zu components off; worst relative error %.1e; max |sum - 100| %.1e", bad, worst, worst_sum)};
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::vector<std::string> out;
    std::istringstream in(io::read_text(p));
    for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l[0] != '#') out.push_back(l);
    }
    return out;
}

struct RealPair {
    Model base, degraded;
};

const RealPair* real_pair() {
    static std::unique_ptr<RealPair> pair = [] {
        const char* w = std::getenv("GPTD_WEIGHTS");
        if (!w || !*w) return std::unique_ptr<RealPair>();
        Model base = Model::load(w);
        DegradationSpec s;
        s.location = MaskLocation::AttentionValueColumns;
        s.layers = {0, 1, 2, 3, 4, 5, 6, 7, 8};
        Model deg = degrade(base, s).first;
        return std::make_unique<RealPair>(RealPair{std::move(base), std::move(deg)});
    }();
    return pair.get();
}

int jobs_available() { return std::max(1u, std::thread::hardware_concurrency()); }

Outcome sanity_separation() {
    const RealPair* pair = real_pair();
    if (!pair) return {false, "GPTD_WEIGHTS is not set; real GPT-2 small weights are required"};
    SanityConfig cfg;
    cfg.n_per_class = 20;
    cfg.seed = 1;
    cfg.jobs = jobs_available();
    const auto prompts = read_lines(data_dir() / "prompts" / "sanity_prompts.txt");
    const SanityResult r = build_sanity_corpus(pair->base, pair->degraded, gpt2_tokenizer(), prompts, cfg);
    std::vector<Exclusion> excluded;
    auto participants = tokenize_corpus(r.corpus, gpt2_tokenizer(), excluded);
    DegradationSpec s;
    s.location = MaskLocation::AttentionValueColumns;
    const PatternScorer scorer(pair->base, participants, s, cfg.jobs);
    const auto rows = scorer.score({0, 1, 2, 3, 4, 5, 6, 7, 8});
    const double a = evaluate(rows).auc;
    const CVResult cv = cross_validate(scorer, PatternStrategy::Cumulative, 5, 1);
    if (!cv.auc.mean) return {false, fmt("corpus AUC %.3f; CV AUC undefined", a)};
    const double gap = std::abs(*cv.auc.mean - a);
    return {a >= 0.9 && gap <= 0.15, fmt("corpus AUC %.3f over %zu participants; 5-fold CV mean test AUC %.3f (gap %.3f)", a,
                                         rows.size(), *cv.auc.mean, gap)};
}

Outcome lexical_direction() {
    const RealPair* pair = real_pair();
    if (!pair) return {false, "GPTD_WEIGHTS is not set; real GPT-2 small weights are required"};
    const auto prompts = read_lines(data_dir() / "prompts" / "generation_prompts.txt");
    GenConfig gen;
    std::vector<PairedGeneration> records(prompts.size());
    parallel_for(prompts.size(), jobs_available(), [&](int, size_t i) {
        records[i] = paired_generate(prompts[i], pair->base, pair->degraded, gpt2_tokenizer(), gen);
    });
    std::vector<std::string> base, deg;
    for (const auto& r : records) {
        if (!r.ok) continue;
        base.push_back(r.base_text);
        deg.push_back(r.degraded_text);
    }
    const auto table = FreqTable::load(data_dir() / "freq" / "wordfreq_en.tsv");
    const LexReport lr = lexical_stats(base, deg, table, LexConfig::defaults(data_dir()));
    if (!lr.base.mean_log_freq || !lr.degraded.mean_log_freq) return {false, "lexical frequency undefined"};
    const bool ok = lr.degraded.ttr < lr.base.ttr && *lr.degraded.mean_log_freq >= *lr.base.mean_log_freq;
    return {ok, fmt("%zu pairs; TTR base %.3f degraded %.3f; mean log frequency base %.3f degraded %.3f", base.size(),
                    lr.base.ttr, lr.degraded.ttr, *lr.base.mean_log_freq, *lr.degraded.mean_log_freq)};
}

using Snapshot = std::map<std::string, std::string>;

Snapshot snapshot(const std::filesystem::path& dir) {
    Snapshot s;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) s[std::filesystem::relative(e.path(), dir).string()] = io::read_text(e.path());
    }
    return s;
}

Outcome cli_determinism() {
    TempDir dir("accept-cli");
    const auto in = dir / "in";
    std::filesystem::create_directories(in);
    const auto weights = (in / "mini.safetensors").string();
    seeded_model(tiny_config(50257, 12, 2, 16, 64), 99, 0.5f).weights.write_safetensors(weights);
    const char* texts[] = {"the boy is on the stool", "cookie jar cookie jar", "the water is running over",
                           "she dries the dishes", "the girl wants a cookie", "mother is at the window",
                           "the sink overflows", "he is going to fall"};
    std::ostringstream corpus;
    for (int i = 0; i < 8; ++i) {
        corpus << json{{"transcript_id", "t" + std::to_string(i)}, {"participant_id", "p" + std::to_string(i)},
                       {"label", i % 2 ? "dementia" : "control"}, {"mmse", 12 + 2 * i}, {"text", texts[i]}}
                      .dump()
               << '\n';
    }
    const auto corpus_path = (in / "c.jsonl").string();
    io::write_atomic(corpus_path, corpus.str());
    const auto prompts = (in / "prompts.txt").string();
    io::write_atomic(prompts, "The boy climbed\nThe water is\nShe said\n");
    const auto freq = (data_dir() / "freq" / "wordfreq_en.tsv").string();

    struct Cmd {
        std::string name;
        std::vector<std::string> args;
        bool takes_jobs;
    };
    auto o = [&](const std::string& name) { return (dir / "out" / name).string(); };
    const std::vector<Cmd> cmds = {
        {"degrade", {"degrade", "--weights", weights, "--out", o("deg.safetensors")}, false},
        {"score", {"score", "--weights", weights, "--corpus", corpus_path, "--out", o("s.tsv")}, true},
        {"eval", {"eval", "--scores", o("s.tsv"), "--out", o("s.eval.json")}, false},
        {"search", {"search", "--weights", weights, "--corpus", corpus_path, "--strategy", "combination", "--out", o("search.tsv")}, true},
        {"cv", {"cv", "--weights", weights, "--corpus", corpus_path, "--k", "4", "--seed", "3", "--out", o("cv.json")}, true},
        {"crossdataset", {"crossdataset", "--weights", weights, "--train", corpus_path, "--test", corpus_path, "--out", o("xd.json")}, true},
        {"generate", {"generate", "--weights", weights, "--prompts", prompts, "--beams", "3", "--min-new-tokens", "2",
                      "--max-new-tokens", "5", "--out", o("gen.json")}, true},
        {"lexstats", {"lexstats", "--generations", o("gen.json"), "--freq", freq, "--out", o("lex.json")}, false},
        {"saliency", {"saliency", "--weights", weights, "--prompts", prompts, "--model", "base", "--out", o("sal.json")}, false},
        {"make-sanity-corpus", {"make-sanity-corpus", "--weights", weights, "--n-per-class", "3", "--seed", "4",
                                "--min-new-tokens", "3", "--max-new-tokens", "6", "--out", o("sanity")}, true},
    };
    const std::vector<std::string> env = {"SOURCE_DATE_EPOCH=1700000000"};
    std::filesystem::create_directories(dir / "out");
    Snapshot prev;
    std::vector<std::string> failed;
    for (const auto& c : cmds) {
        auto first = c.args;
        if (c.takes_jobs) first.insert(first.end(), {"--jobs", "1"});
        const auto r1 = run_cli(first, dir.path(), env);
        if (r1.code != 0) {
            failed.push_back(c.name + " (exit " + std::to_string(r1.code) + ": " + r1.err + ")");
            continue;
        }
        const Snapshot a = snapshot(dir / "out");
        auto second = c.args;
        if (c.takes_jobs) second.insert(second.end(), {"--jobs", "3"});
        const auto r2 = run_cli(second, dir.path(), env);
        const Snapshot b = snapshot(dir / "out");
        bool produced = false;
        for (const auto& [k, v] : a) produced |= !prev.contains(k);
        if (r2.code != 0 || a != b || !produced || r1.out != r2.out) failed.push_back(c.name);
        prev = b;
    }
    if (!failed.empty()) {
        std::string msg = "not reproducible:";
        for (const auto& f : failed) msg += " " + f;
        return {false, msg};
    }
    return {true, fmt("10 commands rerun (--jobs 1 vs 3 where supported): %zu output files bit-identical", prev.size())};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"tokenizer golden parity", tokenizer_parity},
        {"engine parity", engine_parity},
        {"surgery exactness", surgery_exactness},
        {"pattern enumeration", pattern_enumeration},
        {"metric oracles", metric_oracles},
        {"beam-search oracle", beam_oracle},
        {"saliency gradient check", saliency_check},
        {"sanity-corpus separation", sanity_separation},
        {"lexical direction", lexical_direction},
        {"determinism", cli_determinism},
    };
    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !r.pass;
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << i + 1 << ". " << criteria[i].first << ": " << r.detail
                  << fmt(" [%.1fs]", secs) << std::endl;
    }
    std::cout << criteria.size() - failures << "/" << criteria.size() << " criteria passed" << std::endl;
    return failures == 0 ? 0 : 1;
}
