#include "support/oracles.hpp"
#include "support/paths.hpp"
#include "support/reference_forward.hpp"
#include "support/seeded_model.hpp"

#include "gptd/error.hpp"
#include "gptd/textlab.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

using namespace gptd;
using namespace gptd::testing;

namespace {

// Vocabulary of 5 with end-of-text = 4; large weights give peaked, tie-free distributions.
const Model& stub() {
    static const Model m = seeded_model(tiny_config(5, 2, 2, 8, 16), 31, 0.9f);
    return m;
}


void check_same(const std::vector<Hypothesis>& got, const std::vector<Hypothesis>& want) {
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].tokens == want[i].tokens);
        CHECK(got[i].finished == want[i].finished);
        CHECK(got[i].logprob == doctest::Approx(want[i].logprob).epsilon(1e-5));
    }
}

FreqTable small_table() {
    return FreqTable({{"boy", 1000}, {"girl", 800}, {"ran", 50}, {"cookie", 599}, {"jar", 120}, {"the", 100000}});
}

LexConfig stop(std::initializer_list<const char*> words) {
    LexConfig c;
    for (auto* w : words) c.stopwords.insert(w);
    return c;
}

}  // namespace

TEST_SUITE("textlab") {
    TEST_CASE("greedy reduction") {
        GenConfig cfg;
        cfg.beams = 1;
        cfg.top_p = 1.0;
        cfg.repetition_penalty = 1.0;
        cfg.min_new_tokens = 0;
        cfg.max_new_tokens = 8;
        const std::vector<int> prompt = {0, 2};
        const auto hyps = beam_search(stub(), prompt, cfg);
        REQUIRE(hyps.size() == 1);
        std::vector<int> ctx = prompt, greedy;
        for (int step = 0; step < cfg.max_new_tokens; ++step) {
            const auto l = next_token_logits(stub(), ctx);
            const int t = static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
            greedy.push_back(t);
            if (t == stub().config.eos_id()) break;
            ctx.push_back(t);
        }
        CHECK(hyps[0].tokens == greedy);
    }

    TEST_CASE("beam search equals the exhaustive oracle") {
        for (int beams : {1, 2, 5}) {
            for (int min_new : {0, 2}) {
                for (double penalty : {1.0, 1.3}) {
                    for (double top_p : {1.0, 0.9}) {
                        GenConfig cfg;
                        cfg.beams = beams;
                        cfg.max_new_tokens = 3;
                        cfg.min_new_tokens = min_new;
                        cfg.repetition_penalty = penalty;
                        cfg.top_p = top_p;
                        for (const std::vector<int>& prompt : {std::vector<int>{1}, std::vector<int>{3, 0, 2}}) {
                            CAPTURE(beams);
                            CAPTURE(min_new);
                            CAPTURE(penalty);
                            CAPTURE(top_p);
                            check_same(beam_search(stub(), prompt, cfg), oracle_beam(stub(), prompt, cfg));
                        }
                    }
                }
            }
        }
    }

    TEST_CASE("five beams over two steps keep the global top five") {
        GenConfig cfg;
        cfg.beams = 5;
        cfg.max_new_tokens = 2;
        cfg.min_new_tokens = 2;  // end-of-text never allowed, so all 4 x 4 paths are live
        cfg.top_p = 1.0;
        cfg.repetition_penalty = 1.0;
        const std::vector<int> prompt = {2};
        std::vector<Seq> all;
        std::map<std::vector<int>, std::map<int, double>> table;
        enumerate(stub(), prompt, cfg, {}, all, table);
        std::vector<Seq> full;
        for (const auto& s : all) {
            if (s.tokens.size() == 2) full.push_back(s);
        }
        CHECK(full.size() == 16);
        std::sort(full.begin(), full.end(), [](const Seq& a, const Seq& b) { return a.logprob > b.logprob; });
        const auto hyps = beam_search(stub(), prompt, cfg);
        REQUIRE(hyps.size() == 5);
        std::vector<std::vector<int>> got, want;
        for (const auto& h : hyps) got.push_back(h.tokens);
        for (size_t i = 0; i < 5; ++i) want.push_back(full[i].tokens);
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
    }

    TEST_CASE("repetition penalty lowers an emitted token below an equal fresh one") {
        const std::vector<float> logits = {0.5f, 1.0f, 1.0f, 0.2f, -1.0f};
        const auto q = nucleus(logits, {1}, 1.3, 1.0, true, 4);
        std::map<int, double> m(q.begin(), q.end());
        CHECK(m.at(1) < m.at(2));
        CHECK(q.front().first == 2);
        const auto flat = nucleus(logits, {1}, 1.0, 1.0, true, 4);
        CHECK(flat[0].first == 1);  // equal probabilities: lower id first
        double s = 0.0;
        for (auto [t, lq] : q) s += std::exp(lq);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        for (auto [t, lq] : nucleus(logits, {}, 1.0, 1.0, false, 4)) CHECK(t != 4);
        CHECK(nucleus(logits, {}, 1.0, 0.3, true, 4).size() == 1);
    }

    TEST_CASE("generation config validation") {
        GenConfig c;
        CHECK_NOTHROW(c.validate());
        c.beams = 0;
        CHECK_THROWS_AS(c.validate(), InvalidInput);
        c = {};
        c.top_p = 0.0;
        CHECK_THROWS_AS(c.validate(), InvalidInput);
        c = {};
        c.repetition_penalty = 0.9;
        CHECK_THROWS_AS(c.validate(), InvalidInput);
        c = {};
        c.min_new_tokens = 0;
        c.max_new_tokens = 15;
        CHECK_THROWS_AS(beam_search(stub(), std::vector<int>{1, 2}, c), InvalidInput);
        CHECK_THROWS_AS(beam_search(stub(), std::vector<int>{}, GenConfig{}), InvalidInput);
        GenConfig j;
        j.beams = 3;
        j.top_p = 0.8;
        CHECK(GenConfig::from_json(j.to_json()).to_json() == j.to_json());
    }

    TEST_CASE("first non-empty pair") {
        auto gen = [](std::vector<std::string> texts) {
            std::vector<GeneratedText> v;
            for (auto& t : texts) v.push_back({t, {}});
            return v;
        };
        auto a = pick_first_nonempty_pair("p", gen({"one", "two"}), gen({"uno", "dos"}));
        CHECK(a.ok);
        CHECK(a.rank == 0);
        CHECK(a.degraded_text == "uno");
        auto b = pick_first_nonempty_pair("p", gen({" ", "two", "x"}), gen({"uno", "dos", "tres"}));
        CHECK(b.ok);
        CHECK(b.rank == 1);
        CHECK(b.base_text == "two");
        auto c = pick_first_nonempty_pair("p", gen({"", "a", "", "b", ""}), gen({"x", "", "y", "", "z"}));
        CHECK_FALSE(c.ok);
        CHECK_FALSE(c.failure.empty());
        const auto table = render_generation_table({a, c});
        CHECK(table.find("uno") != std::string::npos);
    }

    TEST_CASE("word tokenization matches the Treebank golden") {
        const auto golden = load_fixture_json("textlab_golden.json");
        for (const auto& c : golden["word_tokenize"]) {
            INFO(c["text"].get<std::string>());
            CHECK(word_tokenize(c["text"].get<std::string>()) == c["tokens"].get<std::vector<std::string>>());
        }
    }

    TEST_CASE("type-token ratio examples") {
        const auto a = lexical_side({"the boy and the girl ran"}, small_table(), stop({"the", "and"}));
        CHECK(a.kept == 3);
        CHECK(a.stopwords_removed == 3);
        CHECK(a.ttr == 1.0);
        const auto b = lexical_side({"cookie cookie cookie jar"}, small_table(), stop({}));
        CHECK(b.ttr == 0.5);
        REQUIRE(b.mean_log_freq.has_value());
        CHECK(*b.mean_log_freq == doctest::Approx((3 * std::log(599.0) + std::log(120.0)) / 4));

        const std::string text = "the boy saw a girl and a cookie jar";
        const auto once = lexical_side({text}, small_table(), stop({}));
        const auto twice = lexical_side({text, text}, small_table(), stop({}));
        CHECK(twice.ttr <= once.ttr / 2 + 1e-15);
        CHECK(twice.ttr >= static_cast<double>(once.types) / (2.0 * static_cast<double>(once.kept)));
        CHECK(twice.ttr > 0.0);
    }

    TEST_CASE("stopword rules, OOV and punctuation") {
        LexConfig c = stop({"she"});
        CHECK(is_stopword("n't", c));
        CHECK(is_stopword("'s", c));
        CHECK(is_stopword("She", c));
        CHECK_FALSE(is_stopword("boy", c));
        const auto s = lexical_side({"She doesn't see the zyzzyva, boy!"}, small_table(), c);
        CHECK(s.punctuation_removed == 2);
        CHECK(s.oov_count == 3);  // does, see, zyzzyva
        CHECK(s.log_freqs.size() == 2);
        CHECK_THROWS_AS(lexical_side({"boy"}, FreqTable{}, c), InvalidInput);
        LexConfig base10 = stop({});
        base10.log_base = 10.0;
        CHECK(lexical_side({"boy"}, small_table(), base10).mean_log_freq == doctest::Approx(3.0));
    }

    TEST_CASE("frequency table parsing") {
        const auto t = FreqTable::parse("Word\tFREQcount\tCDcount\nCookie\t599\t10\njar\t120\t5\n");
        CHECK(t.size() == 2);
        CHECK(t.count("cookie") == 599.0);
        CHECK(t.count("COOKIE") == 599.0);
        CHECK_FALSE(t.count("boy").has_value());
        const auto csv = FreqTable::parse("count,word\n5,a\n7,b\n");
        CHECK(csv.count("b") == 7.0);
        const auto plain = FreqTable::parse("a 3\nb 4\n");
        CHECK(plain.total() == 7.0);
        CHECK_THROWS_AS(FreqTable::parse(""), InvalidInput);
        const auto shipped = FreqTable::load(data_dir() / "freq" / "wordfreq_en.tsv");
        CHECK(shipped.size() > 10000);
        CHECK(shipped.count("the").has_value());
    }

    TEST_CASE("Welch t-test against scipy and the closed form") {
        const auto golden = load_fixture_json("textlab_golden.json");
        for (const auto& c : golden["welch"]) {
            const auto a = c["a"].get<std::vector<double>>(), b = c["b"].get<std::vector<double>>();
            const auto r = welch_t_test(a, b);
            CHECK(r.t == doctest::Approx(c["t"].get<double>()).epsilon(1e-9));
            CHECK(r.df == doctest::Approx(c["df"].get<double>()).epsilon(1e-9));
            CHECK(std::abs(r.p_value - c["p"].get<double>()) <= 1e-9);

            auto mv = [](const std::vector<double>& x) {
                double m = 0;
                for (double v : x) m += v;
                m /= x.size();
                double s = 0;
                for (double v : x) s += (v - m) * (v - m);
                return std::pair{m, s / (x.size() - 1)};
            };
            const auto [ma, va] = mv(a);
            const auto [mb, vb] = mv(b);
            const double se2 = va / a.size() + vb / b.size();
            const double df = se2 * se2 / (std::pow(va / a.size(), 2) / (a.size() - 1) + std::pow(vb / b.size(), 2) / (b.size() - 1));
            CHECK(std::abs(r.t - (ma - mb) / std::sqrt(se2)) <= 1e-9);
            CHECK(std::abs(r.df - df) <= 1e-9 * df);
        }
        CHECK_THROWS_AS(welch_t_test(std::vector<double>{1}, std::vector<double>{1, 2}), UndefinedMetric);
        CHECK_THROWS_AS(welch_t_test(std::vector<double>{1, 1}, std::vector<double>{2, 2}), UndefinedMetric);
    }

    TEST_CASE("lexical report compares degraded against base") {
        const auto r = lexical_stats({"boy girl ran jar"}, {"cookie cookie boy boy"}, small_table(), stop({}));
        CHECK(r.degraded.ttr < r.base.ttr);
        REQUIRE(r.welch.has_value());
        CHECK(r.to_json()["welch"]["direction"] == "degraded minus base");
    }

    TEST_CASE("saliency: a single token carries everything") {
        const auto m = saliency(stub(), std::vector<int>{2}, "stub");
        REQUIRE(m.percentages.size() == 1);
        CHECK(m.percentages[0] == 100.0);
        CHECK(to_percentages(std::vector<double>{0, 0}) == std::vector<double>{50, 50});
    }

    TEST_CASE("saliency percentages sum to 100") {
        const Model m = seeded_model(tiny_config(50, 2, 2, 8, 32), 8, 0.4f);
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<int> ids(1 + rng.below(20));
            for (auto& id : ids) id = static_cast<int>(rng.below(50));
            const auto map = saliency(m, ids, "m");
            double s = 0.0;
            for (double p : map.percentages) {
                CHECK(p >= 0.0);
                s += p;
            }
            CHECK(std::abs(s - 100.0) <= 1e-6);
        }
    }

    TEST_CASE("analytic gradient agrees with central differences") {
        const Model m = seeded_model(tiny_config(12, 2, 2, 8, 16), 9, 0.5f);
        const std::vector<int> ids = {3, 7, 1, 10};
        const auto emb = lookup_embeddings(m, ids);
        const int target = 5;
        const auto analytic = logit_gradient_wrt_embeddings(m, emb, target).grad;
        const double h = 1e-3;
        Mat x = ref_embeddings(m, ids);
        for (size_t t = 0; t < ids.size(); ++t) {
            for (size_t c = 0; c < 8; ++c) {
                const double orig = x[t][c];
                x[t][c] = orig + h;
                const double up = ref_logits_from_embeddings(m, x).back()[target];
                x[t][c] = orig - h;
                const double down = ref_logits_from_embeddings(m, x).back()[target];
                x[t][c] = orig;
                const double fd = (up - down) / (2 * h);
                const double a = analytic[t * 8 + c];
                CHECK(std::abs(a - fd) <= 1e-3 * std::abs(fd) + 1e-6);
            }
        }
        const auto fd32 = finite_difference_gradient(m, emb, target, 1e-2f, 2);
        for (size_t k = 0; k < fd32.size(); ++k) CHECK(std::abs(fd32[k] - analytic[k]) <= 2e-2 * std::abs(analytic[k]) + 2e-3);
    }

    TEST_CASE("scaling the final layer-norm gain keeps the saliency ranking") {
        Model m = seeded_model(tiny_config(30, 2, 2, 8, 16), 10, 0.5f);
        for (auto& v : m.weights.at("ln_f.bias").data) v = 0.0f;
        const std::vector<int> ids = {4, 9, 2, 17, 11};
        const auto before = saliency(m, ids, "m");
        for (auto& v : m.weights.at("ln_f.weight").data) v *= 3.0f;
        const auto after = saliency(m, ids, "m");
        CHECK(after.predicted == before.predicted);
        auto rank = [](const std::vector<double>& p) {
            std::vector<size_t> r(p.size());
            std::iota(r.begin(), r.end(), size_t{0});
            std::sort(r.begin(), r.end(), [&](size_t a, size_t b) { return p[a] > p[b]; });
            return r;
        };
        CHECK(rank(after.percentages) == rank(before.percentages));
        for (size_t i = 0; i < ids.size(); ++i) CHECK(after.percentages[i] == doctest::Approx(before.percentages[i]).epsilon(1e-4));
    }

    TEST_CASE("aligned saliency") {
        const auto& tok = gpt2_tokenizer();
        const Model a = seeded_model(tiny_config(50257, 1, 2, 8, 32), 12, 0.3f);
        const std::vector<std::string> prompts = {"The boy", "A cookie jar", "Water"};
        const auto same = aligned_saliency(prompts, a, a, tok);
        CHECK(same.aligned);
        CHECK(same.prompt_index == 0);
        REQUIRE(same.base.has_value());
        CHECK(same.base->percentages == same.degraded->percentages);

        // Constant logits along one embedding column: each model always predicts the same token.
        auto column_argmax = [&](int j) {
            const auto& wte = a.weights.at("wte.weight").data;
            int best = 0;
            for (int t = 1; t < 50257; ++t) {
                if (wte[t * 8 + j] > wte[best * 8 + j]) best = t;
            }
            return best;
        };
        int j1 = 0, j2 = 1;
        while (column_argmax(j1) == column_argmax(j2)) ++j2;
        auto pinned = [&](int j) {
            Model m = a;
            for (auto& v : m.weights.at("ln_f.weight").data) v = 0.0f;
            auto& b = m.weights.at("ln_f.bias").data;
            std::fill(b.begin(), b.end(), 0.0f);
            b[j] = 5.0f;
            return m;
        };
        const Model p1 = pinned(j1), p2 = pinned(j2);
        const auto none = aligned_saliency(prompts, p1, p2, tok);
        CHECK_FALSE(none.aligned);
        REQUIRE(none.attempts.size() == prompts.size());
        for (const auto& at : none.attempts) {
            CHECK(at.base_prediction == column_argmax(j1));
            CHECK(at.degraded_prediction == column_argmax(j2));
        }
        CHECK(none.to_json()["aligned"] == false);
        CHECK(render_saliency_html({*same.base, *same.degraded}).find("<html") != std::string::npos);
    }
}
