#include "commands.hpp"

#include "gptd/corpus.hpp"
#include "gptd/engine.hpp"
#include "gptd/error.hpp"
#include "gptd/evalkit.hpp"
#include "gptd/io.hpp"
#include "gptd/parallel.hpp"
#include "gptd/reports.hpp"
#include "gptd/sanity.hpp"
#include "gptd/scoring.hpp"
#include "gptd/surgery.hpp"
#include "gptd/textlab.hpp"
#include "gptd/tokenizer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace gptd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kBadInput = 2, kUndefined = 3, kLoadFailure = 4 };

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

fs::path data_dir() { return env_or("GPTD_DATA_DIR", GPTD_DATA_DIR); }

// ---- shared options -------------------------------------------------------

struct ModelOptions {
    std::string weights = env_or("GPTD_WEIGHTS", "");
    std::string tokenizer_dir = env_or("GPTD_TOKENIZER_DIR", (data_dir() / "gpt2").string());

    void add(CLI::App* app) {
        app->add_option("--weights", weights, "GPT-2 safetensors checkpoint (default: $GPTD_WEIGHTS)");
        app->add_option("--tokenizer-dir", tokenizer_dir, "directory holding vocab.json and merges.txt")
            ->capture_default_str();
    }

    Model load(RunManifest& manifest) const {
        if (weights.empty()) throw InvalidInput("--weights: no checkpoint given and GPTD_WEIGHTS is unset");
        manifest.add_input(weights);
        return Model::load(weights);
    }

    Tokenizer tokenizer() const { return Tokenizer::from_directory(tokenizer_dir); }
};

struct SpecOptions {
    std::string spec_file;
    std::string location = "value";
    double proportion = 0.5;
    std::string selection = "first";
    std::optional<uint64_t> mask_seed;
    std::string layers = "0-8";
    std::string value_scope = "per-head";

    void add(CLI::App* app, bool with_layers = true) {
        app->add_option("--spec", spec_file, "degradation spec as JSON (overrides the flags below)");
        app->add_option("--location", location, "value | embedding")->capture_default_str();
        app->add_option("--proportion", proportion, "share of rows/columns to zero")->capture_default_str();
        app->add_option("--selection", selection, "first | random")->capture_default_str();
        app->add_option("--mask-seed", mask_seed, "seed for --selection random");
        if (with_layers) app->add_option("--layers", layers, "layer set, e.g. 0-8 or 0,3,5")->capture_default_str();
        app->add_option("--value-scope", value_scope, "per-head | whole")->capture_default_str();
    }

    DegradationSpec build(int n_layers) const {
        DegradationSpec s;
        if (!spec_file.empty()) {
            try {
                s = DegradationSpec::from_json(json::parse(io::read_text(spec_file)));
            } catch (const json::exception& e) {
                throw InvalidInput("--spec: " + std::string(e.what()));
            }
        } else {
            if (location == "value") {
                s.location = MaskLocation::AttentionValueColumns;
            } else if (location == "embedding") {
                s.location = MaskLocation::EmbeddingRows;
            } else {
                throw InvalidInput("location: expected value or embedding, got '" + location + "'");
            }
            s.proportion = proportion;
            if (selection == "first") {
                s.selection = MaskSelection::FirstFraction;
            } else if (selection == "random") {
                s.selection = MaskSelection::RandomFraction;
            } else {
                throw InvalidInput("selection: expected first or random, got '" + selection + "'");
            }
            s.seed = mask_seed;
            if (s.location == MaskLocation::AttentionValueColumns) s.layers = parse_layer_set(layers);
            if (value_scope == "per-head") {
                s.value_scope = ValueScope::PerHead;
            } else if (value_scope == "whole") {
                s.value_scope = ValueScope::WholeMatrix;
            } else {
                throw InvalidInput("value_scope: expected per-head or whole, got '" + value_scope + "'");
            }
        }
        s.validate(n_layers);
        return s;
    }
};

// Base model plus its degraded counterpart, either masked in memory from a
// spec or read from an archive written by `degrade`.
struct ModelPair {
    Model base;
    Model degraded;
    json source;
};

ModelPair load_pair(const ModelOptions& mo, const SpecOptions& so, const std::string& degraded_path, RunManifest& manifest) {
    ModelPair p{mo.load(manifest), {}, {}};
    if (!degraded_path.empty()) {
        manifest.add_input(degraded_path);
        p.degraded = Model::load(degraded_path, p.base.config);
        p.source = {{"degraded_archive", fs::path(degraded_path).filename().string()},
                    {"sha256", manifest.inputs.at(degraded_path)}};
    } else {
        const DegradationSpec spec = so.build(p.base.config.n_layers);
        p.degraded = degrade(p.base, spec).first;
        p.source = spec.to_json();
    }
    return p;
}

struct CorpusOptions {
    std::string path;
    std::string format = "auto";

    void add(CLI::App* app, const std::string& flag = "--corpus", const std::string& format_flag = "--format") {
        app->add_option(flag, path, "corpus: .jsonl file, .cha file/directory, or a saved corpus directory")->required();
        app->add_option(format_flag, format, "auto | jsonl | chat-subset | directory")->capture_default_str();
    }

    Corpus load(RunManifest& manifest) const {
        CorpusFormat f;
        if (format == "auto") {
            if (fs::is_directory(path) && fs::exists(fs::path(path) / "manifest.json")) {
                f = CorpusFormat::Directory;
            } else if (fs::path(path).extension() == ".jsonl") {
                f = CorpusFormat::Jsonl;
            } else {
                f = CorpusFormat::ChatSubset;
            }
        } else {
            f = parse_corpus_format(format);
        }
        manifest.add_input(path);
        Corpus c = load_corpus(path, f);
        c.validate();
        return c;
    }
};

// ---- output plumbing ------------------------------------------------------

fs::path manifest_path_for(const fs::path& out) {
    if (fs::is_directory(out)) return out / "run_manifest.json";
    return fs::path(out.string() + ".manifest.json");
}

void finish(RunManifest& manifest, const fs::path& primary) {
    manifest.created = utc_timestamp();
    json j = manifest.to_json();
    j["id"] = manifest.id();
    io::write_atomic(manifest_path_for(primary), dump_json(j));
}

void write_json(RunManifest& manifest, const fs::path& path, json body, const fs::path& primary) {
    body["manifest"] = manifest.reference(manifest_path_for(primary));
    io::write_atomic(path, dump_json(body));
    manifest.outputs.push_back(path.filename().string());
}

void write_text(RunManifest& manifest, const fs::path& path, const std::string& text) {
    io::write_atomic(path, text);
    manifest.outputs.push_back(path.filename().string());
}

int report_exclusions(const std::vector<Exclusion>& excluded) {
    for (const auto& e : excluded) std::cerr << "excluded " << e.participant_id << ": " << e.reason << "\n";
    return static_cast<int>(excluded.size());
}

std::vector<TokenizedParticipant> tokenize_for_search(const Corpus& corpus, const Tokenizer& tok) {
    std::vector<Exclusion> excluded;
    auto participants = tokenize_corpus(corpus, tok, excluded);
    report_exclusions(excluded);
    if (participants.empty()) throw InvalidInput("corpus '" + corpus.id + "' has no scoreable participant");
    return participants;
}

DegradationSpec search_spec(const SpecOptions& so, int n_layers) {
    DegradationSpec s = so.build(n_layers);
    if (s.location != MaskLocation::AttentionValueColumns) {
        throw InvalidInput("location: pattern search needs value-column masking");
    }
    s.layers.clear();
    return s;
}

std::vector<std::string> read_prompts(const std::string& path, const std::vector<std::string>& inline_prompts) {
    std::vector<std::string> prompts = inline_prompts;
    if (!path.empty()) {
        for (auto& l : io::read_lines(path)) prompts.push_back(std::move(l));
    }
    if (prompts.empty()) throw InvalidInput("no prompts given");
    return prompts;
}

// ---- subcommands ----------------------------------------------------------

struct DegradeCmd {
    ModelOptions model;
    SpecOptions spec;
    std::string out, report;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("degrade", "write a degraded copy of a checkpoint and its mask report");
        model.add(c);
        spec.add(c);
        c->add_option("--out", out, "degraded safetensors archive")->required();
        c->add_option("--report", report, "mask report (default: <out>.mask.json)");
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "degrade";
        Model base = model.load(m);
        const DegradationSpec s = spec.build(base.config.n_layers);
        m.config = {{"spec", s.to_json()}};
        auto [degraded, mask] = gptd::degrade(base, s);
        degraded.weights.metadata["gptd_spec"] = s.to_json().dump();
        degraded.weights.metadata["gptd_manifest_id"] = m.id();
        degraded.weights.metadata["n_head"] = std::to_string(base.config.n_heads);
        degraded.weights.write_safetensors(out);
        m.outputs.push_back(fs::path(out).filename().string());
        const fs::path rp = report.empty() ? fs::path(out + ".mask.json") : fs::path(report);
        write_json(m, rp, {{"spec", s.to_json()}, {"mask", mask.to_json()}}, out);
        finish(m, out);
        std::cerr << "zeroed " << mask.parameters_zeroed << " parameters in " << mask.tensors.size() << " tensors\n";
    }
};

struct ScoreCmd {
    ModelOptions model;
    SpecOptions spec;
    CorpusOptions corpus;
    std::string degraded, out;
    int jobs = 1;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("score", "paired perplexity ratio for every participant");
        model.add(c);
        spec.add(c);
        corpus.add(c);
        c->add_option("--degraded", degraded, "degraded archive (instead of a spec)");
        c->add_option("--out", out, "score table (TSV)")->required();
        c->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "score";
        const Corpus cp = corpus.load(m);
        ModelPair pair = load_pair(model, spec, degraded, m);
        m.config = {{"degraded", pair.source}, {"corpus_id", cp.id}};
        ScoreTable table = score_corpus(cp, model.tokenizer(), pair.base, pair.degraded, jobs);
        table.spec = pair.source;
        write_text(m, out, format_score_table(table, m.reference(manifest_path_for(out))));
        finish(m, out);
        const int n_excluded = report_exclusions(table.excluded);
        std::cerr << "scored " << table.rows.size() << " participants, excluded " << n_excluded << "\n";
    }
};

struct EvalCmd {
    std::string scores, out;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("eval", "AUC, accuracy at EER and MMSE correlation of a score table");
        c->add_option("--scores", scores, "score table written by `score`")->required()->check(CLI::ExistingFile);
        c->add_option("--out", out, "report (JSON)")->required();
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "eval";
        m.add_input(scores);
        const ScoreTable table = read_score_table(scores);
        EvalReport r = evaluate(table.rows);
        r.corpus_id = table.corpus_id;
        r.spec = table.spec;
        if (table.spec.is_object() && table.spec.contains("layers")) r.pattern = table.spec["layers"].get<LayerSet>();
        write_json(m, out, r.to_json(), out);
        finish(m, out);
        std::cout << render_eval_table({{table.corpus_id, r}});
    }
};

struct SearchCmd {
    ModelOptions model;
    SpecOptions spec;
    CorpusOptions corpus;
    std::string strategy = "cumulative", out;
    int jobs = 1;
    bool no_prefix_cache = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("search", "rank layer patterns by AUC on one corpus");
        model.add(c);
        spec.add(c, false);
        corpus.add(c);
        c->add_option("--strategy", strategy, "individual | cumulative | combination")->capture_default_str();
        c->add_option("--out", out, "ranked patterns (TSV)")->required();
        c->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        c->add_flag("--no-prefix-cache", no_prefix_cache, "recompute unmasked lower layers for every pattern");
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "search";
        const Corpus cp = corpus.load(m);
        const Model base = model.load(m);
        const DegradationSpec s = search_spec(spec, base.config.n_layers);
        const PatternStrategy st = parse_pattern_strategy(strategy);
        m.config = {{"strategy", to_string(st)}, {"base_spec", s.to_json()}, {"corpus_id", cp.id}};
        const PatternScorer scorer(base, tokenize_for_search(cp, model.tokenizer()), s, jobs, !no_prefix_cache);
        const SearchResult r = search_patterns(scorer, st);

        json header = {{"corpus_id", cp.id},
                       {"strategy", to_string(st)},
                       {"base_spec", s.to_json()},
                       {"winner", layer_set_string(r.winner.layers)},
                       {"winner_auc", r.winner.auc},
                       {"tie_break", r.tie_break},
                       {"manifest", m.reference(manifest_path_for(out))}};
        std::ostringstream tsv;
        tsv << "# " << header.dump() << "\nrank\tpattern\tn_layers\tauc\tenumeration_index\n";
        char buf[40];
        for (size_t i = 0; i < r.ranked.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", r.ranked[i].auc);
            tsv << i + 1 << '\t' << layer_set_string(r.ranked[i].layers) << '\t' << r.ranked[i].layers.size() << '\t' << buf
                << '\t' << r.ranked[i].enumeration_index << '\n';
        }
        write_text(m, out, tsv.str());
        finish(m, out);
        std::cout << "winner: " << layer_set_string(r.winner.layers) << " (AUC " << r.winner.auc << ") among "
                  << r.ranked.size() << " patterns\n";
    }
};

struct CvCmd {
    ModelOptions model;
    SpecOptions spec;
    CorpusOptions corpus;
    std::string strategy = "cumulative", out;
    size_t k = 5;
    uint64_t seed = 0;
    int jobs = 1;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("cv", "k-fold cross-validation of the pattern search");
        model.add(c);
        spec.add(c, false);
        corpus.add(c);
        c->add_option("--strategy", strategy, "individual | cumulative | combination")->capture_default_str();
        c->add_option("--k", k, "number of folds")->capture_default_str();
        c->add_option("--seed", seed, "fold shuffle seed")->capture_default_str();
        c->add_option("--out", out, "CV result (JSON)")->required();
        c->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "cv";
        const Corpus cp = corpus.load(m);
        const Model base = model.load(m);
        const DegradationSpec s = search_spec(spec, base.config.n_layers);
        const PatternStrategy st = parse_pattern_strategy(strategy);
        m.config = {{"strategy", to_string(st)}, {"k", k}, {"seed", seed}, {"base_spec", s.to_json()}, {"corpus_id", cp.id}};
        const PatternScorer scorer(base, tokenize_for_search(cp, model.tokenizer()), s, jobs);
        const CVResult r = cross_validate(scorer, st, k, seed);
        json body = r.to_json();
        body["corpus_id"] = cp.id;
        body["base_spec"] = s.to_json();
        write_json(m, out, body, out);
        finish(m, out);
        std::cout << render_cv_table({{cp.id, r}});
    }
};

struct CrossDatasetCmd {
    ModelOptions model;
    SpecOptions spec;
    CorpusOptions train, test;
    std::string strategy = "cumulative", out;
    int jobs = 1;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("crossdataset", "pick a pattern on one corpus and evaluate it on another");
        model.add(c);
        spec.add(c, false);
        train.add(c, "--train", "--train-format");
        test.add(c, "--test", "--test-format");
        c->add_option("--strategy", strategy, "individual | cumulative | combination")->capture_default_str();
        c->add_option("--out", out, "report (JSON)")->required();
        c->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "crossdataset";
        const Corpus tr = train.load(m);
        const Corpus te = test.load(m);
        const Model base = model.load(m);
        const DegradationSpec s = search_spec(spec, base.config.n_layers);
        const PatternStrategy st = parse_pattern_strategy(strategy);
        m.config = {{"strategy", to_string(st)}, {"base_spec", s.to_json()}, {"train", tr.id}, {"test", te.id}};
        const Tokenizer tok = model.tokenizer();
        const PatternScorer train_scorer(base, tokenize_for_search(tr, tok), s, jobs);
        const PatternScorer test_scorer(base, tokenize_for_search(te, tok), s, jobs, false);
        SearchResult search;
        const EvalReport r = cross_dataset(train_scorer, test_scorer, st, tr.id, te.id, &search);
        json body = r.to_json();
        json sj = search.to_json();
        sj.erase("ranked");
        body["search"] = sj;
        write_json(m, out, body, out);
        finish(m, out);
        std::cout << render_eval_table({{tr.id + " -> " + te.id, r}});
    }
};

struct GenCmd {
    ModelOptions model;
    SpecOptions spec;
    std::string degraded, prompts_file, out, table;
    std::vector<std::string> prompts;
    GenConfig gen;
    int jobs = 1;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("generate", "beam-search continuations from the base and degraded models");
        model.add(c);
        spec.add(c);
        c->add_option("--degraded", degraded, "degraded archive (instead of a spec)");
        prompts_file = (data_dir() / "prompts" / "generation_prompts.txt").string();
        c->add_option("--prompts", prompts_file, "prompt file, one per line")->capture_default_str();
        c->add_option("--prompt", prompts, "prompt text (repeatable; replaces --prompts)");
        c->add_option("--beams", gen.beams)->capture_default_str();
        c->add_option("--min-new-tokens", gen.min_new_tokens)->capture_default_str();
        c->add_option("--max-new-tokens", gen.max_new_tokens)->capture_default_str();
        c->add_option("--top-p", gen.top_p)->capture_default_str();
        c->add_option("--repetition-penalty", gen.repetition_penalty)->capture_default_str();
        c->add_option("--seed", gen.seed, "recorded in the manifest; beam search itself is deterministic")
            ->capture_default_str();
        c->add_option("--out", out, "generation records (JSON)")->required();
        c->add_option("--table", table, "side-by-side text table (default: <out>.txt)");
        c->add_option("--jobs", jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        c->callback([this] { run(); });
    }

    void run() {
        gen.validate();
        RunManifest m;
        m.command = "generate";
        const auto ps = prompts.empty() ? read_prompts(prompts_file, {}) : prompts;
        if (prompts.empty()) m.add_input(prompts_file);
        ModelPair pair = load_pair(model, spec, degraded, m);
        m.config = {{"gen_config", gen.to_json()}, {"degraded", pair.source}};
        const Tokenizer tok = model.tokenizer();
        std::vector<PairedGeneration> records(ps.size());
        parallel_for(ps.size(), jobs, [&](int, size_t i) {
            records[i] = paired_generate(ps[i], pair.base, pair.degraded, tok, gen);
        });
        json arr = json::array();
        size_t failed = 0;
        for (const auto& r : records) {
            arr.push_back(r.to_json());
            failed += r.ok ? 0 : 1;
        }
        write_json(m, out, {{"gen_config", gen.to_json()}, {"degraded", pair.source}, {"records", arr}}, out);
        const std::string rendered = render_generation_table(records);
        const fs::path tp = table.empty() ? fs::path(out + ".txt") : fs::path(table);
        write_text(m, tp, "# manifest " + m.id() + "\n" + rendered);
        finish(m, out);
        std::cout << rendered;
        if (failed) std::cerr << failed << " prompt(s) had no non-empty pair\n";
    }
};

struct LexCmd {
    std::string generations, freq, lexicon_dir, out;
    double log_base = 0.0;
    bool per_million = false;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("lexstats", "lexical frequency and type-token ratio of generated text");
        c->add_option("--generations", generations, "records written by `generate`")->required()->check(CLI::ExistingFile);
        c->add_option("--freq", freq, "word frequency table (word and count columns)")->required()->check(CLI::ExistingFile);
        lexicon_dir = data_dir().string();
        c->add_option("--data-dir", lexicon_dir, "directory holding lexicon/*.txt")->capture_default_str();
        c->add_option("--log-base", log_base, "logarithm base (0: natural)")->capture_default_str();
        c->add_flag("--per-million", per_million, "normalise counts per million words before the log");
        c->add_option("--out", out, "report (JSON)")->required();
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "lexstats";
        m.add_input(generations);
        m.add_input(freq);
        const json g = json::parse(io::read_text(generations));
        std::vector<std::string> base_texts, degraded_texts;
        for (const auto& r : g.at("records")) {
            if (!r.value("ok", false)) continue;
            base_texts.push_back(r.at("base_text").get<std::string>());
            degraded_texts.push_back(r.at("degraded_text").get<std::string>());
        }
        LexConfig lc = LexConfig::defaults(lexicon_dir);
        lc.log_base = log_base;
        lc.per_million = per_million;
        const FreqTable table = FreqTable::load(freq);
        const LexReport r = lexical_stats(base_texts, degraded_texts, table, lc);
        json cfg = lc.to_json();
        cfg.erase("stopwords");
        cfg["stopword_count"] = lc.stopwords.size();
        m.config = {{"lex_config", cfg}, {"pairs", base_texts.size()}};
        json body = r.to_json();
        body["lex_config"] = cfg;
        body["pairs"] = base_texts.size();
        if (g.contains("gen_config")) body["gen_config"] = g["gen_config"];
        write_json(m, out, body, out);
        finish(m, out);
        std::cout << "TTR  base " << r.base.ttr << "  degraded " << r.degraded.ttr << "\n";
        auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
        std::cout << "LF   base " << show(r.base.mean_log_freq) << "  degraded " << show(r.degraded.mean_log_freq) << "\n";
        if (r.welch) std::cout << "Welch t " << r.welch->t << "  p " << r.welch->p_value << "\n";
    }
};

struct SaliencyCmd {
    ModelOptions model;
    SpecOptions spec;
    std::string degraded, prompts_file, which = "both", out, html;
    std::vector<std::string> prompts;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("saliency", "gradient x input saliency of the predicted next token");
        model.add(c);
        spec.add(c);
        c->add_option("--degraded", degraded, "degraded archive (instead of a spec)");
        c->add_option("--prompt", prompts, "prompt text (repeatable)");
        c->add_option("--prompts", prompts_file, "prompt file, one per line");
        c->add_option("--model", which, "both (first prompt where predictions agree) | base | degraded")
            ->capture_default_str();
        c->add_option("--out", out, "saliency maps (JSON)")->required();
        c->add_option("--html", html, "heat view (default: <out>.html)");
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "saliency";
        const auto ps = read_prompts(prompts_file, prompts);
        if (!prompts_file.empty()) m.add_input(prompts_file);
        ModelPair pair = load_pair(model, spec, degraded, m);
        m.config = {{"model", which}, {"degraded", pair.source}, {"prompts", ps}};
        const Tokenizer tok = model.tokenizer();
        json body;
        std::vector<SaliencyMap> maps;
        if (which == "both") {
            const AlignedSaliency a = aligned_saliency(ps, pair.base, pair.degraded, tok);
            body = a.to_json();
            if (a.aligned) maps = {*a.base, *a.degraded};
            else std::cerr << "no prompt produced the same prediction from both models\n";
        } else if (which == "base" || which == "degraded") {
            const auto ids = tok.encode_ids(ps.front());
            const SaliencyMap s = which == "base" ? saliency(pair.base, ids, "gpt2", &tok)
                                                  : saliency(pair.degraded, ids, "gpt-d", &tok);
            body = {{"prompt", ps.front()}, {"map", s.to_json()}};
            maps = {s};
        } else {
            throw InvalidInput("--model: expected both, base or degraded");
        }
        body["degraded"] = pair.source;
        write_json(m, out, body, out);
        const fs::path hp = html.empty() ? fs::path(out + ".html") : fs::path(html);
        write_text(m, hp, "<!-- manifest " + m.id() + " -->\n" + render_saliency_html(maps));
        finish(m, out);
        for (const auto& s : maps) std::cout << render_saliency_text(s) << "\n";
    }
};

struct SanityCmd {
    ModelOptions model;
    SpecOptions spec;
    std::string degraded, prompts_file, out;
    SanityConfig cfg;

    void add(CLI::App& app) {
        auto* c = app.add_subcommand("make-sanity-corpus", "synthetic corpus: base-model controls, degraded-model cases");
        model.add(c);
        spec.add(c);
        c->add_option("--degraded", degraded, "degraded archive (instead of a spec)");
        prompts_file = (data_dir() / "prompts" / "sanity_prompts.txt").string();
        c->add_option("--prompts", prompts_file, "prompt pool, one per line")->capture_default_str();
        c->add_option("--n-per-class", cfg.n_per_class)->capture_default_str();
        c->add_option("--seed", cfg.seed)->capture_default_str();
        c->add_option("--min-new-tokens", cfg.sampling.min_new_tokens)->capture_default_str();
        c->add_option("--max-new-tokens", cfg.sampling.max_new_tokens)->capture_default_str();
        c->add_option("--top-p", cfg.sampling.top_p)->capture_default_str();
        c->add_option("--repetition-penalty", cfg.sampling.repetition_penalty)->capture_default_str();
        c->add_option("--out", out, "output corpus directory")->required();
        c->add_option("--jobs", cfg.jobs, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
        c->callback([this] { run(); });
    }

    void run() {
        RunManifest m;
        m.command = "make-sanity-corpus";
        m.add_input(prompts_file);
        const auto ps = read_prompts(prompts_file, {});
        ModelPair pair = load_pair(model, spec, degraded, m);
        json cj = cfg.to_json();
        m.config = {{"sanity", cj}, {"degraded", pair.source}};
        SanityResult r = build_sanity_corpus(pair.base, pair.degraded, model.tokenizer(), ps, cfg);
        r.corpus.provenance.push_back("degraded model: " + pair.source.dump());
        r.corpus.provenance.push_back("run manifest id: " + m.id());
        fs::create_directories(out);
        r.corpus.save(out);
        m.outputs = {"manifest.json", "transcripts.jsonl"};
        finish(m, out);
        for (const auto& f : r.failures) std::cerr << "generation failed: " << f << "\n";
        const auto counts = r.corpus.class_counts();
        auto count = [&](Label l) { auto it = counts.find(l); return it == counts.end() ? size_t{0} : it->second; };
        std::cerr << "wrote " << r.corpus.transcripts.size() << " transcripts (" << count(Label::Control) << " control, "
                  << count(Label::Dementia) << " dementia)\n";
    }
};

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"gptd: paired-perplexity analysis with a degraded GPT-2"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolkitVersion);
    DegradeCmd degrade_cmd;
    ScoreCmd score_cmd;
    EvalCmd eval_cmd;
    SearchCmd search_cmd;
    CvCmd cv_cmd;
    CrossDatasetCmd cross_cmd;
    GenCmd gen_cmd;
    LexCmd lex_cmd;
    SaliencyCmd saliency_cmd;
    SanityCmd sanity_cmd;
    degrade_cmd.add(app);
    score_cmd.add(app);
    eval_cmd.add(app);
    search_cmd.add(app);
    cv_cmd.add(app);
    cross_cmd.add(app);
    gen_cmd.add(app);
    lex_cmd.add(app);
    saliency_cmd.add(app);
    sanity_cmd.add(app);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const UndefinedMetric& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUndefined;
    } catch (const LoadError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kLoadFailure;
    } catch (const InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kBadInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kOk;
}

}  // namespace gptd::cli
