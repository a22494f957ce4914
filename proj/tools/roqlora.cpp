// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// roqlora command-line front end.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "roqlora/analysis.hpp"
#include "roqlora/container.hpp"
#include "roqlora/corpus.hpp"
#include "roqlora/errors.hpp"
#include "roqlora/harness.hpp"
#include "roqlora/metrics.hpp"
#include "roqlora/quant.hpp"
#include "roqlora/tinylm.hpp"
#include "roqlora/train.hpp"

#ifndef ROQLORA_DATA_DIR
#define ROQLORA_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw roqlora::InvalidArgument("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw roqlora::InvalidArgument("cannot write " + path.string());
    out << text;
}

void emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
    } else {
        write_file(out_path, text);
    }
}

std::string dump(const ojson& j) { return j.dump(2, ' ', false, ojson::error_handler_t::replace) + "\n"; }

roqlora::Task task_or_throw(const std::string& name) {
    const auto task = roqlora::parse_task(name);
    if (!task) throw roqlora::InvalidArgument("unknown task \"" + name + "\"");
    return *task;
}

// ---------------------------------------------------------------------------
// quantize

struct QuantizeArgs {
    std::string input, output;
    std::size_t block_size = 64;
    bool dq = false;
    std::size_t dq_block_size = 256;
    std::vector<std::string> skip{"embed_tokens", "lm_head"};
    bool include_vectors = false;
};

int run_quantize(const QuantizeArgs& a) {
    using namespace roqlora;
    const auto in = TensorContainer::load(a.input);
    TensorContainer out;
    ojson summary = ojson::array();
    for (const auto& name : in.names()) {
        const bool skipped = std::any_of(a.skip.begin(), a.skip.end(),
                                         [&](const std::string& s) { return name.find(s) != std::string::npos; });
        if (in.dtype(name) == DType::NF4) {
            out.put(name, in.quantized(name));
            continue;
        }
        auto dense = in.dense(name);
        if (skipped || (dense.shape.size() < 2 && !a.include_vectors) || dense.values.empty()) {
            out.put(name, std::move(dense), in.dtype(name));
            continue;
        }
        auto qt = quant::quantize(std::span<const double>(dense.values), a.block_size, dense.shape);
        if (a.dq) qt = qt.with_double_quantization(a.dq_block_size);
        const auto restored = quant::dequantize(qt);
        double max_err = 0;
        for (std::size_t i = 0; i < restored.size(); ++i) max_err = std::max(max_err, std::abs(restored[i] - dense.values[i]));
        summary.push_back({{"name", name},
                           {"elements", qt.element_count()},
                           {"blocks", qt.block_count()},
                           {"max_abs_error", max_err}});
        out.put(name, std::move(qt));
    }
    out.save(a.output);
    ojson report;
    report["block_size"] = a.block_size;
    report["double_quantization"] = a.dq;
    if (a.dq) report["dq_block_size"] = a.dq_block_size;
    report["bits_per_param"] =
        a.dq ? quant::bits_per_param(a.block_size, quant::DqParams{a.dq_block_size, 32.0}) : quant::bits_per_param(a.block_size);
    report["tensors"] = summary;
    std::cout << dump(report);
    return 0;
}

// ---------------------------------------------------------------------------
// footprint

struct FootprintArgs {
    double params = 0, embed_params = 0;
    std::string scheme = "nf4";
    std::size_t block_size = 64;
    bool dq = false;
    std::size_t dq_block_size = 256;
};

int run_footprint(const FootprintArgs& a) {
    using namespace roqlora::quant;
    FootprintModel model;
    if (a.scheme == "fp16") {
        model = FootprintModel::fp16(a.params);
    } else if (a.scheme == "nf4") {
        std::optional<DqParams> dq;
        if (a.dq) dq = DqParams{a.dq_block_size, 32.0};
        model = FootprintModel::nf4(a.params, a.embed_params, a.block_size, dq);
    } else {
        throw roqlora::InvalidArgument("scheme must be nf4 or fp16");
    }
    const double bytes = footprint_bytes(model);
    ojson j;
    j["scheme"] = a.scheme;
    j["params"] = a.params;
    j["embed_params"] = a.scheme == "fp16" ? 0.0 : a.embed_params;
    j["bits_per_param"] = model.base_bits_per_param + model.overhead_bits_per_param;
    j["bytes"] = bytes;
    j["gigabytes"] = roqlora::metrics::round_to(to_gigabytes(bytes), 3);
    std::cout << dump(j);
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config, corpus, out, base, vocab;
};

int run_train(const TrainArgs& a) {
    using namespace roqlora;
    using namespace roqlora::tinylm;
    const json cfg = a.config.empty() ? json::object() : json::parse(read_file(a.config));
    const json m = cfg.value("model", json::object());
    const json ad = cfg.value("adapter", json::object());
    const json tr = cfg.value("train", json::object());
    const std::uint64_t seed = cfg.value("seed", std::uint64_t{0});

    auto tokenizer = make_tokenizer(a.vocab.empty() ? cfg.value("vocab", std::string()) : a.vocab);

    TinyLm model;
    if (!a.base.empty()) {
        model = TinyLm::load(a.base);
    } else {
        ModelConfig mc;
        mc.vocab_size = m.value("vocab_size", tokenizer->vocab_size());
        mc.d_model = m.value("d_model", mc.d_model);
        mc.n_heads = m.value("n_heads", mc.n_heads);
        mc.n_layers = m.value("n_layers", mc.n_layers);
        mc.d_ff = m.value("d_ff", mc.d_ff);
        mc.max_seq_len = m.value("max_seq_len", mc.max_seq_len);
        model = TinyLm::init(mc, seed);
    }
    if (cfg.value("quantize_base", true)) model.quantize_base(cfg.value("block_size", std::size_t{64}));

    lora::AdapterConfig ac;
    ac.rank = ad.value("rank", ac.rank);
    ac.alpha = ad.value("alpha", ac.alpha);
    ac.dropout = ad.value("dropout", ac.dropout);
    if (ad.contains("targets")) {
        const auto targets = ad["targets"].get<std::vector<std::string>>();
        ac.target = [targets](const std::string& layer) {
            return std::any_of(targets.begin(), targets.end(), [&](const std::string& t) {
                return layer.size() >= t.size() && layer.compare(layer.size() - t.size(), t.size(), t) == 0;
            });
        };
    }
    if (model.adapted_layers().empty()) model.attach_adapters(ac, seed + 1);

    TrainConfig tc;
    tc.learning_rate = tr.value("learning_rate", tc.learning_rate);
    tc.weight_decay = tr.value("weight_decay", tc.weight_decay);
    tc.grad_clip_norm = tr.value("grad_clip_norm", tc.grad_clip_norm);
    tc.micro_batch = tr.value("micro_batch", tc.micro_batch);
    tc.grad_accum_steps = tr.value("grad_accum_steps", tc.grad_accum_steps);
    tc.total_steps = tr.value("total_steps", tc.total_steps);
    tc.seed = tr.value("seed", seed);

    std::vector<std::vector<int>> sequences;
    std::ifstream in(a.corpus, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open corpus " + a.corpus);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::string text = line;
        if (line.front() == '{') text = json::parse(line).at("text").get<std::string>();
        auto seq = training_sequence(text, *tokenizer, model.config().max_seq_len);
        if (seq.size() >= 2) sequences.push_back(std::move(seq));
    }
    const auto source = cycle_sequences(std::move(sequences));

    const auto checksum = model.frozen_checksum();
    Trainer trainer(model, tc);
    for (std::size_t step = 1; step <= tc.total_steps; ++step) {
        const auto r = trainer.step(source);
        std::printf("step %zu loss %.6f grad_norm %.6f\n", step, r.loss, r.grad_norm);
    }
    if (model.frozen_checksum() != checksum) throw std::logic_error("frozen weights changed during training");
    model.save(a.out);
    std::printf("saved %s\n", a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
    std::string ckpt, prompt, stop = "\n", vocab;
    double temperature = 0.6, top_p = 0.9;
    std::size_t max_tokens = 10;
    std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
    using namespace roqlora;
    const auto model = tinylm::TinyLm::load(a.ckpt);
    const auto tokenizer = make_tokenizer(a.vocab);
    tinylm::GenerationConfig gen;
    gen.temperature = a.temperature;
    gen.top_p = a.top_p;
    gen.stop = a.stop;
    gen.max_new_tokens = a.max_tokens;
    gen.seed = a.seed;
    tinylm::Rng rng(a.seed);
    std::cout << tinylm::generate(model, *tokenizer, a.prompt, gen, rng) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// corpus

struct CorpusArgs {
    std::string input, output, vocab;
    std::size_t max_tokens = 1024;
    bool stats = false;
};

int run_corpus(const CorpusArgs& a) {
    using namespace roqlora;
    const auto tokenizer = make_tokenizer(a.vocab);
    corpus::CorpusPipeline pipeline(*tokenizer, a.max_tokens);

    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!a.output.empty() && a.output != "-") {
        file.open(a.output, std::ios::binary);
        if (!file) throw InvalidArgument("cannot write " + a.output);
        out = &file;
    }
    const auto sink = [&](const corpus::Chunk& c) {
        ojson j;
        j["text"] = c.text;
        j["token_count"] = c.token_count;
        *out << j.dump(-1, ' ', false, ojson::error_handler_t::replace) << '\n';
    };

    std::vector<fs::path> files;
    if (fs::is_directory(a.input)) {
        for (const auto& e : fs::recursive_directory_iterator(a.input)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(a.input);
    }
    for (const auto& path : files) {
        if (path.extension() == ".jsonl") {
            std::ifstream in(path, std::ios::binary);
            std::string line;
            std::size_t n = 0;
            while (std::getline(in, line)) {
                ++n;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                const auto j = json::parse(line);
                std::string id = path.filename().string() + ":" + std::to_string(n);
                if (j.contains("id")) id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
                pipeline.add_document(id, j.at("text").get<std::string>(), sink);
            }
        } else {
            pipeline.add_document(path.string(), read_file(path), sink);
        }
    }
    if (a.stats) {
        const auto& s = pipeline.stats();
        ojson j;
        j["documents"] = s.documents;
        j["sentences"] = s.sentences;
        j["kept"] = s.kept;
        j["removed"] = s.removed;
        j["dropped"] = s.dropped_oversize;
        j["chunks"] = s.chunks;
        j["chunk_tokens"] = s.chunk_tokens;
        j["tokenizer"] = tokenizer->name();
        std::cerr << dump(j);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// score

struct ScoreArgs {
    std::string task, pred, gold, out, template_file;
};

int run_score(const ScoreArgs& a) {
    using namespace roqlora::harness;
    const auto task = task_or_throw(a.task);
    const auto spec = a.template_file.empty() ? default_task_spec(task) : task_spec_from_file(task, a.template_file);
    const auto items = load_dataset(task, a.gold);

    std::vector<std::optional<std::string>> completions;
    std::ifstream in(a.pred, std::ios::binary);
    if (!in) throw roqlora::InvalidArgument("cannot open " + a.pred);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = json::parse(line);
        const json* value = nullptr;
        for (const char* key : {"prediction", "completion", "text", "output"}) {
            if (j.contains(key)) {
                value = &j[key];
                break;
            }
        }
        if (!value) throw roqlora::FormatError("prediction record lacks a \"prediction\" field");
        completions.push_back(value->is_null() ? std::nullopt : std::optional<std::string>(value->get<std::string>()));
    }
    const auto report = score_completions(spec, items, completions);
    emit(a.out, to_json(report));
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string task, data, backend = "replay", out, trace, template_file, shots_data;
    std::string replay, ckpt, vocab, endpoint;
    std::size_t shots = 0, parallel = 1;
    std::uint64_t seed = 0, shot_seed = 0;
    int retries = 3;
    int backoff_ms = 500;
};

int run_eval(const EvalArgs& a) {
    using namespace roqlora;
    using namespace roqlora::harness;
    const auto task = task_or_throw(a.task);
    const auto spec = a.template_file.empty() ? default_task_spec(task) : task_spec_from_file(task, a.template_file);
    auto items = load_dataset(task, a.data);

    std::unique_ptr<Backend> backend;
    if (a.backend == "replay") {
        if (a.replay.empty()) throw InvalidArgument("--replay is required with --backend replay");
        backend = std::make_unique<ReplayBackend>(ReplayBackend::load(a.replay));
    } else if (a.backend == "local") {
        if (a.ckpt.empty()) throw InvalidArgument("--ckpt is required with --backend local");
        backend = std::make_unique<LocalBackend>(tinylm::TinyLm::load(a.ckpt), make_tokenizer(a.vocab));
    } else if (a.backend == "http") {
        auto opts = HttpBackendOptions::from_env();
        if (!a.endpoint.empty()) opts.url = a.endpoint;
        opts.max_attempts = a.retries;
        opts.initial_backoff = std::chrono::milliseconds(a.backoff_ms);
        backend = std::make_unique<HttpBackend>(opts);
    } else {
        throw InvalidArgument("backend must be local, http or replay");
    }

    RunOptions options;
    options.few = FewShotConfig{a.shots, a.shot_seed};
    options.seed = a.seed;
    options.parallelism = a.parallel;

    TaskReport report;
    if (a.shots > 0 && a.shots_data.empty()) {
        auto [shots, rest] = split_shots(items, options.few);
        report = run_task(*backend, spec, rest, shots, options);
    } else {
        const auto pool = a.shots_data.empty() ? std::vector<TaskItem>{} : load_dataset(task, a.shots_data);
        report = run_task(*backend, spec, items, pool, options);
    }
    emit(a.out, to_json(report));
    if (!a.trace.empty()) write_file(a.trace, trace_jsonl(report));
    if (report.failed_items > 0)
        std::cerr << report.failed_items << " of " << report.items << " items failed\n";
    return 0;
}

// ---------------------------------------------------------------------------
// aggregate

int run_aggregate(const std::vector<std::string>& reports, const std::string& out) {
    using namespace roqlora::harness;
    std::vector<TaskReport> parsed;
    for (const auto& path : reports) parsed.push_back(task_report_from_json(read_file(path)));
    emit(out, to_json(aggregate_runs(std::move(parsed))));
    return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
    std::string data, report, vocab;
    std::string stopwords = std::string(ROQLORA_DATA_DIR) + "/stopwords_ro.txt";
    std::string lemmas = std::string(ROQLORA_DATA_DIR) + "/lemmas_ro.tsv";
    std::size_t top_n = 20;
};

int run_analyze(const AnalyzeArgs& a) {
    using namespace roqlora::analysis;
    const auto items = load_mcq(a.data);
    const auto tokenizer = roqlora::make_tokenizer(a.vocab);
    const auto stats = analyze(items, load_stopwords(a.stopwords), load_lemmas(a.lemmas), *tokenizer, a.top_n);
    emit(a.report, to_json(stats));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"roqlora: NF4/LoRA desk-scale training and Romanian evaluation harness"};
    app.require_subcommand(1);

    QuantizeArgs qa;
    auto* quantize = app.add_subcommand("quantize", "NF4-quantize the matrices of a tensor container");
    quantize->add_option("--input", qa.input, "Input container")->required()->check(CLI::ExistingFile);
    quantize->add_option("--output", qa.output, "Output container")->required();
    quantize->add_option("--block-size", qa.block_size, "First-level block size")->capture_default_str();
    quantize->add_flag("--dq", qa.dq, "Double-quantize the block scales");
    quantize->add_option("--dq-block-size", qa.dq_block_size, "Second-level block size")->capture_default_str();
    quantize->add_option("--skip", qa.skip, "Keep tensors whose name contains any of these")->capture_default_str();
    quantize->add_flag("--include-vectors", qa.include_vectors, "Also quantize rank-1 tensors");

    FootprintArgs fa;
    auto* footprint = app.add_subcommand("footprint", "Estimate model weight memory");
    footprint->add_option("--params", fa.params, "Total parameter count")->required();
    footprint->add_option("--embed-params", fa.embed_params, "Embedding + head parameters kept at 16 bits")
        ->capture_default_str();
    footprint->add_option("--scheme", fa.scheme, "nf4 or fp16")
        ->check(CLI::IsMember({"nf4", "fp16"}))
        ->capture_default_str();
    footprint->add_option("--block-size", fa.block_size)->capture_default_str();
    footprint->add_flag("--dq", fa.dq, "Account for double quantization");
    footprint->add_option("--dq-block-size", fa.dq_block_size)->capture_default_str();

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "QLoRA-train adapters on a tiny decoder");
    train->add_option("--config", ta.config, "JSON run config")->check(CLI::ExistingFile);
    train->add_option("--corpus", ta.corpus, "Chunk JSONL or plain text, one sequence per line")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", ta.out, "Checkpoint path")->required();
    train->add_option("--base", ta.base, "Start from this checkpoint")->check(CLI::ExistingFile);
    train->add_option("--vocab", ta.vocab, "Vocabulary file (byte-level when absent)");

    SampleArgs sa;
    auto* sample = app.add_subcommand("sample", "Generate a completion from a checkpoint");
    sample->add_option("--ckpt", sa.ckpt)->required()->check(CLI::ExistingFile);
    sample->add_option("--prompt", sa.prompt)->required();
    sample->add_option("--temperature", sa.temperature)->capture_default_str();
    sample->add_option("--top-p", sa.top_p)->capture_default_str();
    sample->add_option("--max-tokens", sa.max_tokens)->capture_default_str();
    sample->add_option("--stop", sa.stop, "Stop sequence (escape sequences such as \\n are decoded)");
    sample->add_option("--seed", sa.seed)->capture_default_str();
    sample->add_option("--vocab", sa.vocab);

    CorpusArgs ca;
    auto* corpus = app.add_subcommand("corpus", "Split, script-filter and pack text into chunks");
    corpus->add_option("--input", ca.input, "File or directory (.txt documents or {id,text} .jsonl)")
        ->required()
        ->check(CLI::ExistingPath);
    corpus->add_option("--output", ca.output, "Chunk JSONL (stdout by default)");
    corpus->add_option("--max-tokens", ca.max_tokens)->capture_default_str();
    corpus->add_flag("--stats", ca.stats, "Print counters to stderr");
    corpus->add_option("--vocab", ca.vocab);

    ScoreArgs sc;
    auto* score = app.add_subcommand("score", "Score predictions against a task dataset");
    score->add_option("--task", sc.task)->required();
    score->add_option("--pred", sc.pred, "JSONL of {\"prediction\"}, aligned with --gold")
        ->required()
        ->check(CLI::ExistingFile);
    score->add_option("--gold", sc.gold, "Task dataset JSONL")->required()->check(CLI::ExistingFile);
    score->add_option("--out", sc.out);
    score->add_option("--template", sc.template_file)->check(CLI::ExistingFile);

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Run one task through a generation backend");
    eval->add_option("--task", ea.task)->required();
    eval->add_option("--data", ea.data)->required()->check(CLI::ExistingFile);
    eval->add_option("--backend", ea.backend)
        ->check(CLI::IsMember({"local", "http", "replay"}))
        ->capture_default_str();
    eval->add_option("--shots", ea.shots)->check(CLI::IsMember({0, 1, 3, 5}))->capture_default_str();
    eval->add_option("--shots-data", ea.shots_data, "Exemplar split (drawn from --data when absent)")
        ->check(CLI::ExistingFile);
    eval->add_option("--shot-seed", ea.shot_seed, "Exemplar shuffle seed")->capture_default_str();
    eval->add_option("--seed", ea.seed, "Generation seed; item i uses seed + i")->capture_default_str();
    eval->add_option("--out", ea.out);
    eval->add_option("--trace", ea.trace);
    eval->add_option("--template", ea.template_file)->check(CLI::ExistingFile);
    eval->add_option("--replay", ea.replay)->check(CLI::ExistingFile);
    eval->add_option("--ckpt", ea.ckpt)->check(CLI::ExistingFile);
    eval->add_option("--vocab", ea.vocab);
    eval->add_option("--endpoint", ea.endpoint, "Overrides ROQLORA_ENDPOINT");
    eval->add_option("--retries", ea.retries)->capture_default_str();
    eval->add_option("--backoff-ms", ea.backoff_ms)->capture_default_str();
    eval->add_option("--parallel", ea.parallel)->capture_default_str();

    std::vector<std::string> agg_reports;
    std::string agg_out;
    auto* aggregate = app.add_subcommand("aggregate", "Combine seven task reports into the averaged report");
    aggregate->add_option("reports", agg_reports)->required()->check(CLI::ExistingFile);
    aggregate->add_option("--out", agg_out);

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "Dataset statistics for a multiple-choice JSONL file");
    analyze->add_option("--data", aa.data)->required()->check(CLI::ExistingFile);
    analyze->add_option("--stopwords", aa.stopwords)->capture_default_str();
    analyze->add_option("--lemmas", aa.lemmas)->capture_default_str();
    analyze->add_option("--report", aa.report);
    analyze->add_option("--top-n", aa.top_n)->capture_default_str();
    analyze->add_option("--vocab", aa.vocab);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*quantize) return run_quantize(qa);
        if (*footprint) return run_footprint(fa);
        if (*train) return run_train(ta);
        if (*sample) {
            // Allow --stop "\n" from a shell.
            std::string stop;
            for (std::size_t i = 0; i < sa.stop.size(); ++i) {
                if (sa.stop[i] == '\\' && i + 1 < sa.stop.size() && sa.stop[i + 1] == 'n') {
                    stop += '\n';
                    ++i;
                } else {
                    stop += sa.stop[i];
                }
            }
            sa.stop = stop;
            return run_sample(sa);
        }
        if (*corpus) return run_corpus(ca);
        if (*score) return run_score(sc);
        if (*eval) return run_eval(ea);
        if (*aggregate) return run_aggregate(agg_reports, agg_out);
        if (*analyze) return run_analyze(aa);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
