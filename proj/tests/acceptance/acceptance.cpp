// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits non-zero if
// any criterion fails or exceeds its time budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <json.hpp>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lora_support.hpp"
#include "oracles.hpp"
#include "roqlora/analysis.hpp"
#include "roqlora/corpus.hpp"
#include "roqlora/harness.hpp"
#include "roqlora/metrics.hpp"
#include "roqlora/quant.hpp"
#include "roqlora/train.hpp"
#include "roqlora/unicode.hpp"

using namespace roqlora;

namespace {

struct Outcome {
    enum Status { Pass, Fail, Skip } status = Pass;
    std::string detail;
};

/// Collects failed expectations for one criterion.
class Checker {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok && failures_.size() < 5) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void note(const std::string& s) { notes_.push_back(s); }
    Outcome outcome() const {
        Outcome o;
        o.status = failed_ == 0 ? Outcome::Pass : Outcome::Fail;
        std::string d;
        for (const auto& n : notes_) d += (d.empty() ? "" : "; ") + n;
        for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + ("failed: " + f);
        if (failed_ > failures_.size()) d += "; +" + std::to_string(failed_ - failures_.size()) + " more";
        o.detail = d;
        return o;
    }

private:
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
    std::size_t failed_ = 0;
};

std::string fmt(double v, int prec = 6) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

std::string lower_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// ---------------------------------------------------------------------------

Outcome overhead_arithmetic() {
    Checker c;
    const double plain = quant::bits_per_param(64);
    const double dq = quant::bits_per_param(64, quant::DqParams{256, 32});
    c.expect(plain == 4.5, "bits_per_param(64) = " + fmt(plain));
    c.expect(dq >= 4.1269 && dq <= 4.1270, "bits_per_param(64, dq) = " + fmt(dq, 8));
    c.note("nf4 " + fmt(plain) + " bits, nf4+dq " + fmt(dq, 8) + " bits");
    return c.outcome();
}

Outcome footprint_targets() {
    Checker c;
    const double params = 6.74e9;
    const double embed = 2.0 * 32000 * 4096;  // input embedding and output head
    const double fp16 = quant::to_gigabytes(quant::footprint_bytes(quant::FootprintModel::fp16(params)));
    const double nf4 = quant::to_gigabytes(quant::footprint_bytes(quant::FootprintModel::nf4(params, embed)));
    c.expect(std::abs(fp16 - 13.4) / 13.4 <= 0.01, "fp16 " + fmt(fp16) + " GB");
    c.expect(std::abs(nf4 - 4.7) / 4.7 <= 0.15, "nf4 " + fmt(nf4) + " GB");
    c.note("fp16 " + fmt(fp16, 4) + " GB, nf4 " + fmt(nf4, 4) + " GB");
    return c.outcome();
}

Outcome nf4_roundtrip() {
    Checker c;
    std::mt19937_64 rng(2024);
    const std::size_t block_sizes[] = {16, 64, 256};
    const double half_gap = quant::nf4_codebook().max_gap() / 2;
    const auto levels = oracle::nf4_levels();
    std::size_t oracle_runs = 0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 4096)(rng);
        const std::size_t b1 = block_sizes[rng() % 3];
        const float sigma = std::exp(std::uniform_real_distribution<float>(-4.0f, 3.0f)(rng));
        std::normal_distribution<float> dist(0.0f, sigma);
        std::vector<float> x(n);
        for (auto& v : x) v = dist(rng);

        const auto qt = quant::quantize(std::span<const float>(x), b1);
        const auto y = quant::dequantize(qt);
        bool bound = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(static_cast<double>(x[i]) - y[i]) > qt.scale(i / b1) * half_gap * (1 + 1e-12)) bound = false;
        }
        c.expect(bound, "error bound, tensor " + std::to_string(t));

        const int exp2 = std::uniform_int_distribution<int>(-6, 6)(rng);
        std::vector<float> scaled(x);
        for (auto& v : scaled) v = std::ldexp(v, exp2);
        const auto qs = quant::quantize(std::span<const float>(scaled), b1);
        bool invariant = true;
        for (std::size_t i = 0; i < n; ++i) invariant = invariant && qs.code(i) == qt.code(i);
        c.expect(invariant, "scale invariance, tensor " + std::to_string(t));

        if (t % 100 == 0) {
            ++oracle_runs;
            const auto ref = oracle::scalar_quantize(x, b1, levels);
            bool same = true;
            for (std::size_t i = 0; i < n; ++i) {
                same = same && qt.code(i) == ref.codes[i] && std::abs(y[i] - ref.values[i]) <= 1e-12 * (1 + std::abs(ref.values[i]));
            }
            c.expect(same, "scalar oracle, tensor " + std::to_string(t));
        }
    }
    c.note("10000 tensors, " + std::to_string(oracle_runs) + " oracle comparisons");
    return c.outcome();
}

Outcome lora_neutrality_gradients() {
    Checker c;
    lora::Rng rng(77);
    for (int t = 0; t < 50; ++t) {
        const auto d_in = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
        const auto d_out = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
        const int rank = std::uniform_int_distribution<int>(1, static_cast<int>(std::min<std::size_t>({4, d_in, d_out})))(rng);
        auto layer = testing::random_layer(rng, d_in, d_out, rank, t % 2 == 0);
        const lora::Matrix x = testing::random_matrix(rng, 4, static_cast<Eigen::Index>(d_in));
        c.expect(layer.forward(x, lora::Mode::Eval) == layer.base_forward(x), "neutrality, layer " + std::to_string(t));
    }
    double worst = 0;
    for (int t = 0; t < 50; ++t) worst = std::max(worst, testing::check_adapter_gradients(rng, 1e-5).max_rel_error);
    c.expect(worst <= 1e-4, "max relative gradient error " + fmt(worst));
    c.note("max relative gradient error " + fmt(worst, 3));
    return c.outcome();
}

Outcome training_recipe() {
    Checker c;
    using namespace tinylm;

    // Adam closed form: m_hat = g and v_hat = g^2 on the first step.
    const auto adam = AdamW::from(TrainConfig{});
    std::vector<double> theta{1.0}, g{0.5}, m{0.0}, v{0.0};
    adam.update(theta, g, m, v, 1);
    c.expect(std::abs(theta[0] - 0.99998999) <= 1e-9, "first Adam step " + fmt(theta[0], 15));

    ModelConfig mc;
    mc.d_model = 32;
    mc.n_heads = 2;
    mc.n_layers = 2;
    mc.d_ff = 64;
    mc.max_seq_len = 64;
    const auto make_model = [&](double dropout) {
        auto model = TinyLm::init(mc, 7);
        model.quantize_base(64);
        model.attach_adapters(lora::AdapterConfig{8, 16.0, dropout, {}}, 8);
        return model;
    };

    ByteTokenizer tok;
    std::vector<std::vector<int>> seqs;
    std::istringstream in(oracle::read_text(oracle::source_path("tests/fixtures/synthetic_corpus_200.txt")));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) seqs.push_back(training_sequence(line, tok, mc.max_seq_len));
    }
    c.expect(seqs.size() == 200, "corpus has " + std::to_string(seqs.size()) + " sentences");

    auto model = make_model(0.05);
    TrainConfig tc;
    tc.total_steps = 50;
    Trainer trainer(model, tc);
    const auto checksum = model.frozen_checksum();
    const double before = trainer.evaluate(seqs);
    const auto source = cycle_sequences(seqs);
    double prev = before;
    std::size_t monotone = 0;
    for (std::size_t s = 0; s < tc.total_steps; ++s) {
        trainer.step(source);
        const double now = trainer.evaluate(seqs);
        if (now < prev) ++monotone;
        prev = now;
    }
    const double after = prev;
    c.expect(after < before, "eval loss " + fmt(before, 10) + " -> " + fmt(after, 10));
    c.expect(monotone == tc.total_steps, std::to_string(monotone) + "/50 steps lowered the eval loss");
    c.expect(model.frozen_checksum() == checksum, "frozen checksum changed");
    c.note("eval loss " + fmt(before, 8) + " -> " + fmt(after, 8) + " (" + std::to_string(monotone) +
           "/50 steps decreasing)");

    // Accumulation equivalence: 2 micro-batches of 4 vs one of 8.
    const std::vector<std::vector<int>> eight(seqs.begin(), seqs.begin() + 8);
    auto a = make_model(0.0);
    auto b = make_model(0.0);
    TrainConfig ca, cb;
    ca.micro_batch = 4;
    ca.grad_accum_steps = 2;
    cb.micro_batch = 8;
    cb.grad_accum_steps = 1;
    Trainer ta(a, ca), tb(b, cb);
    const auto ra = ta.step(cycle_sequences(eight));
    const auto rb = tb.step(cycle_sequences(eight));
    c.expect(std::abs(ra.loss - rb.loss) <= 1e-6 * std::abs(ra.loss), "accumulated loss differs");
    c.expect(std::abs(ra.grad_norm - rb.grad_norm) <= 1e-6 * rb.grad_norm, "accumulated gradient norm differs");
    double diff = 0;
    const auto la = a.adapted_layers();
    const auto lb = b.adapted_layers();
    for (std::size_t i = 0; i < la.size(); ++i) {
        diff = std::max(diff, (la[i].second->adapter().A - lb[i].second->adapter().A).cwiseAbs().maxCoeff());
        diff = std::max(diff, (la[i].second->adapter().B - lb[i].second->adapter().B).cwiseAbs().maxCoeff());
    }
    c.expect(diff <= 1e-6, "accumulated parameters differ by " + fmt(diff));
    return c.outcome();
}

Outcome corpus_pipeline() {
    Checker c;
    ByteTokenizer tok;
    corpus::CorpusPipeline pipe(tok);
    std::vector<corpus::Chunk> chunks;
    pipe.add_document("mixed", oracle::read_text(oracle::source_path("tests/fixtures/mixed_script.txt")),
                      [&](const corpus::Chunk& ch) { chunks.push_back(ch); });
    std::size_t foreign = 0;
    for (const auto& ch : chunks) {
        c.expect(ch.token_count >= 1 && ch.token_count < 1024, "chunk of " + std::to_string(ch.token_count) + " tokens");
        c.expect(tok.count(ch.text) == ch.token_count, "chunk token count mismatch");
        for (const char32_t cp : unicode::decode(ch.text)) {
            if (unicode::is_alpha(cp) && !unicode::is_latin(cp)) ++foreign;
        }
    }
    c.expect(foreign == 0, std::to_string(foreign) + " non-Latin letters survived");
    c.expect(pipe.stats().removed > 0 && !chunks.empty(), "fixture exercises both paths");

    std::mt19937_64 rng(31);
    for (int t = 0; t < 1000; ++t) {
        std::vector<std::size_t> counts(std::uniform_int_distribution<std::size_t>(0, 60)(rng));
        for (auto& x : counts) x = std::uniform_int_distribution<std::size_t>(1, 1200)(rng);
        const std::size_t sep = rng() % 3;
        const auto plan = corpus::plan_packing(counts, 1024, sep);
        c.expect(plan.groups == oracle::greedy_pack(counts, 1024, sep), "packing sequence " + std::to_string(t));
    }
    c.note(std::to_string(pipe.stats().removed) + " sentences removed, " + std::to_string(chunks.size()) + " chunks");
    return c.outcome();
}

Outcome metric_fixtures() {
    Checker c;
    using metrics::TaskScore;
    const auto row = [](std::array<double, 6> v, double p) {
        return std::vector<TaskScore>{{Task::RoMedQA, v[0]}, {Task::RoQA, v[1]},  {Task::REDv2, v[2]},
                                      {Task::RoMD, v[3]},    {Task::SaRoCo, v[4]}, {Task::RoSum, v[5]},
                                      {Task::RoSTS, p}};
    };
    const struct {
        std::array<double, 6> v;
        double pearson;
        double expected;
    } rows[] = {{{3.60, 24.88, 3.59, 4.95, 28.17, 18.47}, -0.663, 14.36},
                {{1.79, 44.05, 6.89, 20.38, 29.88, 22.26}, 0.039, 25.31},
                {{3.67, 39.64, 6.45, 29.78, 29.63, 19.46}, 0.401, 28.38}};
    for (const auto& r : rows) {
        const double avg = metrics::aggregate_average(row(r.v, r.pearson));
        c.expect(std::abs(avg - r.expected) <= 0.005, "average " + fmt(avg) + " vs " + fmt(r.expected));
    }

    // Every pair of binary sequences up to length 7, then random longer ones.
    std::vector<std::vector<std::string>> all{{}};
    for (std::size_t len = 1; len <= 7; ++len) {
        for (std::uint32_t bits = 0; bits < (1u << len); ++bits) {
            std::vector<std::string> s;
            for (std::size_t i = 0; i < len; ++i) s.push_back((bits >> i) & 1 ? "b" : "a");
            all.push_back(s);
        }
    }
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < all.size(); i += 3) {
        for (const auto& b : all) {
            ++pairs;
            if (metrics::lcs_length(all[i], b) != oracle::brute_lcs(all[i], b)) c.expect(false, "lcs exhaustive");
        }
    }
    std::mt19937_64 rng(3);
    const std::vector<std::string> alphabet{"a", "b", "c", "d"};
    for (int t = 0; t < 3000; ++t) {
        std::vector<std::string> a(std::uniform_int_distribution<std::size_t>(0, 10)(rng));
        std::vector<std::string> b(std::uniform_int_distribution<std::size_t>(0, 10)(rng));
        for (auto& x : a) x = alphabet[rng() % alphabet.size()];
        for (auto& x : b) x = alphabet[rng() % alphabet.size()];
        ++pairs;
        if (metrics::lcs_length(a, b) != oracle::brute_lcs(a, b)) c.expect(false, "lcs random");
    }

    const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
    const double rho = metrics::spearman(x, y);
    c.expect(std::abs(rho - 0.8) <= 1e-9 && std::abs(rho - oracle::spearman_distinct(x, y)) <= 1e-9,
             "spearman " + fmt(rho, 12));

    const auto qa = metrics::qa_score("a b c", std::vector<std::string>{"b c d"});
    c.expect(std::abs(qa.overlap_f1 - 200.0 / 3.0) <= 1e-9, "qa f1 " + fmt(qa.overlap_f1, 12));
    const std::vector<std::string> golds{"A", "A", "B", "B"}, preds{"A", "B", "B", "??"}, labels{"A", "B"};
    const auto cls = metrics::classification_scores(preds, golds, labels);
    c.expect(std::abs(cls.macro_f1 - oracle::confusion_macro_f1(preds, golds)) <= 1e-9, "macro f1 " + fmt(cls.macro_f1));
    c.expect(std::abs(cls.macro_f1 - 175.0 / 3.0) <= 1e-9, "macro f1 58.33");
    c.expect(cls.nfi == 25.0 && cls.accuracy == 50.0, "nfi/accuracy");
    const auto rouge = metrics::rouge_scores("a b c d", "a c d");
    c.expect(std::abs(rouge.rougeL - 600.0 / 7.0) <= 1e-9 && std::abs(rouge.rouge2 - 40.0) <= 1e-9, "rouge example");
    c.note(std::to_string(pairs) + " LCS pairs checked");
    return c.outcome();
}

std::vector<std::pair<Task, harness::TaskItem>> golden_items() {
    std::vector<std::pair<Task, harness::TaskItem>> out;
    std::istringstream in(oracle::read_text(oracle::source_path("tests/golden/items.jsonl")));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        const Task t = *parse_task(j["task"].get<std::string>());
        out.emplace_back(t, harness::parse_item(t, j["record"].dump()));
    }
    return out;
}

Outcome harness_fidelity() {
    Checker c;
    using namespace harness;
    const auto items = golden_items();
    c.expect(items.size() == kAllTasks.size(), "golden items for all tasks");
    for (const auto& [task, item] : items) {
        const auto golden =
            oracle::read_text(oracle::source_path("tests/golden/" + lower_ascii(task_name(task)) + "_zero_shot.txt"));
        c.expect(render_prompt(default_task_spec(task), item, {}) == golden, std::string(task_name(task)) + " prompt");
    }

    const auto data = load_dataset(Task::RoMedQA, oracle::source_path("tests/fixtures/romedqa_20.jsonl"));
    std::vector<std::string> runs;
    for (int r = 0; r < 3; ++r) {
        auto backend = ReplayBackend::load(oracle::source_path("tests/fixtures/romedqa_20_replay.jsonl"));
        RunOptions opt;
        opt.parallelism = r == 2 ? 4 : 1;
        const auto report = run_task(backend, default_task_spec(Task::RoMedQA), data, {}, opt);
        c.expect(report.failed_items == 0, "replay misses");
        runs.push_back(to_json(report) + trace_jsonl(report));
    }
    c.expect(runs[0] == runs[1] && runs[1] == runs[2], "replay reports differ across executions");

    const auto romd = load_dataset(Task::RoMD, oracle::source_path("tests/fixtures/romd_nfi.jsonl"));
    auto backend = ReplayBackend::load(oracle::source_path("tests/fixtures/romd_nfi_replay.jsonl"));
    const auto report = run_task(backend, default_task_spec(Task::RoMD), romd, {}, RunOptions{});
    std::vector<std::string> preds, golds;
    for (std::size_t i = 0; i < romd.size(); ++i) {
        preds.push_back(report.trace[i].nfi ? "" : report.trace[i].parsed);
        golds.push_back(romd[i].answers[0]);
    }
    const std::vector<std::string> labels{"românesc", "moldovenesc"};
    const auto direct = metrics::classification_scores(preds, golds, labels);
    c.expect(report.classification.has_value() && report.classification->nfi == 25.0 &&
                 report.classification->accuracy == direct.accuracy &&
                 report.classification->macro_f1 == direct.macro_f1 && std::abs(direct.macro_f1 - 175.0 / 3.0) <= 1e-9,
             "NFI fixture");
    return c.outcome();
}

Outcome few_shot_structure() {
    Checker c;
    using namespace harness;
    for (const auto& [task, query] : golden_items()) {
        const auto spec = default_task_spec(task);
        std::vector<TaskItem> pool;
        for (int i = 0; i < 8; ++i) {
            TaskItem shot = query;
            shot.id = query.id + "-shot" + std::to_string(i);
            for (auto& s : shot.slots) s += " (exemplul " + std::to_string(i) + ")";
            pool.push_back(shot);
        }
        const std::vector<TaskItem> evaluated{query};
        const auto zero = render_prompt(spec, query, {});
        for (const std::size_t k : {1u, 3u, 5u}) {
            const auto shots = select_shots(pool, evaluated, FewShotConfig{k, 42});
            const auto prompt = render_prompt(spec, query, shots);
            const auto cues = oracle::count_answered_cue_lines(prompt, spec.cue());
            const std::string where = std::string(task_name(task)) + " k=" + std::to_string(k);
            c.expect(cues == k, where + ": " + std::to_string(cues) + " answered cue lines");
            c.expect(prompt.rfind(spec.instruction(), 0) == 0 && zero.rfind(spec.instruction(), 0) == 0,
                     where + ": instruction prefix");
            const auto tail = zero.substr(spec.instruction().size());
            c.expect(prompt.size() >= tail.size() && prompt.compare(prompt.size() - tail.size(), tail.size(), tail) == 0,
                     where + ": query block suffix");
        }
    }
    return c.outcome();
}

Outcome dataset_checks() {
    const char* path = std::getenv("ROQLORA_ROMEDQA");
    if (!path || !*path) return {Outcome::Skip, "set ROQLORA_ROMEDQA to the RoMedQA JSONL file to run"};
    Checker c;
    using namespace analysis;
    const auto items = load_mcq(path);
    const auto splits = split_sizes(items);
    const auto get = [&](const char* k) { return splits.count(k) ? splits.at(k) : 0; };
    const std::size_t train = get("train"), val = get("validation") + get("val") + get("dev"), test = get("test");
    c.expect(train == 2889 && val == 831 && test == 410, "splits " + std::to_string(train) + "/" + std::to_string(val) +
                                                             "/" + std::to_string(test));
    c.expect(items.size() == 4127, "total " + std::to_string(items.size()));
    const double ratio = class_balance_ratio(class_distribution(items));
    c.expect(ratio < 2.0, "class balance ratio " + fmt(ratio));

    std::vector<std::string> docs;
    for (const auto& it : items) docs.push_back(item_text(it));
    const auto ranked = tfidf_rank(docs, load_stopwords(oracle::source_path("data/stopwords_ro.txt")),
                                   load_lemmas(oracle::source_path("data/lemmas_ro.tsv")));
    const bool top_ok = !ranked.empty() && ranked[0].word == "celulă";
    c.expect(top_ok, "top word " + (ranked.empty() ? std::string("<none>") : ranked[0].word));
    if (!ranked.empty()) {
        c.expect(std::abs(ranked[0].score - 0.02205) <= 0.002, "top score " + fmt(ranked[0].score));
        c.note("top word " + ranked[0].word + " " + fmt(ranked[0].score, 5));
    }
    return c.outcome();
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "quantization overhead arithmetic", 1, overhead_arithmetic},
        {2, "footprint targets", 1, footprint_targets},
        {3, "NF4 roundtrip property", 30, nf4_roundtrip},
        {4, "LoRA neutrality and gradients", 60, lora_neutrality_gradients},
        {5, "training recipe", 300, training_recipe},
        {6, "corpus pipeline", 10, corpus_pipeline},
        {7, "metrics fixtures", 30, metric_fixtures},
        {8, "harness determinism and fidelity", 10, harness_fidelity},
        {9, "few-shot structure", 5, few_shot_structure},
        {10, "dataset checks (RoMedQA)", 60, dataset_checks},
    };

    int failures = 0;
    for (const auto& cr : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {Outcome::Fail, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.status == Outcome::Pass && secs > cr.budget_s) {
            o.status = Outcome::Fail;
            o.detail += (o.detail.empty() ? "" : "; ") + std::string("over the ") + fmt(cr.budget_s) + " s budget";
        }
        const char* tag = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
        if (o.status == Outcome::Fail) ++failures;
        std::printf("[%s] %2d %-34s %8.3f s  %s\n", tag, cr.id, cr.name, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
