// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "roqlora/metrics.hpp"
#include "roqlora/task.hpp"
#include "roqlora/tinylm.hpp"
#include "roqlora/tokenizer.hpp"

namespace roqlora::harness {

enum class AnswerKind {
    Choice,  ///< one of a fixed label set
    Digit,   ///< answer index 1-5
    Span,    ///< extractive QA answer
    Summary,
    Score,   ///< similarity in [0, 1]
};

struct TaskSpec {
    Task task;
    std::string prompt_template;  ///< "{}" marks each slot; ends with the cue line
    AnswerKind answer_kind;
    std::vector<std::string> labels;
    std::size_t max_new_tokens;

    /// Text before the first line containing a slot.
    std::string instruction() const;
    /// From the first slot line through the cue line.
    std::string item_block() const;
    /// Last non-empty line, e.g. "Răspuns:".
    std::string cue() const;
    std::size_t slot_count() const;
    /// Throws InvalidArgument if the template has no slot or no cue.
    void validate() const;
};

const std::string& default_template(Task task);
TaskSpec default_task_spec(Task task);
/// Default spec with the template read from a UTF-8 file (trailing newlines dropped).
TaskSpec task_spec_from_file(Task task, const std::filesystem::path& template_file);

struct TaskItem {
    std::string id;
    std::vector<std::string> slots;    ///< template slot values in order
    std::vector<std::string> answers;  ///< gold label / answer spans / summary
    double score = 0.0;                ///< RoSTS gold on the 0-5 scale
    std::string split;                 ///< optional "split" field
};

/// Parses one JSONL record for `task`. The item id is the record's "id"
/// field, else `fallback_id`, which also prefixes error messages.
TaskItem parse_item(Task task, std::string_view json_line, const std::string& fallback_id = {});
std::vector<TaskItem> load_dataset(Task task, const std::filesystem::path& path);

/// Gold answer as written after the cue in a solved example.
std::string shot_answer(const TaskSpec& spec, const TaskItem& item);

/// Instruction block, then each solved shot ("<item block> <answer>"), then
/// the query item with the cue left open and followed by one space. Parts are
/// separated by blank lines.
std::string render_prompt(const TaskSpec& spec, const TaskItem& item, std::span<const TaskItem> shots);

struct FewShotConfig {
    std::size_t k = 0;  ///< 0, 1, 3 or 5
    std::uint64_t selection_seed = 0;
};

/// First k items of `pool` under a seeded shuffle, skipping any item whose
/// id or slots coincide with an evaluated item. Throws InvalidArgument if
/// fewer than k remain.
std::vector<TaskItem> select_shots(std::span<const TaskItem> pool, std::span<const TaskItem> evaluated,
                                   const FewShotConfig& few);

/// Draws the shots from `items` itself and returns them with the remaining
/// items, for datasets that ship without a separate exemplar split.
std::pair<std::vector<TaskItem>, std::vector<TaskItem>> split_shots(std::span<const TaskItem> items,
                                                                    const FewShotConfig& few);

struct ParsedOutput {
    std::string answer;            ///< canonical label, digit, span or summary
    std::optional<double> score;   ///< RoSTS prediction on the gold 0-5 scale
    bool nfi = false;
};

ParsedOutput parse_output(const TaskSpec& spec, std::string_view raw, std::string_view stop = "\n");

using GenerationConfig = tinylm::GenerationConfig;

/// Evaluation decoding settings: temperature 0.6, top-p 0.9, stop "\n".
GenerationConfig generation_config_for(const TaskSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Backends

class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Backend {
public:
    virtual ~Backend() = default;
    /// Throws BackendError when no completion can be produced.
    virtual std::string complete(const std::string& prompt, const GenerationConfig& gen) = 0;
    virtual std::string name() const = 0;
};

/// Fixed prompt -> completion map. Keys are prompts or their SHA-256 hex.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(std::map<std::string, std::string> completions);
    /// JSONL of {"prompt" | "prompt_sha256", "completion"} records.
    static ReplayBackend load(const std::filesystem::path& path);

    std::string complete(const std::string& prompt, const GenerationConfig& gen) override;
    std::string name() const override { return "replay"; }

private:
    std::map<std::string, std::string> completions_;
};

/// Samples from a tinylm checkpoint; deterministic in the generation seed.
class LocalBackend final : public Backend {
public:
    LocalBackend(tinylm::TinyLm model, std::unique_ptr<Tokenizer> tokenizer);

    std::string complete(const std::string& prompt, const GenerationConfig& gen) override;
    std::string name() const override { return "local"; }

private:
    tinylm::TinyLm model_;
    std::unique_ptr<Tokenizer> tokenizer_;
};

struct HttpBackendOptions {
    std::string url;        ///< full endpoint URL, e.g. http://host:8000/v1/completions
    std::string api_token;  ///< sent as "Authorization: Bearer <token>" when set
    std::string model;      ///< optional "model" field
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{60};

    /// url from ROQLORA_ENDPOINT, token from ROQLORA_API_TOKEN, model from ROQLORA_MODEL.
    static HttpBackendOptions from_env();
};

/// Text-completion client: POST {"prompt", "temperature", "top_p",
/// "max_tokens", "stop": [...]} and read {"text"} (or choices[0].text).
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpBackendOptions options);

    std::string complete(const std::string& prompt, const GenerationConfig& gen) override;
    std::string name() const override { return "http"; }

    /// Request body for `prompt` under `gen`.
    static std::string request_body(const std::string& prompt, const GenerationConfig& gen,
                                    const std::string& model = {});

private:
    HttpBackendOptions options_;
    std::string origin_;
    std::string path_;
};

// ---------------------------------------------------------------------------
// Task runs and reports

struct ItemTrace {
    std::size_t index = 0;
    std::string id;
    std::string prompt_sha256;
    std::string raw_completion;
    std::string parsed;
    bool nfi = false;
    bool failed = false;
    std::string error;
    std::map<std::string, double> scores;
};

struct TaskReport {
    Task task = Task::RoMedQA;
    std::size_t items = 0;
    std::size_t scored = 0;   ///< items with a completion (NFI included)
    std::size_t nfi_items = 0;
    std::size_t failed_items = 0;
    std::size_t shots = 0;

    std::optional<metrics::ClassificationResult> classification;
    std::optional<metrics::QaResult> qa;
    std::optional<metrics::RougeResult> rouge;
    std::optional<metrics::CorrelationResult> correlation;
    std::string note;  ///< why a metric is absent, if it is

    std::vector<ItemTrace> trace;

    /// Name and value of the task's headline metric, if computed.
    std::string primary_metric() const;
    std::optional<double> primary() const;
};

struct RunOptions {
    FewShotConfig few;
    std::uint64_t seed = 0;
    std::size_t parallelism = 1;
};

/// Render, generate, parse and score every item. Backend failures mark the
/// item failed; they never abort the run.
TaskReport run_task(Backend& backend, const TaskSpec& spec, std::span<const TaskItem> items,
                    std::span<const TaskItem> shot_pool, const RunOptions& options);

struct MetricReport {
    std::vector<TaskReport> tasks;
    double average = 0.0;
};

/// Parses and scores one completion per item; nullopt marks a failed item.
/// Traces carry ids, raw completions, parsed values and per-item scores.
TaskReport score_completions(const TaskSpec& spec, std::span<const TaskItem> items,
                             std::span<const std::optional<std::string>> completions,
                             std::string_view stop = "\n");

/// Requires one report per task, each with a primary score.
MetricReport aggregate_runs(std::vector<TaskReport> reports);

/// Percentages rounded to 2 decimals, correlations to 4.
std::string to_json(const TaskReport& report);
std::string to_json(const MetricReport& report);
std::string trace_jsonl(const TaskReport& report);
TaskReport task_report_from_json(std::string_view json);

std::string sha256_hex(std::string_view data);

}  // namespace roqlora::harness
