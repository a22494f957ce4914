// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include <json.hpp>

#include "roqlora/errors.hpp"
#include "roqlora/unicode.hpp"

namespace roqlora::harness {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

std::string strip_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
    return s;
}

const std::string kRoMedQA =
    "Eu răspund la întrebări de medicină de tip grilă doar cu cifra răspunsului corect din variantele de "
    "răspuns. Există un singur răspuns corect.\n\n"
    "Întrebare: {}\n\n"
    "Răspuns:";

const std::string kRoQA =
    "Eu citesc contextul dat și răspund succint la întrebările adresate, utilizând doar informații din "
    "context. Nu ofer nicio explicație.\n\n"
    "Context: {}\n\n"
    "Întrebare: {}\n\n"
    "Răspuns:";

const std::string kREDv2 =
    "Eu citesc următorul text și îl adnotez în funcție de emoția lui predominanta.\n\n"
    "Singurele categorii de emoții din care pot sa aleg sunt: Tristețe, Surpriză, Frică, Furie, Neutru, "
    "Încredere, Bucurie. Nu ofer nicio explicație.\n\n"
    "Text: {}\n\n"
    "Emoție:";

const std::string kRoMD =
    "Eu citesc următorul paragraf și îl adnotez în funcție de dialectul lui, românesc sau moldovenesc.\n\n"
    "Singurele categorii de dialect din care pot sa aleg sunt românesc sau moldovenesc. Nu ofer nicio "
    "explicație.\n\n"
    "Paragraf: {}\n\n"
    "Dialect:";

const std::string kSaRoCo =
    "Eu citesc următorul titlu și paragraf, și le adnotez în funcție de categoria de satira.\n\n"
    "Singurele categorii de satiră din care pot sa aleg sunt: satiric sau non-satiric. Nu ofer nicio "
    "explicație.\n\n"
    "Titlu: {}\n\n"
    "Paragraf: {}\n\n"
    "Categorie:";

const std::string kRoSum =
    "Eu citesc următorul paragraf și îl sumarizez.\n\n"
    "Titlu: {}\n\n"
    "Paragraf: {}\n\n"
    "Sumarizare:";

const std::string kRoSTS =
    "Eu citesc ambele propoziții și adnotez similaritatea semantică dintre cele două propoziții cu un scor "
    "de la 0 (propozițiile nu au nicio similaritatea semantică) la 1 (propozițiile sunt identice din punct "
    "de vedere semantic). Nu ofer nicio explicație.\n\n"
    "Propoziție1: {}\n\n"
    "Propoziție2: {}\n\n"
    "Scor similaritate semantică:";

std::size_t first_slot_line(const std::string& tpl) {
    const auto slot = tpl.find("{}");
    if (slot == std::string::npos) return std::string::npos;
    const auto nl = tpl.rfind('\n', slot);
    return nl == std::string::npos ? 0 : nl + 1;
}

std::string fill(const std::string& block, std::span<const std::string> slots) {
    std::string out;
    std::size_t pos = 0;
    std::size_t used = 0;
    while (true) {
        const auto at = block.find("{}", pos);
        if (at == std::string::npos) break;
        if (used == slots.size()) throw InvalidArgument("template has more slots than the item provides");
        out.append(block, pos, at - pos);
        out += slots[used++];
        pos = at + 2;
    }
    if (used != slots.size()) throw InvalidArgument("item has more slot values than the template");
    out.append(block, pos, std::string::npos);
    return out;
}

std::string json_string(const json& record, const char* key, const std::string& where) {
    const auto it = record.find(key);
    if (it == record.end() || !it->is_string())
        throw FormatError(where + ": missing string field \"" + key + "\"");
    return it->get<std::string>();
}

double json_number(const json& value, const std::string& what, const std::string& where) {
    if (value.is_number()) return value.get<double>();
    if (value.is_string()) {
        const auto s = value.get<std::string>();
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (!s.empty() && end == s.c_str() + s.size()) return v;
    }
    throw FormatError(where + ": field \"" + what + "\" is not a number");
}

std::string lower(std::string_view s) { return unicode::to_lower(s); }

bool is_ascii_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

// ---------------------------------------------------------------------------
// TaskSpec

std::string TaskSpec::instruction() const {
    const auto at = first_slot_line(prompt_template);
    if (at == std::string::npos) throw InvalidArgument("template has no slot");
    return strip_trailing_newlines(prompt_template.substr(0, at));
}

std::string TaskSpec::item_block() const {
    const auto at = first_slot_line(prompt_template);
    if (at == std::string::npos) throw InvalidArgument("template has no slot");
    return strip_trailing_newlines(prompt_template.substr(at));
}

std::string TaskSpec::cue() const {
    const auto body = strip_trailing_newlines(prompt_template);
    const auto nl = body.rfind('\n');
    return unicode::trim(nl == std::string::npos ? body : body.substr(nl + 1));
}

std::size_t TaskSpec::slot_count() const {
    std::size_t n = 0;
    for (auto at = prompt_template.find("{}"); at != std::string::npos; at = prompt_template.find("{}", at + 2)) ++n;
    return n;
}

void TaskSpec::validate() const {
    if (slot_count() == 0) throw InvalidArgument(std::string(task_name(task)) + " template has no \"{}\" slot");
    const auto c = cue();
    if (c.empty() || c.find("{}") != std::string::npos)
        throw InvalidArgument(std::string(task_name(task)) + " template must end with a cue line");
    if (instruction().empty()) throw InvalidArgument(std::string(task_name(task)) + " template has no instruction");
    if (max_new_tokens == 0) throw InvalidArgument("max_new_tokens must be positive");
}

const std::string& default_template(Task task) {
    switch (task) {
        case Task::RoMedQA: return kRoMedQA;
        case Task::RoQA: return kRoQA;
        case Task::REDv2: return kREDv2;
        case Task::RoMD: return kRoMD;
        case Task::SaRoCo: return kSaRoCo;
        case Task::RoSum: return kRoSum;
        case Task::RoSTS: return kRoSTS;
    }
    throw InvalidArgument("unknown task");
}

TaskSpec default_task_spec(Task task) {
    TaskSpec spec{task, default_template(task), AnswerKind::Choice, {}, 10};
    switch (task) {
        case Task::RoMedQA:
            spec.answer_kind = AnswerKind::Digit;
            spec.labels = {"1", "2", "3", "4", "5"};
            break;
        case Task::RoQA:
            spec.answer_kind = AnswerKind::Span;
            spec.max_new_tokens = 250;
            break;
        case Task::REDv2:
            spec.labels = {"Tristețe", "Surpriză", "Frică", "Furie", "Neutru", "Încredere", "Bucurie"};
            break;
        case Task::RoMD: spec.labels = {"românesc", "moldovenesc"}; break;
        case Task::SaRoCo: spec.labels = {"satiric", "non-satiric"}; break;
        case Task::RoSum:
            spec.answer_kind = AnswerKind::Summary;
            spec.max_new_tokens = 2048;
            break;
        case Task::RoSTS: spec.answer_kind = AnswerKind::Score; break;
    }
    return spec;
}

TaskSpec task_spec_from_file(Task task, const std::filesystem::path& template_file) {
    std::ifstream in(template_file, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open template " + template_file.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    auto spec = default_task_spec(task);
    spec.prompt_template = strip_trailing_newlines(buf.str());
    const auto expected = default_task_spec(task).slot_count();
    if (spec.slot_count() != expected)
        throw InvalidArgument(template_file.string() + ": " + std::string(task_name(task)) + " template needs " +
                              std::to_string(expected) + " slot(s)");
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Datasets

TaskItem parse_item(Task task, std::string_view json_line, const std::string& fallback_id) {
    const std::string where = fallback_id.empty() ? std::string(task_name(task)) : fallback_id;
    json record;
    try {
        record = json::parse(json_line);
    } catch (const json::parse_error& e) {
        throw FormatError(where + ": " + e.what());
    }
    if (!record.is_object()) throw FormatError(where + ": record is not a JSON object");

    TaskItem item;
    item.id = fallback_id;
    if (const auto it = record.find("id"); it != record.end()) {
        item.id = it->is_string() ? it->get<std::string>() : it->dump();
    }
    if (const auto it = record.find("split"); it != record.end() && it->is_string()) item.split = it->get<std::string>();

    const auto spec = default_task_spec(task);
    const auto check_label = [&](const std::string& label) {
        if (std::find(spec.labels.begin(), spec.labels.end(), label) == spec.labels.end())
            throw FormatError(where + ": label \"" + label + "\" is not a " + std::string(task_name(task)) + " label");
        return label;
    };

    switch (task) {
        case Task::RoMedQA: {
            auto slot = json_string(record, "question", where);
            const auto choices = record.find("choices");
            if (choices == record.end() || !choices->is_array() || choices->size() != 5)
                throw FormatError(where + ": \"choices\" must be an array of 5 strings");
            for (std::size_t i = 0; i < 5; ++i) {
                if (!(*choices)[i].is_string()) throw FormatError(where + ": choice is not a string");
                slot += "\n" + std::to_string(i + 1) + ". " + (*choices)[i].get<std::string>();
            }
            const auto answer = record.find("answer");
            if (answer == record.end()) throw FormatError(where + ": missing \"answer\"");
            const double a = json_number(*answer, "answer", where);
            if (a != std::floor(a) || a < 1 || a > 5) throw FormatError(where + ": answer must be in 1..5");
            item.slots = {slot};
            item.answers = {std::to_string(static_cast<int>(a))};
            break;
        }
        case Task::RoQA: {
            item.slots = {json_string(record, "context", where), json_string(record, "question", where)};
            const auto answers = record.find("answers");
            if (answers == record.end() || !answers->is_array() || answers->empty())
                throw FormatError(where + ": \"answers\" must be a nonempty array");
            for (const auto& a : *answers) {
                if (a.is_string()) {
                    item.answers.push_back(a.get<std::string>());
                } else if (a.is_object() && a.contains("text") && a["text"].is_string()) {
                    item.answers.push_back(a["text"].get<std::string>());
                } else {
                    throw FormatError(where + ": answer must be a string or {\"text\": ...}");
                }
            }
            break;
        }
        case Task::REDv2:
            item.slots = {json_string(record, "text", where)};
            item.answers = {check_label(json_string(record, "label", where))};
            break;
        case Task::RoMD:
            if (record.contains("text")) {
                item.slots = {json_string(record, "text", where)};
            } else {
                item.slots = {json_string(record, "title", where) + "\n" + json_string(record, "paragraph", where)};
            }
            item.answers = {check_label(json_string(record, "label", where))};
            break;
        case Task::SaRoCo:
            item.slots = {json_string(record, "title", where), json_string(record, "paragraph", where)};
            item.answers = {check_label(json_string(record, "label", where))};
            break;
        case Task::RoSum:
            item.slots = {json_string(record, "title", where), json_string(record, "paragraph", where)};
            item.answers = {json_string(record, "summary", where)};
            break;
        case Task::RoSTS: {
            item.slots = {json_string(record, "sentence1", where), json_string(record, "sentence2", where)};
            const auto score = record.find("score");
            if (score == record.end()) throw FormatError(where + ": missing \"score\"");
            item.score = json_number(*score, "score", where);
            if (!(item.score >= 0.0 && item.score <= 5.0)) throw FormatError(where + ": score must be in [0, 5]");
            break;
        }
    }
    return item;
}

std::vector<TaskItem> load_dataset(Task task, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open dataset " + path.string());
    std::vector<TaskItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (unicode::trim(line).empty()) continue;
        items.push_back(parse_item(task, line, path.filename().string() + ":" + std::to_string(line_no)));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Prompts

std::string shot_answer(const TaskSpec& spec, const TaskItem& item) {
    if (spec.answer_kind == AnswerKind::Score) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", item.score / 5.0);
        return buf;
    }
    if (item.answers.empty()) throw InvalidArgument("shot item " + item.id + " has no answer");
    return item.answers.front();
}

std::string render_prompt(const TaskSpec& spec, const TaskItem& item, std::span<const TaskItem> shots) {
    const auto block = spec.item_block();
    std::string prompt = spec.instruction();
    prompt += "\n\n";
    for (const auto& shot : shots) {
        prompt += fill(block, shot.slots);
        prompt += ' ';
        prompt += shot_answer(spec, shot);
        prompt += "\n\n";
    }
    prompt += fill(block, item.slots);
    prompt += ' ';
    return prompt;
}

namespace {

void check_k(std::size_t k) {
    if (k != 0 && k != 1 && k != 3 && k != 5) throw InvalidArgument("shot count must be 0, 1, 3 or 5");
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

}  // namespace

std::vector<TaskItem> select_shots(std::span<const TaskItem> pool, std::span<const TaskItem> evaluated,
                                   const FewShotConfig& few) {
    check_k(few.k);
    if (few.k == 0) return {};
    std::set<std::string> ids;
    std::set<std::vector<std::string>> inputs;
    for (const auto& item : evaluated) {
        if (!item.id.empty()) ids.insert(item.id);
        inputs.insert(item.slots);
    }
    std::vector<TaskItem> shots;
    for (const auto i : shuffled_indices(pool.size(), few.selection_seed)) {
        const auto& candidate = pool[i];
        if ((!candidate.id.empty() && ids.count(candidate.id)) || inputs.count(candidate.slots)) continue;
        shots.push_back(candidate);
        if (shots.size() == few.k) return shots;
    }
    throw InvalidArgument("only " + std::to_string(shots.size()) + " exemplars available, " + std::to_string(few.k) +
                          " requested");
}

std::pair<std::vector<TaskItem>, std::vector<TaskItem>> split_shots(std::span<const TaskItem> items,
                                                                    const FewShotConfig& few) {
    check_k(few.k);
    if (few.k >= items.size() && few.k > 0)
        throw InvalidArgument("dataset too small to draw " + std::to_string(few.k) + " exemplars");
    const auto order = shuffled_indices(items.size(), few.selection_seed);
    std::vector<bool> taken(items.size(), false);
    std::vector<TaskItem> shots;
    for (std::size_t j = 0; j < few.k; ++j) {
        taken[order[j]] = true;
        shots.push_back(items[order[j]]);
    }
    std::vector<TaskItem> rest;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!taken[i]) rest.push_back(items[i]);
    }
    return {std::move(shots), std::move(rest)};
}

// ---------------------------------------------------------------------------
// Output parsing

ParsedOutput parse_output(const TaskSpec& spec, std::string_view raw, std::string_view stop) {
    std::string text = unicode::trim(raw);
    if (!stop.empty()) {
        if (const auto at = text.find(stop); at != std::string::npos) text.resize(at);
    }
    text = unicode::trim(text);

    ParsedOutput out;
    switch (spec.answer_kind) {
        case AnswerKind::Digit: {
            for (std::size_t i = 0; i < text.size(); ++i) {
                if (!is_ascii_digit(text[i])) continue;
                std::size_t j = i;
                while (j < text.size() && is_ascii_digit(text[j])) ++j;
                if (j - i == 1) {
                    const std::string digit(1, text[i]);
                    if (std::find(spec.labels.begin(), spec.labels.end(), digit) != spec.labels.end()) {
                        out.answer = digit;
                        return out;
                    }
                    break;
                }
                i = j;
            }
            out.nfi = true;
            return out;
        }
        case AnswerKind::Choice: {
            const auto key = lower(text);
            for (const auto& label : spec.labels) {
                if (lower(label) == key) {
                    out.answer = label;
                    return out;
                }
            }
            out.nfi = true;
            return out;
        }
        case AnswerKind::Score: {
            std::size_t i = 0;
            while (i < text.size() && !is_ascii_digit(text[i])) ++i;
            if (i < text.size()) {
                std::size_t j = i;
                while (j < text.size() && is_ascii_digit(text[j])) ++j;
                if (j + 1 < text.size() && (text[j] == '.' || text[j] == ',') && is_ascii_digit(text[j + 1])) {
                    ++j;
                    while (j < text.size() && is_ascii_digit(text[j])) ++j;
                }
                std::string number = text.substr(i, j - i);
                std::replace(number.begin(), number.end(), ',', '.');
                const double v = std::strtod(number.c_str(), nullptr);
                if (v >= 0.0 && v <= 1.0) {
                    out.answer = number;
                    out.score = v * 5.0;
                    return out;
                }
            }
            out.nfi = true;
            return out;
        }
        case AnswerKind::Span:
        case AnswerKind::Summary:
            out.answer = text;
            out.nfi = text.empty();
            return out;
    }
    out.nfi = true;
    return out;
}

GenerationConfig generation_config_for(const TaskSpec& spec, std::uint64_t seed) {
    GenerationConfig gen;
    gen.temperature = 0.6;
    gen.top_p = 0.9;
    gen.stop = "\n";
    gen.max_new_tokens = spec.max_new_tokens;
    gen.seed = seed;
    return gen;
}

// ---------------------------------------------------------------------------
// Task runs

std::string TaskReport::primary_metric() const {
    switch (task) {
        case Task::RoMedQA:
        case Task::REDv2:
        case Task::RoMD:
        case Task::SaRoCo: return "macro_f1";
        case Task::RoQA: return "overlap_f1";
        case Task::RoSum: return "rougeL";
        case Task::RoSTS: return "pearson";
    }
    return "";
}

std::optional<double> TaskReport::primary() const {
    switch (task) {
        case Task::RoMedQA:
        case Task::REDv2:
        case Task::RoMD:
        case Task::SaRoCo:
            if (classification) return classification->macro_f1;
            break;
        case Task::RoQA:
            if (qa) return qa->overlap_f1;
            break;
        case Task::RoSum:
            if (rouge) return rouge->rougeL;
            break;
        case Task::RoSTS:
            if (correlation) return correlation->pearson;
            break;
    }
    return std::nullopt;
}

TaskReport score_completions(const TaskSpec& spec, std::span<const TaskItem> items,
                             std::span<const std::optional<std::string>> completions, std::string_view stop) {
    if (completions.size() != items.size())
        throw InvalidArgument("got " + std::to_string(completions.size()) + " completions for " +
                              std::to_string(items.size()) + " items");
    TaskReport report;
    report.task = spec.task;
    report.items = items.size();
    report.trace.resize(items.size());

    std::vector<ParsedOutput> parsed(items.size());
    std::vector<std::size_t> scored;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto& t = report.trace[i];
        t.index = i;
        t.id = items[i].id;
        if (!completions[i]) {
            t.failed = true;
            ++report.failed_items;
            continue;
        }
        t.raw_completion = *completions[i];
        parsed[i] = parse_output(spec, t.raw_completion, stop);
        t.parsed = parsed[i].answer;
        t.nfi = parsed[i].nfi;
        scored.push_back(i);
        if (parsed[i].nfi) ++report.nfi_items;
    }
    report.scored = scored.size();
    if (scored.empty()) {
        report.note = "no item produced a completion";
        return report;
    }

    switch (spec.answer_kind) {
        case AnswerKind::Digit:
        case AnswerKind::Choice: {
            std::vector<std::string> preds;
            std::vector<std::string> golds;
            for (const auto i : scored) {
                preds.push_back(parsed[i].nfi ? std::string() : parsed[i].answer);
                golds.push_back(items[i].answers.front());
                report.trace[i].scores["correct"] = preds.back() == golds.back() ? 1.0 : 0.0;
            }
            report.classification = metrics::classification_scores(preds, golds, spec.labels);
            break;
        }
        case AnswerKind::Span: {
            std::vector<std::string> preds;
            std::vector<std::vector<std::string>> golds;
            for (const auto i : scored) {
                preds.push_back(parsed[i].answer);
                golds.push_back(items[i].answers);
                const auto s = metrics::qa_score(preds.back(), golds.back());
                report.trace[i].scores["exact_match"] = s.exact_match;
                report.trace[i].scores["overlap_f1"] = s.overlap_f1;
            }
            report.qa = metrics::qa_scores(preds, golds);
            break;
        }
        case AnswerKind::Summary: {
            metrics::RougeResult sum;
            for (const auto i : scored) {
                const auto r = metrics::rouge_scores(parsed[i].answer, items[i].answers.front());
                report.trace[i].scores["rouge1"] = r.rouge1;
                report.trace[i].scores["rouge2"] = r.rouge2;
                report.trace[i].scores["rougeL"] = r.rougeL;
                sum.rouge1 += r.rouge1;
                sum.rouge2 += r.rouge2;
                sum.rougeL += r.rougeL;
            }
            const auto n = static_cast<double>(scored.size());
            report.rouge = metrics::RougeResult{sum.rouge1 / n, sum.rouge2 / n, sum.rougeL / n};
            break;
        }
        case AnswerKind::Score: {
            std::vector<double> preds;
            std::vector<double> golds;
            for (const auto i : scored) {
                report.trace[i].scores["gold"] = items[i].score;
                if (parsed[i].nfi) continue;
                preds.push_back(*parsed[i].score);
                golds.push_back(items[i].score);
                report.trace[i].scores["predicted"] = *parsed[i].score;
            }
            try {
                report.correlation = metrics::correlations(preds, golds);
            } catch (const metrics::UndefinedCorrelation& e) {
                report.note = std::string("correlation undefined: ") + e.what();
            }
            break;
        }
    }
    return report;
}

TaskReport run_task(Backend& backend, const TaskSpec& spec, std::span<const TaskItem> items,
                    std::span<const TaskItem> shot_pool, const RunOptions& options) {
    spec.validate();
    const auto shots = select_shots(shot_pool, items, options.few);

    std::vector<std::optional<std::string>> completions(items.size());
    std::vector<std::string> hashes(items.size());
    std::vector<std::string> errors(items.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    const auto worker = [&] {
        while (true) {
            const auto i = next.fetch_add(1);
            if (i >= items.size()) return;
            try {
                const auto prompt = render_prompt(spec, items[i], shots);
                hashes[i] = sha256_hex(prompt);
                const auto gen = generation_config_for(spec, options.seed + i);
                try {
                    completions[i] = backend.complete(prompt, gen);
                } catch (const BackendError& e) {
                    errors[i] = e.what();
                }
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                next.store(items.size());
                return;
            }
        }
    };

    const auto threads = std::max<std::size_t>(1, std::min(options.parallelism, items.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    auto report = score_completions(spec, items, completions, generation_config_for(spec, 0).stop);
    report.shots = shots.size();
    for (std::size_t i = 0; i < items.size(); ++i) {
        report.trace[i].prompt_sha256 = hashes[i];
        report.trace[i].error = errors[i];
    }
    return report;
}

MetricReport aggregate_runs(std::vector<TaskReport> reports) {
    std::vector<metrics::TaskScore> scores;
    for (const auto& r : reports) {
        const auto p = r.primary();
        if (!p) throw InvalidArgument(std::string(task_name(r.task)) + " report has no primary score");
        const int digits = r.task == Task::RoSTS ? 4 : 2;
        scores.push_back({r.task, metrics::round_to(*p, digits)});
    }
    MetricReport out;
    out.average = metrics::aggregate_average(scores);
    std::sort(reports.begin(), reports.end(),
              [](const TaskReport& a, const TaskReport& b) { return a.task < b.task; });
    out.tasks = std::move(reports);
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

double pct(double v) { return metrics::round_to(v, 2); }
double corr(double v) { return metrics::round_to(v, 4); }

ojson report_json(const TaskReport& r) {
    ojson j;
    j["task"] = std::string(task_name(r.task));
    j["items"] = r.items;
    j["scored"] = r.scored;
    j["nfi_items"] = r.nfi_items;
    j["failed_items"] = r.failed_items;
    j["shots"] = r.shots;
    j["nfi"] = r.scored == 0 ? 0.0 : pct(100.0 * static_cast<double>(r.nfi_items) / static_cast<double>(r.scored));
    ojson m = ojson::object();
    if (r.classification) {
        m["accuracy"] = pct(r.classification->accuracy);
        m["macro_f1"] = pct(r.classification->macro_f1);
        m["nfi"] = pct(r.classification->nfi);
    }
    if (r.qa) {
        m["exact_match"] = pct(r.qa->exact_match);
        m["overlap_f1"] = pct(r.qa->overlap_f1);
    }
    if (r.rouge) {
        m["rouge1"] = pct(r.rouge->rouge1);
        m["rouge2"] = pct(r.rouge->rouge2);
        m["rougeL"] = pct(r.rouge->rougeL);
    }
    if (r.correlation) {
        m["pearson"] = corr(r.correlation->pearson);
        m["spearman"] = corr(r.correlation->spearman);
    }
    j["metrics"] = m;
    j["primary_metric"] = r.primary_metric();
    if (const auto p = r.primary()) {
        j["primary"] = r.task == Task::RoSTS ? corr(*p) : pct(*p);
    } else {
        j["primary"] = nullptr;
    }
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

std::string dump(const ojson& j) { return j.dump(2, ' ', false, ojson::error_handler_t::replace) + "\n"; }

}  // namespace

std::string to_json(const TaskReport& report) { return dump(report_json(report)); }

std::string to_json(const MetricReport& report) {
    ojson j;
    ojson tasks = ojson::array();
    ojson scores = ojson::object();
    for (const auto& r : report.tasks) {
        tasks.push_back(report_json(r));
        const auto p = r.primary();
        scores[std::string(task_name(r.task))] = p ? ojson(r.task == Task::RoSTS ? corr(*p) : pct(*p)) : ojson();
    }
    j["scores"] = scores;
    j["average"] = pct(report.average);
    j["tasks"] = tasks;
    return dump(j);
}

std::string trace_jsonl(const TaskReport& report) {
    std::string out;
    for (const auto& t : report.trace) {
        ojson j;
        j["index"] = t.index;
        j["id"] = t.id;
        j["prompt_sha256"] = t.prompt_sha256;
        j["raw_completion"] = t.raw_completion;
        j["parsed"] = t.parsed;
        j["nfi"] = t.nfi;
        j["failed"] = t.failed;
        if (t.failed) j["error"] = t.error;
        ojson s = ojson::object();
        for (const auto& [k, v] : t.scores) s[k] = v;
        j["scores"] = s;
        out += j.dump(-1, ' ', false, ojson::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

TaskReport task_report_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("task report: ") + e.what());
    }
    try {
        TaskReport r;
        const auto name = j.at("task").get<std::string>();
        const auto task = parse_task(name);
        if (!task) throw FormatError("task report: unknown task \"" + name + "\"");
        r.task = *task;
        r.items = j.value("items", std::size_t{0});
        r.scored = j.value("scored", std::size_t{0});
        r.nfi_items = j.value("nfi_items", std::size_t{0});
        r.failed_items = j.value("failed_items", std::size_t{0});
        r.shots = j.value("shots", std::size_t{0});
        r.note = j.value("note", std::string());
        const auto& m = j.at("metrics");
        if (m.contains("macro_f1"))
            r.classification = metrics::ClassificationResult{m.at("accuracy").get<double>(), m.at("macro_f1").get<double>(),
                                                             m.at("nfi").get<double>(), r.scored};
        if (m.contains("overlap_f1"))
            r.qa = metrics::QaResult{m.at("exact_match").get<double>(), m.at("overlap_f1").get<double>()};
        if (m.contains("rougeL"))
            r.rouge = metrics::RougeResult{m.at("rouge1").get<double>(), m.at("rouge2").get<double>(),
                                           m.at("rougeL").get<double>()};
        if (m.contains("pearson"))
            r.correlation = metrics::CorrelationResult{m.at("pearson").get<double>(), m.at("spearman").get<double>()};
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("task report: ") + e.what());
    }
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

}  // namespace roqlora::harness
