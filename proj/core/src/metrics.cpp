// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "roqlora/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "roqlora/errors.hpp"
#include "roqlora/unicode.hpp"

namespace roqlora {

std::optional<Task> parse_task(std::string_view name) {
    const std::string wanted = unicode::to_lower(name);
    for (Task t : kAllTasks) {
        if (unicode::to_lower(task_name(t)) == wanted) return t;
    }
    return std::nullopt;
}

}  // namespace roqlora

namespace roqlora::metrics {

namespace {

double f1(double precision, double recall) {
    return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && s[i] == ' ') ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

std::map<std::string, std::size_t> ngram_counts(std::span<const std::string> toks, std::size_t n) {
    std::map<std::string, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key;
        for (std::size_t k = 0; k < n; ++k) {
            if (k) key += '\x1f';
            key += toks[i + k];
        }
        ++counts[key];
    }
    return counts;
}

double rouge_n(std::span<const std::string> pred, std::span<const std::string> ref, std::size_t n) {
    const auto p = ngram_counts(pred, n);
    const auto r = ngram_counts(ref, n);
    std::size_t p_total = 0, r_total = 0, overlap = 0;
    for (const auto& [g, c] : p) p_total += c;
    for (const auto& [g, c] : r) {
        r_total += c;
        if (auto it = p.find(g); it != p.end()) overlap += std::min(c, it->second);
    }
    if (p_total == 0 || r_total == 0) return 0.0;
    return 100.0 * f1(double(overlap) / double(p_total), double(overlap) / double(r_total));
}

void check_pair(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidArgument("correlation: sequences differ in length");
    if (x.size() < 2) throw UndefinedCorrelation("correlation: need at least two points");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
            throw InvalidArgument("correlation: non-finite value at index " + std::to_string(i));
        }
    }
}

}  // namespace

ClassificationResult classification_scores(std::span<const std::string> preds,
                                           std::span<const std::string> golds,
                                           std::span<const std::string> labels) {
    if (preds.size() != golds.size()) throw InvalidArgument("classification_scores: length mismatch");
    if (preds.empty()) throw InvalidArgument("classification_scores: no samples");
    if (labels.empty()) throw InvalidArgument("classification_scores: empty label set");
    const std::set<std::string> label_set(labels.begin(), labels.end());

    std::size_t correct = 0, invalid = 0;
    std::set<std::string> gold_labels;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!label_set.count(golds[i])) {
            throw InvalidArgument("classification_scores: gold label '" + golds[i] + "' is not in the label set");
        }
        gold_labels.insert(golds[i]);
        if (!label_set.count(preds[i])) ++invalid;
        else if (preds[i] == golds[i]) ++correct;
    }

    double f1_sum = 0.0;
    for (const auto& c : gold_labels) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const bool p = preds[i] == c;
            const bool g = golds[i] == c;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        const double precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
        const double recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
        f1_sum += f1(precision, recall);
    }

    const double n = double(preds.size());
    return ClassificationResult{100.0 * double(correct) / n, 100.0 * f1_sum / double(gold_labels.size()),
                                100.0 * double(invalid) / n, preds.size()};
}

std::string normalize_answer(std::string_view text) {
    std::u32string out;
    bool pending_space = false;
    for (char32_t c : unicode::decode(unicode::to_lower(text))) {
        if (unicode::is_punct(c)) continue;
        if (unicode::is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(U' ');
        pending_space = false;
        out.push_back(c);
    }
    return unicode::encode(out);
}

QaResult qa_score(std::string_view pred, std::span<const std::string> golds) {
    if (golds.empty()) throw InvalidArgument("qa_score: at least one gold answer is required");
    const std::string np = normalize_answer(pred);
    const auto pred_toks = split_ws(np);
    QaResult best;
    for (const auto& gold : golds) {
        const std::string ng = normalize_answer(gold);
        const auto gold_toks = split_ws(ng);
        const double em = np == ng ? 100.0 : 0.0;
        double f = 0.0;
        if (pred_toks.empty() || gold_toks.empty()) {
            f = pred_toks == gold_toks ? 100.0 : 0.0;
        } else {
            std::map<std::string, std::size_t> gc;
            for (const auto& t : gold_toks) ++gc[t];
            std::size_t common = 0;
            for (const auto& t : pred_toks) {
                auto it = gc.find(t);
                if (it != gc.end() && it->second > 0) {
                    ++common;
                    --it->second;
                }
            }
            f = 100.0 * f1(double(common) / double(pred_toks.size()), double(common) / double(gold_toks.size()));
        }
        best.exact_match = std::max(best.exact_match, em);
        best.overlap_f1 = std::max(best.overlap_f1, f);
    }
    return best;
}

QaResult qa_scores(std::span<const std::string> preds, std::span<const std::vector<std::string>> golds) {
    if (preds.size() != golds.size()) throw InvalidArgument("qa_scores: length mismatch");
    if (preds.empty()) throw InvalidArgument("qa_scores: no samples");
    QaResult sum;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto r = qa_score(preds[i], golds[i]);
        sum.exact_match += r.exact_match;
        sum.overlap_f1 += r.overlap_f1;
    }
    const double n = double(preds.size());
    return QaResult{sum.exact_match / n, sum.overlap_f1 / n};
}

std::vector<std::string> rouge_tokenize(std::string_view text) { return unicode::alnum_tokens(text); }

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

RougeResult rouge_scores(std::span<const std::string> pred_tokens, std::span<const std::string> ref_tokens) {
    RougeResult r;
    r.rouge1 = rouge_n(pred_tokens, ref_tokens, 1);
    r.rouge2 = rouge_n(pred_tokens, ref_tokens, 2);
    if (!pred_tokens.empty() && !ref_tokens.empty()) {
        const double lcs = double(lcs_length(pred_tokens, ref_tokens));
        r.rougeL = 100.0 * f1(lcs / double(pred_tokens.size()), lcs / double(ref_tokens.size()));
    }
    return r;
}

RougeResult rouge_scores(std::string_view pred, std::string_view ref) {
    const auto p = rouge_tokenize(pred);
    const auto r = rouge_tokenize(ref);
    return rouge_scores(p, r);
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const double n = double(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation is undefined for a constant sequence");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    return pearson(rx, ry);
}

CorrelationResult correlations(std::span<const double> x, std::span<const double> y) {
    return CorrelationResult{pearson(x, y), spearman(x, y)};
}

double normalized_score(const TaskScore& score) {
    if (score.task == Task::RoSTS) return (score.value + 1.0) / 2.0 * 100.0;
    return score.value;
}

double aggregate_average(std::span<const TaskScore> scores) {
    std::set<Task> seen;
    double sum = 0.0;
    for (const auto& s : scores) {
        if (!seen.insert(s.task).second) {
            throw InvalidArgument("aggregate_average: task " + std::string(task_name(s.task)) + " appears twice");
        }
        sum += normalized_score(s);
    }
    for (Task t : kAllTasks) {
        if (!seen.count(t)) {
            throw InvalidArgument("aggregate_average: missing task " + std::string(task_name(t)));
        }
    }
    return sum / double(kAllTasks.size());
}

double round_to(double value, int digits) {
    const double f = std::pow(10.0, digits);
    return std::round(value * f) / f;
}

}  // namespace roqlora::metrics
