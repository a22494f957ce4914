// Copyright (C) 2026 The roqlora Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "roqlora/task.hpp"

namespace roqlora::metrics {

// All percentages are on a 0-100 scale.

struct ClassificationResult {
    double accuracy = 0;
    double macro_f1 = 0;
    double nfi = 0;  ///< share of predictions outside the label set
    std::size_t samples = 0;
};

/// Predictions outside `labels` count toward NFI and are always wrong. Macro
/// F1 is the unweighted mean of per-class F1 over labels that occur in golds.
ClassificationResult classification_scores(std::span<const std::string> preds,
                                           std::span<const std::string> golds,
                                           std::span<const std::string> labels);

struct QaResult {
    double exact_match = 0;
    double overlap_f1 = 0;
};

/// Lowercase, drop punctuation, collapse whitespace. Articles and diacritics
/// are kept.
std::string normalize_answer(std::string_view text);

/// Best EM and F1 over the gold answers for one prediction.
QaResult qa_score(std::string_view pred, std::span<const std::string> golds);
/// Sample mean of qa_score.
QaResult qa_scores(std::span<const std::string> preds, std::span<const std::vector<std::string>> golds);

struct RougeResult {
    double rouge1 = 0;
    double rouge2 = 0;
    double rougeL = 0;
};

/// Lowercased runs of alphanumeric code points.
std::vector<std::string> rouge_tokenize(std::string_view text);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

RougeResult rouge_scores(std::span<const std::string> pred_tokens, std::span<const std::string> ref_tokens);
RougeResult rouge_scores(std::string_view pred, std::string_view ref);

class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct CorrelationResult {
    double pearson = 0;
    double spearman = 0;
};

/// 1-based ranks, ties receive the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
/// Throws UndefinedCorrelation for fewer than two points or a constant input.
CorrelationResult correlations(std::span<const double> x, std::span<const double> y);

struct TaskScore {
    Task task;
    double value;  ///< primary metric; Pearson in [-1, 1] for RoSTS
};

/// Maps a task's primary score onto 0-100: RoSTS Pearson p -> (p + 1) / 2 * 100.
double normalized_score(const TaskScore& score);

/// Mean of the seven normalized primary scores. Throws InvalidArgument when
/// a task is missing or repeated.
double aggregate_average(std::span<const TaskScore> scores);

/// Rounds half away from zero to `digits` decimals.
double round_to(double value, int digits);

}  // namespace roqlora::metrics
