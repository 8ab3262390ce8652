#pragma once

#include <string>
#include <vector>

#include "gradedrank/core.hpp"

namespace gradedrank {

enum class DerivationStrategy {
    ExpectedRelevance,
    PeakRelevance,
    GeneratedLabel,
    BinaryYesNo,
    QueryGeneration,
};

DerivationStrategy strategy_from_name(const std::string& name);
std::string strategy_name(DerivationStrategy strategy);

/// Softmax over label log-likelihoods, computed with max-subtraction.
/// Outputs are non-negative and sum to 1 within 1e-12.
std::vector<double> softmax_probs(const LabelLogLikelihoods& log_likelihoods);

/// Expected relevance value: sum_k p_k * y_k with p = softmax(s). The
/// result lies in [min y, max y].
double expected_relevance(const LabelLogLikelihoods& log_likelihoods, const LabelScheme& scheme);

/// Raw log-likelihood of the peak relevance label — deliberately not the
/// marginal probability, so a backend only needs to score one label.
double peak_relevance(const LabelLogLikelihoods& log_likelihoods, const LabelScheme& scheme);

/// Two-way softmax of the "Yes" likelihood against "No"; in (0, 1) and
/// equal to expected_relevance with y = [0, 1].
double binary_yes_no(double log_likelihood_no, double log_likelihood_yes);

struct GeneratedScore {
    double value = 0.0;  // relevance value y of the parsed label
    bool parsed = false;
    int tie_key = 0;  // first-stage rank, used to break the frequent ties
};

/// Ranks by the label parsed out of generated text: the earliest scheme
/// label occurring in the text (first integer in range, for rating scales).
/// Unparseable text falls back to the minimum relevance value with
/// parsed=false. Total: never throws on text content.
GeneratedScore generated_label_score(const std::string& text, const LabelScheme& scheme,
                                     int first_stage_rank);

/// Mean per-token log-likelihood of the query continuation. Length
/// normalization removes the bias toward short queries.
double query_generation_score(const std::vector<double>& token_log_likelihoods);

/// Sorts candidates by descending score; ties broken by ascending
/// first-stage rank. Rejects NaN scores.
RankedList rank(const std::string& query_id, const std::vector<Candidate>& candidates,
                const std::vector<double>& scores);

}  // namespace gradedrank
