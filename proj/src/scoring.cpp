#include "gradedrank/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace gradedrank {

DerivationStrategy strategy_from_name(const std::string& name) {
    if (name == "expected_relevance" || name == "er") return DerivationStrategy::ExpectedRelevance;
    if (name == "peak_relevance" || name == "pr") return DerivationStrategy::PeakRelevance;
    if (name == "generated" || name == "generated_label") return DerivationStrategy::GeneratedLabel;
    if (name == "binary_yes_no" || name == "yn") return DerivationStrategy::BinaryYesNo;
    if (name == "query_generation" || name == "qg") return DerivationStrategy::QueryGeneration;
    throw ValidationError("unknown derivation strategy \"" + name + "\"");
}

std::string strategy_name(DerivationStrategy strategy) {
    switch (strategy) {
        case DerivationStrategy::ExpectedRelevance: return "expected_relevance";
        case DerivationStrategy::PeakRelevance: return "peak_relevance";
        case DerivationStrategy::GeneratedLabel: return "generated";
        case DerivationStrategy::BinaryYesNo: return "binary_yes_no";
        case DerivationStrategy::QueryGeneration: return "query_generation";
    }
    return "unknown";
}

std::vector<double> softmax_probs(const LabelLogLikelihoods& log_likelihoods) {
    if (log_likelihoods.empty()) {
        throw ValidationError("softmax over empty log-likelihood vector");
    }
    for (double value : log_likelihoods) {
        if (!std::isfinite(value)) {
            throw ValidationError("non-finite log-likelihood in softmax input");
        }
    }
    const double max_value = *std::max_element(log_likelihoods.begin(), log_likelihoods.end());
    std::vector<double> probs(log_likelihoods.size());
    double total = 0.0;
    for (std::size_t k = 0; k < log_likelihoods.size(); ++k) {
        probs[k] = std::exp(log_likelihoods[k] - max_value);
        total += probs[k];
    }
    for (double& p : probs) {
        p /= total;
    }
    return probs;
}

double expected_relevance(const LabelLogLikelihoods& log_likelihoods, const LabelScheme& scheme) {
    if (log_likelihoods.size() != scheme.size()) {
        throw ValidationError("log-likelihood count " + std::to_string(log_likelihoods.size()) +
                              " does not match scheme label count " +
                              std::to_string(scheme.size()));
    }
    const auto probs = softmax_probs(log_likelihoods);
    double value = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        value += probs[k] * scheme.relevance_values[k];
    }
    return value;
}

double peak_relevance(const LabelLogLikelihoods& log_likelihoods, const LabelScheme& scheme) {
    if (log_likelihoods.size() != scheme.size()) {
        throw ValidationError("log-likelihood count " + std::to_string(log_likelihoods.size()) +
                              " does not match scheme label count " +
                              std::to_string(scheme.size()));
    }
    return log_likelihoods[scheme.peak_index];
}

double binary_yes_no(double log_likelihood_no, double log_likelihood_yes) {
    if (!std::isfinite(log_likelihood_no) || !std::isfinite(log_likelihood_yes)) {
        throw ValidationError("non-finite log-likelihood in yes/no softmax");
    }
    const double max_value = std::max(log_likelihood_no, log_likelihood_yes);
    const double exp_no = std::exp(log_likelihood_no - max_value);
    const double exp_yes = std::exp(log_likelihood_yes - max_value);
    return exp_yes / (exp_yes + exp_no);
}

namespace {

/// First integer literal in the text, as (position, value); npos if none.
std::pair<std::size_t, long> first_integer(const std::string& text) {
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            std::size_t end = i;
            while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) {
                ++end;
            }
            return {i, std::stol(text.substr(i, end - i))};
        }
    }
    return {std::string::npos, 0};
}

}  // namespace

GeneratedScore generated_label_score(const std::string& text, const LabelScheme& scheme,
                                     int first_stage_rank) {
    GeneratedScore result;
    result.tie_key = first_stage_rank;

    std::size_t best_pos = std::string::npos;
    std::size_t best_len = 0;
    std::size_t best_index = 0;

    if (scheme.kind == SchemeKind::rating_scale) {
        const auto [pos, value] = first_integer(text);
        if (pos != std::string::npos) {
            for (std::size_t k = 0; k < scheme.size(); ++k) {
                if (scheme.labels[k] == std::to_string(value)) {
                    best_pos = pos;
                    best_index = k;
                    break;
                }
            }
        }
    } else {
        // Earliest occurrence wins; on a position tie the longer label does,
        // so "Not Relevant" is never mistaken for its suffix "Relevant".
        for (std::size_t k = 0; k < scheme.size(); ++k) {
            const std::size_t pos = text.find(scheme.labels[k]);
            if (pos == std::string::npos) {
                continue;
            }
            if (pos < best_pos || (pos == best_pos && scheme.labels[k].size() > best_len)) {
                best_pos = pos;
                best_len = scheme.labels[k].size();
                best_index = k;
            }
        }
    }

    if (best_pos == std::string::npos) {
        result.value = *std::min_element(scheme.relevance_values.begin(),
                                         scheme.relevance_values.end());
        result.parsed = false;
    } else {
        result.value = scheme.relevance_values[best_index];
        result.parsed = true;
    }
    return result;
}

double query_generation_score(const std::vector<double>& token_log_likelihoods) {
    if (token_log_likelihoods.empty()) {
        throw ValidationError("query generation score over empty token list");
    }
    for (double value : token_log_likelihoods) {
        if (!std::isfinite(value)) {
            throw ValidationError("non-finite token log-likelihood");
        }
    }
    const double total = std::accumulate(token_log_likelihoods.begin(),
                                         token_log_likelihoods.end(), 0.0);
    return total / static_cast<double>(token_log_likelihoods.size());
}

RankedList rank(const std::string& query_id, const std::vector<Candidate>& candidates,
                const std::vector<double>& scores) {
    if (candidates.size() != scores.size()) {
        throw ValidationError("one score per candidate required: " +
                              std::to_string(candidates.size()) + " candidates vs " +
                              std::to_string(scores.size()) + " scores");
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) {
            throw ValidationError("NaN ranking score for document " + candidates[i].doc_id);
        }
    }

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return candidates[a].first_stage_rank < candidates[b].first_stage_rank;
    });

    RankedList list;
    list.query_id = query_id;
    list.entries.reserve(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        list.entries.push_back(
            {candidates[order[i]].doc_id, scores[order[i]], static_cast<int>(i + 1)});
    }
    return list;
}

}  // namespace gradedrank
