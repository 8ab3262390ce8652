#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradedrank/core.hpp"

namespace gradedrank {

enum class GainMode { linear, exponential };

GainMode gain_mode_from_name(const std::string& name);
std::string gain_mode_name(GainMode mode);

struct MetricReport {
    std::map<std::string, double> per_query;  // sorted for stable output
    double mean = 0.0;
    int k = 10;
    GainMode gain_mode = GainMode::linear;
    std::size_t evaluated = 0;
    std::size_t skipped_no_relevant = 0;  // queries without any positive grade
};

/// NDCG@k: DCG = sum gain(rel_r) / log2(r + 1) over the top k, IDCG from
/// all judged grades of the query sorted descending (retrieved or not).
/// Queries with no relevant documents return nullopt and are excluded
/// from report means.
std::optional<double> ndcg_at_k(const RankedList& ranked, const Qrels& qrels, int k,
                                GainMode mode = GainMode::linear);

MetricReport evaluate_ranked_lists(const std::vector<RankedList>& lists, const Qrels& qrels,
                                   int k = 10, GainMode mode = GainMode::linear);

struct SignificanceResult {
    double t_statistic = 0.0;
    double p_value = 1.0;  // two-sided
    int df = 0;
    int paired_n = 0;
};

/// Two-sided paired t-test with sample standard deviation (n-1). Rejects
/// length mismatches, n < 2 and zero-variance differences.
SignificanceResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

using PairScoreMap = std::map<std::pair<std::string, std::string>, double>;

/// CSV of (query_id, doc_id, score_a, score_b) over the key intersection,
/// sorted by (query_id, doc_id). Errors on an empty intersection.
void export_scatter(const PairScoreMap& scores_a, const PairScoreMap& scores_b,
                    const std::string& path);

struct MarginalRecord {
    std::string query_id;
    std::string doc_id;
    std::vector<double> probs;  // softmax over one scheme's labels
};

/// Long-format CSV (ground_truth_grade, label_index, p_k), one row per
/// (pair, label). Pairs missing from qrels count as grade 0.
void export_marginals(const std::vector<MarginalRecord>& records, const Qrels& qrels,
                      const std::string& path);

}  // namespace gradedrank
