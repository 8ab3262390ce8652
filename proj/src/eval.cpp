#include "gradedrank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <boost/math/distributions/students_t.hpp>

namespace gradedrank {

GainMode gain_mode_from_name(const std::string& name) {
    if (name == "linear") return GainMode::linear;
    if (name == "exponential" || name == "exp") return GainMode::exponential;
    throw ValidationError("unknown gain mode \"" + name + "\"");
}

std::string gain_mode_name(GainMode mode) {
    return mode == GainMode::linear ? "linear" : "exponential";
}

namespace {

double gain(int grade, GainMode mode) {
    if (mode == GainMode::linear) {
        return static_cast<double>(grade);
    }
    return std::exp2(static_cast<double>(grade)) - 1.0;
}

std::string format6(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.6f", value);
    return buffer;
}

}  // namespace

std::optional<double> ndcg_at_k(const RankedList& ranked, const Qrels& qrels, int k,
                                GainMode mode) {
    if (k < 1) {
        throw ValidationError("ndcg_at_k requires k >= 1");
    }
    auto judged = qrels.judged_grades(ranked.query_id);
    std::sort(judged.begin(), judged.end(), std::greater<int>());
    if (judged.empty() || judged.front() <= 0) {
        return std::nullopt;  // no relevant documents for this query
    }

    double ideal = 0.0;
    for (std::size_t r = 0; r < judged.size() && r < static_cast<std::size_t>(k); ++r) {
        ideal += gain(judged[r], mode) / std::log2(static_cast<double>(r) + 2.0);
    }

    double dcg = 0.0;
    for (std::size_t r = 0; r < ranked.entries.size() && r < static_cast<std::size_t>(k); ++r) {
        const int grade = qrels.grade(ranked.query_id, ranked.entries[r].doc_id);
        dcg += gain(grade, mode) / std::log2(static_cast<double>(r) + 2.0);
    }
    return dcg / ideal;
}

MetricReport evaluate_ranked_lists(const std::vector<RankedList>& lists, const Qrels& qrels,
                                   int k, GainMode mode) {
    MetricReport report;
    report.k = k;
    report.gain_mode = mode;
    double total = 0.0;
    for (const auto& list : lists) {
        const auto value = ndcg_at_k(list, qrels, k, mode);
        if (!value) {
            ++report.skipped_no_relevant;
            continue;
        }
        report.per_query[list.query_id] = *value;
        total += *value;
        ++report.evaluated;
    }
    report.mean = report.evaluated > 0 ? total / static_cast<double>(report.evaluated) : 0.0;
    return report;
}

SignificanceResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ValidationError("paired t-test requires equal-length samples");
    }
    const std::size_t n = a.size();
    if (n < 2) {
        throw ValidationError("paired t-test requires at least 2 pairs");
    }
    std::vector<double> diffs(n);
    for (std::size_t i = 0; i < n; ++i) {
        diffs[i] = a[i] - b[i];
    }
    double mean = 0.0;
    for (double d : diffs) {
        mean += d;
    }
    mean /= static_cast<double>(n);

    double sum_sq = 0.0;
    for (double d : diffs) {
        sum_sq += (d - mean) * (d - mean);
    }
    if (sum_sq == 0.0) {
        throw ValidationError("paired t-test is degenerate: all differences identical");
    }
    const double sd = std::sqrt(sum_sq / static_cast<double>(n - 1));

    SignificanceResult result;
    result.paired_n = static_cast<int>(n);
    result.df = static_cast<int>(n) - 1;
    result.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));

    const boost::math::students_t dist(static_cast<double>(result.df));
    result.p_value = 2.0 * boost::math::cdf(dist, -std::abs(result.t_statistic));
    return result;
}

void export_scatter(const PairScoreMap& scores_a, const PairScoreMap& scores_b,
                    const std::string& path) {
    std::vector<std::pair<std::string, std::string>> common;
    for (const auto& [key, unused] : scores_a) {
        if (scores_b.count(key) > 0) {
            common.push_back(key);
        }
    }
    if (common.empty()) {
        throw ValidationError("scatter export: the two score maps share no (query, doc) pairs");
    }
    // PairScoreMap iterates in (query_id, doc_id) order already.
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write scatter file " + path);
    }
    out << "query_id,doc_id,score_a,score_b\n";
    for (const auto& key : common) {
        out << key.first << "," << key.second << "," << format6(scores_a.at(key)) << ","
            << format6(scores_b.at(key)) << "\n";
    }
}

void export_marginals(const std::vector<MarginalRecord>& records, const Qrels& qrels,
                      const std::string& path) {
    if (records.empty()) {
        throw ValidationError("marginal export: no probability records");
    }
    const std::size_t label_count = records.front().probs.size();
    for (const auto& record : records) {
        if (record.probs.size() != label_count) {
            throw ValidationError("marginal export: records mix label schemes (" +
                                  std::to_string(record.probs.size()) + " vs " +
                                  std::to_string(label_count) + " labels)");
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write marginals file " + path);
    }
    out << "ground_truth_grade,label_index,p_k\n";
    for (const auto& record : records) {
        const int grade = qrels.grade(record.query_id, record.doc_id);
        for (std::size_t k = 0; k < record.probs.size(); ++k) {
            out << grade << "," << k << "," << format6(record.probs[k]) << "\n";
        }
    }
}

}  // namespace gradedrank
