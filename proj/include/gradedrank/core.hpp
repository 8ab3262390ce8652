#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gradedrank {

/// Raised when an input violates a documented precondition (bad config,
/// malformed scheme, inconsistent lengths).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a file cannot be parsed; messages carry the line number.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Query {
    std::string id;
    std::string text;
};

struct Document {
    std::string id;
    std::string title;  // may be empty
    std::string body;
};

/// Text surface of a document as fed to prompts and the indexer:
/// title and body joined by a single space when the title is non-empty.
std::string document_text(const Document& doc);

/// One first-stage retrieval result. Ranks are 1-based and, within a
/// candidate list, form a permutation of 1..m with non-increasing scores.
struct Candidate {
    std::string doc_id;
    double first_stage_score = 0.0;
    int first_stage_rank = 0;
};

enum class SchemeKind { textual, rating_scale };

/// Ordered relevance labels l_0..l_K (ascending relevance) with their
/// relevance values y_0..y_K. peak_index points at the maximum value,
/// ties resolved to the highest index.
struct LabelScheme {
    SchemeKind kind = SchemeKind::textual;
    std::vector<std::string> labels;
    std::vector<double> relevance_values;
    std::size_t peak_index = 0;

    std::size_t size() const { return labels.size(); }
};

enum class PresetScheme { RG2L, RG3L, RG4L };

/// The named textual label sets (2, 3 and 4 levels) with y_k = k.
LabelScheme preset_scheme(PresetScheme preset);

PresetScheme preset_from_name(const std::string& name);

/// Numeric rating scale: labels are the decimal strings "lo".."hi" and
/// y_k = lo + k. Rejects lo >= hi and lo < 0.
LabelScheme rating_scheme(int lo, int hi);

/// A validated scheme from caller-provided labels and values. Labels must
/// be pairwise distinct and values non-decreasing, at least two of each.
LabelScheme custom_scheme(std::vector<std::string> labels, std::vector<double> values,
                          SchemeKind kind = SchemeKind::textual);

/// Same labels, different relevance values (used by the y_k sweeps).
LabelScheme with_values(const LabelScheme& scheme, std::vector<double> values);

/// Per-label log-likelihoods s_0..s_K aligned with a LabelScheme.
using LabelLogLikelihoods = std::vector<double>;

struct RankedEntry {
    std::string doc_id;
    double score = 0.0;
    int rank = 0;
};

/// Reranked output for one query: ranks 1..n consecutive, scores
/// non-increasing, doc_ids distinct.
struct RankedList {
    std::string query_id;
    std::vector<RankedEntry> entries;
};

struct QrelRecord {
    std::string query_id;
    std::string doc_id;
    int grade = 0;
};

/// Graded ground-truth judgments keyed by (query id, doc id). Grades are
/// non-negative integers; absent pairs read as grade 0. Insertion order is
/// preserved so that writing a parsed file reproduces it byte for byte.
class Qrels {
  public:
    void add(const std::string& query_id, const std::string& doc_id, int grade);

    int grade(const std::string& query_id, const std::string& doc_id) const;

    /// All judged grades for a query (retrieved or not); empty if unknown.
    std::vector<int> judged_grades(const std::string& query_id) const;

    bool has_relevant(const std::string& query_id) const;

    const std::vector<QrelRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

  private:
    std::vector<QrelRecord> records_;
    std::unordered_map<std::string, std::unordered_map<std::string, int>> by_query_;
};

}  // namespace gradedrank
