#include "gradedrank/core.hpp"

#include <algorithm>
#include <unordered_set>

namespace gradedrank {

std::string document_text(const Document& doc) {
    if (doc.title.empty()) {
        return doc.body;
    }
    return doc.title + " " + doc.body;
}

namespace {

std::size_t peak_of(const std::vector<double>& values) {
    // Ties go to the highest index: labels are ordered ascending by intent.
    std::size_t peak = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (values[k] >= values[peak]) {
            peak = k;
        }
    }
    return peak;
}

void validate_scheme(const std::vector<std::string>& labels, const std::vector<double>& values) {
    if (labels.size() < 2) {
        throw ValidationError("label scheme needs at least 2 labels, got " +
                              std::to_string(labels.size()));
    }
    if (labels.size() != values.size()) {
        throw ValidationError("label/value length mismatch: " + std::to_string(labels.size()) +
                              " labels vs " + std::to_string(values.size()) + " values");
    }
    std::unordered_set<std::string> seen;
    for (const auto& label : labels) {
        if (!seen.insert(label).second) {
            throw ValidationError("duplicate label \"" + label + "\"");
        }
    }
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] < values[k - 1]) {
            throw ValidationError("relevance values must be non-decreasing (index " +
                                  std::to_string(k) + ")");
        }
    }
}

}  // namespace

LabelScheme preset_scheme(PresetScheme preset) {
    std::vector<std::string> labels;
    switch (preset) {
        case PresetScheme::RG2L:
            labels = {"Not Relevant", "Relevant"};
            break;
        case PresetScheme::RG3L:
            labels = {"Not Relevant", "Somewhat Relevant", "Highly Relevant"};
            break;
        case PresetScheme::RG4L:
            labels = {"Not Relevant", "Somewhat Relevant", "Highly Relevant",
                      "Perfectly Relevant"};
            break;
    }
    std::vector<double> values(labels.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
        values[k] = static_cast<double>(k);
    }
    return custom_scheme(std::move(labels), std::move(values), SchemeKind::textual);
}

PresetScheme preset_from_name(const std::string& name) {
    if (name == "RG2L" || name == "RG-2L") return PresetScheme::RG2L;
    if (name == "RG3L" || name == "RG-3L") return PresetScheme::RG3L;
    if (name == "RG4L" || name == "RG-4L") return PresetScheme::RG4L;
    throw ValidationError("unknown preset scheme \"" + name + "\"");
}

LabelScheme rating_scheme(int lo, int hi) {
    if (lo >= hi) {
        throw ValidationError("degenerate rating scale [" + std::to_string(lo) + "," +
                              std::to_string(hi) + "]: lo must be < hi");
    }
    if (lo < 0) {
        throw ValidationError("rating scale start must be >= 0, got " + std::to_string(lo));
    }
    std::vector<std::string> labels;
    std::vector<double> values;
    for (int v = lo; v <= hi; ++v) {
        labels.push_back(std::to_string(v));
        values.push_back(static_cast<double>(v));
    }
    return custom_scheme(std::move(labels), std::move(values), SchemeKind::rating_scale);
}

LabelScheme custom_scheme(std::vector<std::string> labels, std::vector<double> values,
                          SchemeKind kind) {
    validate_scheme(labels, values);
    LabelScheme scheme;
    scheme.kind = kind;
    scheme.peak_index = peak_of(values);
    scheme.labels = std::move(labels);
    scheme.relevance_values = std::move(values);
    return scheme;
}

LabelScheme with_values(const LabelScheme& scheme, std::vector<double> values) {
    return custom_scheme(scheme.labels, std::move(values), scheme.kind);
}

void Qrels::add(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0) {
        throw ValidationError("negative relevance grade for (" + query_id + ", " + doc_id + ")");
    }
    records_.push_back({query_id, doc_id, grade});
    by_query_[query_id][doc_id] = grade;
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
    auto q = by_query_.find(query_id);
    if (q == by_query_.end()) {
        return 0;
    }
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
}

std::vector<int> Qrels::judged_grades(const std::string& query_id) const {
    std::vector<int> grades;
    auto q = by_query_.find(query_id);
    if (q == by_query_.end()) {
        return grades;
    }
    grades.reserve(q->second.size());
    for (const auto& [doc_id, grade] : q->second) {
        grades.push_back(grade);
    }
    return grades;
}

bool Qrels::has_relevant(const std::string& query_id) const {
    auto q = by_query_.find(query_id);
    if (q == by_query_.end()) {
        return false;
    }
    return std::any_of(q->second.begin(), q->second.end(),
                       [](const auto& kv) { return kv.second > 0; });
}

}  // namespace gradedrank
