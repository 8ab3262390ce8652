#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gradedrank/core.hpp"

namespace gradedrank {

enum class PromptTemplateKind { QG, RG_YN, RG_TEXTUAL, RG_SCALE };

PromptTemplateKind template_kind_from_name(const std::string& name);
std::string template_kind_name(PromptTemplateKind kind);

/// Few-shot exemplar: a query/document pair with the label the model is
/// expected to output. Labels must belong to the active scheme.
struct Exemplar {
    std::string query_text;
    std::string document_text;
    std::string label;
};

struct PromptPrefix {
    std::optional<std::string> preamble;
    std::vector<Exemplar> exemplars;

    bool empty() const { return !preamble.has_value() && exemplars.empty(); }
};

/// Document text is cut to `max_doc_chars` at a whitespace boundary before
/// substitution. The scored prompt templates carry no other length control.
struct TruncationPolicy {
    std::size_t max_doc_chars = 4000;
};

struct RenderedPrompt {
    std::string text;
    // One continuation per scheme label, index-aligned; for QG the single
    // continuation is the query text.
    std::vector<std::string> continuations;
};

/// Template bodies with {query}, {document}, {labels}, {lo} and {k}
/// placeholders. Defaults reproduce the scored prompt wording exactly;
/// individual bodies can be overridden from plain-text files.
struct TemplateSet {
    std::string qg;
    std::string rg_yn;
    std::string rg_textual;
    std::string rg_scale;

    static TemplateSet defaults();

    void override_from_file(PromptTemplateKind kind, const std::string& path);
    std::string& body(PromptTemplateKind kind);
    const std::string& body(PromptTemplateKind kind) const;
};

/// The surface form scored by the backend. The default prepends a single
/// space to each label; the original work's exact form is not recoverable,
/// so both knobs are exposed.
struct ContinuationStyle {
    bool leading_space = true;
    bool quoted = false;
};

struct RenderOptions {
    TruncationPolicy truncation;
    ContinuationStyle continuation_style;
    TemplateSet templates = TemplateSet::defaults();
};

/// Two-label scheme backing the Yes/No method; index 0 is "No" so scores
/// align with y = [0, 1].
LabelScheme yes_no_scheme();

std::string truncate_at_whitespace(const std::string& text, std::size_t max_chars);

/// Renders the prompt for (kind, query, doc) byte-for-byte as the template
/// prescribes, with the optional preamble and few-shot exemplars in front.
/// Pure: identical inputs yield identical bytes.
RenderedPrompt render(PromptTemplateKind kind, const Query& query, const Document& doc,
                      const LabelScheme& scheme, const PromptPrefix& prefix = {},
                      const RenderOptions& options = {});

/// Binary Yes/No prompt; continuations are exactly [" No", " Yes"] under
/// the default style.
RenderedPrompt render_yes_no(const Query& query, const Document& doc,
                             const PromptPrefix& prefix = {}, const RenderOptions& options = {});

}  // namespace gradedrank
