#include "gradedrank/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace gradedrank {

namespace {

void replace_all(std::string& text, const std::string& placeholder, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
}

/// Labels quoted and enumerated in descending relevance order, with
/// ", or " before the last item: "Highly Relevant", ..., or "Not Relevant".
std::string descending_label_list(const LabelScheme& scheme) {
    std::string out;
    for (std::size_t i = scheme.labels.size(); i-- > 0;) {
        if (!out.empty()) {
            out += (i == 0) ? ", or " : ", ";
        }
        out += "\"" + scheme.labels[i] + "\"";
    }
    return out;
}

std::string styled(const std::string& label, const ContinuationStyle& style) {
    std::string out = style.quoted ? "\"" + label + "\"" : label;
    if (style.leading_space) {
        out.insert(out.begin(), ' ');
    }
    return out;
}

std::string substitute(const std::string& body, const std::string& query_text,
                       const std::string& doc_text, const LabelScheme& scheme,
                       PromptTemplateKind kind) {
    std::string out = body;
    replace_all(out, "{query}", query_text);
    replace_all(out, "{document}", doc_text);
    if (kind == PromptTemplateKind::RG_TEXTUAL || kind == PromptTemplateKind::RG_YN) {
        replace_all(out, "{labels}", descending_label_list(scheme));
    }
    if (kind == PromptTemplateKind::RG_SCALE) {
        replace_all(out, "{lo}", scheme.labels.front());
        replace_all(out, "{k}", scheme.labels.back());
    }
    return out;
}

void check_compatibility(PromptTemplateKind kind, const LabelScheme& scheme) {
    if (kind == PromptTemplateKind::RG_TEXTUAL && scheme.kind != SchemeKind::textual) {
        throw ValidationError("RG_TEXTUAL prompt requires a textual label scheme");
    }
    if (kind == PromptTemplateKind::RG_SCALE && scheme.kind != SchemeKind::rating_scale) {
        throw ValidationError("RG_SCALE prompt requires a rating-scale scheme");
    }
}

}  // namespace

PromptTemplateKind template_kind_from_name(const std::string& name) {
    if (name == "qg" || name == "QG") return PromptTemplateKind::QG;
    if (name == "rg_yes_no" || name == "rg_yn" || name == "RG_YN") return PromptTemplateKind::RG_YN;
    if (name == "rg_textual" || name == "RG_TEXTUAL") return PromptTemplateKind::RG_TEXTUAL;
    if (name == "rg_scale" || name == "RG_SCALE") return PromptTemplateKind::RG_SCALE;
    throw ValidationError("unknown prompt template kind \"" + name + "\"");
}

std::string template_kind_name(PromptTemplateKind kind) {
    switch (kind) {
        case PromptTemplateKind::QG: return "qg";
        case PromptTemplateKind::RG_YN: return "rg_yes_no";
        case PromptTemplateKind::RG_TEXTUAL: return "rg_textual";
        case PromptTemplateKind::RG_SCALE: return "rg_scale";
    }
    return "unknown";
}

TemplateSet TemplateSet::defaults() {
    TemplateSet set;
    set.qg =
        "I will check whether what you said could answer my question.\n"
        "\n"
        "You said: {document}\n"
        "I googled:";
    set.rg_yn =
        "For the following query and document, judge whether they are relevant. "
        "Output \"Yes\" or \"No\".\n"
        "\n"
        "Query: {query}\n"
        "Document: {document}\n"
        "Output:";
    set.rg_textual =
        "For the following query and document, judge whether they are {labels}.\n"
        "\n"
        "Query: {query}\n"
        "Document: {document}\n"
        "Output:";
    set.rg_scale =
        "From a scale of {lo} to {k}, judge the relevance between the query and the document.\n"
        "\n"
        "Query: {query}\n"
        "Document: {document}\n"
        "Output:";
    return set;
}

std::string& TemplateSet::body(PromptTemplateKind kind) {
    switch (kind) {
        case PromptTemplateKind::QG: return qg;
        case PromptTemplateKind::RG_YN: return rg_yn;
        case PromptTemplateKind::RG_TEXTUAL: return rg_textual;
        case PromptTemplateKind::RG_SCALE: return rg_scale;
    }
    throw ValidationError("bad template kind");
}

const std::string& TemplateSet::body(PromptTemplateKind kind) const {
    return const_cast<TemplateSet*>(this)->body(kind);
}

void TemplateSet::override_from_file(PromptTemplateKind kind, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot read template file " + path);
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    std::string text = buffer.str();
    // Editors append a final newline; the template body must end at the cue.
    if (!text.empty() && text.back() == '\n') {
        text.pop_back();
        if (!text.empty() && text.back() == '\r') {
            text.pop_back();
        }
    }
    body(kind) = text;
}

LabelScheme yes_no_scheme() {
    return custom_scheme({"No", "Yes"}, {0.0, 1.0}, SchemeKind::textual);
}

std::string truncate_at_whitespace(const std::string& text, std::size_t max_chars) {
    if (max_chars == 0) {
        throw ValidationError("truncation limit must be > 0");
    }
    if (text.size() <= max_chars) {
        return text;
    }
    std::size_t cut = max_chars;
    while (cut > 0 && !std::isspace(static_cast<unsigned char>(text[cut]))) {
        --cut;
    }
    if (cut == 0) {
        cut = max_chars;  // no whitespace in the window, hard cut
    }
    std::string out = text.substr(0, cut);
    while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) {
        out.pop_back();
    }
    return out;
}

RenderedPrompt render(PromptTemplateKind kind, const Query& query, const Document& doc,
                      const LabelScheme& scheme, const PromptPrefix& prefix,
                      const RenderOptions& options) {
    if (query.text.empty()) {
        throw ValidationError("query \"" + query.id + "\" has empty text");
    }
    const LabelScheme& active =
        (kind == PromptTemplateKind::RG_YN) ? yes_no_scheme() : scheme;
    check_compatibility(kind, active);

    const std::string& body = options.templates.body(kind);
    const auto truncate = [&](const std::string& text) {
        return truncate_at_whitespace(text, options.truncation.max_doc_chars);
    };

    std::string text;
    if (prefix.preamble) {
        text += *prefix.preamble;
        text += "\n\n";
    }
    for (const auto& exemplar : prefix.exemplars) {
        std::string block =
            substitute(body, exemplar.query_text, truncate(exemplar.document_text), active, kind);
        if (kind == PromptTemplateKind::QG) {
            // QG exemplars complete the prompt with the query itself.
            block += styled(exemplar.query_text, options.continuation_style);
        } else {
            if (std::find(active.labels.begin(), active.labels.end(), exemplar.label) ==
                active.labels.end()) {
                throw ValidationError("exemplar label \"" + exemplar.label +
                                      "\" is not part of the active label scheme");
            }
            block += styled(exemplar.label, options.continuation_style);
        }
        text += block;
        text += "\n\n";
    }
    text += substitute(body, query.text, truncate(document_text(doc)), active, kind);

    RenderedPrompt rendered;
    rendered.text = std::move(text);
    if (kind == PromptTemplateKind::QG) {
        rendered.continuations.push_back(styled(query.text, options.continuation_style));
    } else {
        rendered.continuations.reserve(active.labels.size());
        for (const auto& label : active.labels) {
            rendered.continuations.push_back(styled(label, options.continuation_style));
        }
    }
    return rendered;
}

RenderedPrompt render_yes_no(const Query& query, const Document& doc, const PromptPrefix& prefix,
                             const RenderOptions& options) {
    return render(PromptTemplateKind::RG_YN, query, doc, yes_no_scheme(), prefix, options);
}

}  // namespace gradedrank
