#include "gradedrank/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace gradedrank {

namespace {

std::string format6(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.6f", value);
    return buffer;
}

std::size_t whitespace_token_count(const std::string& text) {
    std::istringstream stream(text);
    std::string token;
    std::size_t count = 0;
    while (stream >> token) {
        ++count;
    }
    return count;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& body) {
    if (count == 0) {
        return;
    }
    const int pool_size = std::max(1, std::min<int>(workers, static_cast<int>(count)));
    if (pool_size == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(pool_size);
    for (int w = 0; w < pool_size; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) {
                    break;
                }
                body(i);
            }
        });
    }
    for (auto& thread : pool) {
        thread.join();
    }
}

SyntheticBackend* find_synthetic(Backend& backend) {
    if (auto* synthetic = dynamic_cast<SyntheticBackend*>(&backend)) {
        return synthetic;
    }
    if (auto* cached = dynamic_cast<CachedBackend*>(&backend)) {
        return find_synthetic(cached->inner());
    }
    return nullptr;
}

}  // namespace

std::string sanitize_filename(const std::string& name) {
    std::string out = name;
    for (char& c : out) {
        const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                          (c >= '0' && c <= '9') || c == '.' || c == '-' || c == '_';
        if (!keep) {
            c = '_';
        }
    }
    return out.empty() ? "unnamed" : out;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

std::string resolve_path(const std::string& path, const std::string& base_dir) {
    if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) {
        return path;
    }
    return (fs::path(base_dir) / path).lexically_normal().string();
}

LabelScheme parse_scheme(const nlohmann::json& spec) {
    if (spec.contains("preset")) {
        return preset_scheme(preset_from_name(spec["preset"].get<std::string>()));
    }
    if (spec.contains("scale")) {
        const auto& scale = spec["scale"];
        if (!scale.is_array() || scale.size() != 2) {
            throw ValidationError("scheme.scale must be [lo, hi]");
        }
        return rating_scheme(scale[0].get<int>(), scale[1].get<int>());
    }
    if (spec.contains("labels")) {
        const SchemeKind kind = spec.value("kind", std::string("textual")) == "rating_scale"
                                    ? SchemeKind::rating_scale
                                    : SchemeKind::textual;
        if (!spec.contains("values")) {
            throw ValidationError("custom scheme needs a values array");
        }
        return custom_scheme(spec["labels"].get<std::vector<std::string>>(),
                             spec["values"].get<std::vector<double>>(), kind);
    }
    throw ValidationError("scheme needs one of: preset, scale, labels");
}

PromptPrefix parse_prefix(const nlohmann::json& spec) {
    PromptPrefix prefix;
    if (spec.contains("preamble")) {
        prefix.preamble = spec["preamble"].get<std::string>();
    }
    for (const auto& exemplar : spec.value("exemplars", nlohmann::json::array())) {
        prefix.exemplars.push_back({exemplar.at("query").get<std::string>(),
                                    exemplar.at("document").get<std::string>(),
                                    exemplar.value("label", std::string{})});
    }
    return prefix;
}

MethodSpec parse_method(const nlohmann::json& spec, const std::string& base_dir) {
    MethodSpec method;
    method.name = spec.value("name", std::string{});
    method.strategy = strategy_from_name(spec.value("derivation", std::string("expected_relevance")));

    if (spec.contains("scheme")) {
        method.scheme = parse_scheme(spec["scheme"]);
    } else if (method.strategy == DerivationStrategy::BinaryYesNo ||
               method.strategy == DerivationStrategy::QueryGeneration) {
        method.scheme = yes_no_scheme();  // placeholder, not rendered
    } else {
        throw ValidationError("method \"" + method.name + "\" needs a scheme");
    }
    if (spec.contains("values")) {
        method.scheme = with_values(method.scheme, spec["values"].get<std::vector<double>>());
    }

    if (spec.contains("template")) {
        method.kind = template_kind_from_name(spec["template"].get<std::string>());
    } else {
        switch (method.strategy) {
            case DerivationStrategy::QueryGeneration:
                method.kind = PromptTemplateKind::QG;
                break;
            case DerivationStrategy::BinaryYesNo:
                method.kind = PromptTemplateKind::RG_YN;
                break;
            default:
                method.kind = method.scheme.kind == SchemeKind::rating_scale
                                  ? PromptTemplateKind::RG_SCALE
                                  : PromptTemplateKind::RG_TEXTUAL;
        }
    }

    if (spec.contains("prefix")) {
        method.prefix = parse_prefix(spec["prefix"]);
    }
    method.template_file = resolve_path(spec.value("template_file", std::string{}), base_dir);
    method.generated_sampled = spec.value("sampled", false);
    method.qg_length_normalize = spec.value("length_normalize", true);
    return method;
}

BackendSpec parse_backend(nlohmann::json& spec, const std::string& base_dir,
                          std::uint64_t default_seed) {
    BackendSpec backend;
    const std::string kind = spec.value("kind", std::string("synthetic"));
    if (kind == "table") {
        backend.kind = BackendSpec::Kind::table;
        backend.fixture_path = resolve_path(spec.value("fixture", std::string{}), base_dir);
        spec["fixture"] = backend.fixture_path;
    } else if (kind == "synthetic") {
        backend.kind = BackendSpec::Kind::synthetic;
        backend.synthetic.noise_sigma = spec.value("noise_sigma", 0.0);
        backend.synthetic.seed = spec.value("seed", default_seed);
        if (spec.contains("calibration")) {
            for (const auto& [count_key, table] : spec["calibration"].items()) {
                auto& parsed = backend.synthetic.calibrations[std::stoi(count_key)];
                for (const auto& [grade_key, means] : table.items()) {
                    parsed[std::stoi(grade_key)] = means.get<std::vector<double>>();
                }
            }
        }
        if (spec.contains("qrels")) {
            backend.synthetic_qrels_path =
                resolve_path(spec["qrels"].get<std::string>(), base_dir);
            spec["qrels"] = backend.synthetic_qrels_path;
        } else {
            backend.synthetic_use_dataset_qrels = spec.value("use_dataset_qrels", true);
        }
    } else if (kind == "http") {
        backend.kind = BackendSpec::Kind::http;
        backend.http.base_url = spec.value("base_url", std::string{});
        backend.http.bearer_token = spec.value("token", std::string{});
        backend.http.max_tokens = spec.value("max_tokens", 32);
        backend.http.id = spec.value("id", std::string{});
        if (spec.contains("retry")) {
            backend.http.retry.max_attempts = spec["retry"].value("max_attempts", 5);
            backend.http.retry.base_delay_ms = spec["retry"].value("base_delay_ms", 1000);
        }
    } else {
        throw ValidationError("unknown backend kind \"" + kind + "\"");
    }
    return backend;
}

void apply_override(nlohmann::json& root, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ValidationError("override \"" + assignment + "\" is not key.path=value");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string value_text = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(value_text);
    } catch (const nlohmann::json::exception&) {
        value = value_text;  // bare strings are fine
    }

    nlohmann::json* node = &root;
    std::size_t start = 0;
    std::vector<std::string> segments;
    while (true) {
        const std::size_t dot = path.find('.', start);
        segments.push_back(path.substr(start, dot - start));
        if (dot == std::string::npos) {
            break;
        }
        start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
        const std::string& segment = segments[i];
        if (node->is_array()) {
            node = &(*node)[std::stoul(segment)];
        } else {
            node = &(*node)[segment];
        }
    }
    if (node->is_array()) {
        (*node)[std::stoul(segments.back())] = value;
    } else {
        (*node)[segments.back()] = value;
    }
}

}  // namespace

ExperimentConfig parse_experiment_config(nlohmann::json raw, const std::string& base_dir) {
    ExperimentConfig config;
    config.seed = raw.value("seed", 0ull);
    config.output_dir = resolve_path(raw.value("output_dir", std::string("out")), base_dir);
    raw["output_dir"] = config.output_dir;
    raw["seed"] = config.seed;

    nlohmann::json dataset_specs = nlohmann::json::array();
    if (raw.contains("datasets")) {
        dataset_specs = raw["datasets"];
    } else if (raw.contains("dataset")) {
        dataset_specs.push_back(raw["dataset"]);
    }
    for (std::size_t i = 0; i < dataset_specs.size(); ++i) {
        auto& spec = dataset_specs[i];
        DatasetSpec dataset;
        dataset.name = spec.value("name", "ds" + std::to_string(i));
        dataset.corpus_path = resolve_path(spec.value("corpus", std::string{}), base_dir);
        dataset.queries_path = resolve_path(spec.value("queries", std::string{}), base_dir);
        dataset.qrels_path = resolve_path(spec.value("qrels", std::string{}), base_dir);
        dataset.first_stage_run_path =
            resolve_path(spec.value("first_stage_run", std::string{}), base_dir);
        spec["name"] = dataset.name;
        spec["corpus"] = dataset.corpus_path;
        spec["queries"] = dataset.queries_path;
        spec["qrels"] = dataset.qrels_path;
        config.datasets.push_back(std::move(dataset));
    }
    raw.erase("dataset");
    raw["datasets"] = dataset_specs;

    if (raw.contains("first_stage")) {
        const auto& spec = raw["first_stage"];
        const std::string mode = spec.value("mode", std::string("bm25"));
        if (mode == "bm25") {
            config.first_stage.mode = FirstStageSpec::Mode::bm25;
        } else if (mode == "run_file") {
            config.first_stage.mode = FirstStageSpec::Mode::run_file;
        } else {
            throw ValidationError("unknown first_stage.mode \"" + mode + "\"");
        }
        config.first_stage.k = spec.value("k", 100u);
        config.first_stage.bm25.k1 = spec.value("k1", 0.9);
        config.first_stage.bm25.b = spec.value("b", 0.4);
        config.first_stage.stopwords = spec.value("stopwords", false);
    }

    for (const auto& spec : raw.value("methods", nlohmann::json::array())) {
        config.methods.push_back(parse_method(spec, base_dir));
    }

    if (raw.contains("backend")) {
        config.backend = parse_backend(raw["backend"], base_dir, config.seed);
    }

    config.baseline_method = raw.value("baseline", std::string{});
    config.truncation.max_doc_chars = raw.value("truncation", nlohmann::json::object())
                                          .value("max_doc_chars", std::size_t{4000});
    if (raw.contains("continuations")) {
        config.continuation_style.leading_space = raw["continuations"].value("leading_space", true);
        config.continuation_style.quoted = raw["continuations"].value("quoted", false);
    }
    if (raw.contains("templates")) {
        for (const auto& [kind_name, path] : raw["templates"].items()) {
            config.templates.override_from_file(
                template_kind_from_name(kind_name),
                resolve_path(path.get<std::string>(), base_dir));
        }
    }
    config.concurrency = raw.value("concurrency", 8);
    config.ndcg_k = raw.value("ndcg_k", 10);
    config.gain_mode = gain_mode_from_name(raw.value("gain", std::string("linear")));
    config.file_cache = raw.value("file_cache", true);

    config.resolved = std::move(raw);
    return config;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open config file " + path);
    }
    nlohmann::json raw;
    try {
        in >> raw;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("bad config JSON in " + path + ": " + e.what());
    }
    for (const auto& assignment : overrides) {
        apply_override(raw, assignment);
    }
    return parse_experiment_config(std::move(raw), fs::path(path).parent_path().string());
}

std::vector<std::string> validate_config(const ExperimentConfig& config) {
    std::vector<std::string> errors;
    const auto complain = [&errors](const std::string& what) { errors.push_back(what); };

    if (config.datasets.empty()) {
        complain("no datasets configured");
    }
    std::unordered_map<std::string, int> dataset_names;
    for (const auto& dataset : config.datasets) {
        if (dataset.name.empty()) {
            complain("dataset with empty name");
        }
        if (++dataset_names[dataset.name] == 2) {
            complain("duplicate dataset name \"" + dataset.name + "\"");
        }
        for (const auto& [label, path] :
             {std::pair<const char*, const std::string&>{"corpus", dataset.corpus_path},
              {"queries", dataset.queries_path},
              {"qrels", dataset.qrels_path}}) {
            if (path.empty()) {
                complain("dataset \"" + dataset.name + "\" missing " + label + " path");
            } else if (!fs::exists(path)) {
                complain("dataset \"" + dataset.name + "\" " + label + " path not found: " + path);
            }
        }
        if (config.first_stage.mode == FirstStageSpec::Mode::run_file) {
            if (dataset.first_stage_run_path.empty()) {
                complain("dataset \"" + dataset.name +
                         "\" needs first_stage_run with mode=run_file");
            } else if (!fs::exists(dataset.first_stage_run_path)) {
                complain("dataset \"" + dataset.name +
                         "\" first_stage_run not found: " + dataset.first_stage_run_path);
            }
        }
    }
    if (config.first_stage.k < 1) {
        complain("first_stage.k must be >= 1");
    }

    if (config.methods.empty()) {
        complain("no methods configured");
    }
    std::unordered_map<std::string, int> method_names;
    for (const auto& method : config.methods) {
        const std::string where = "method \"" + method.name + "\"";
        if (method.name.empty()) {
            complain("method with empty name");
        }
        if (++method_names[method.name] == 2) {
            complain("duplicate method name \"" + method.name + "\"");
        }
        const bool is_qg = method.strategy == DerivationStrategy::QueryGeneration;
        const bool is_yn = method.strategy == DerivationStrategy::BinaryYesNo;
        if (is_qg && method.kind != PromptTemplateKind::QG) {
            complain(where + ": query_generation requires the qg template");
        }
        if (!is_qg && method.kind == PromptTemplateKind::QG) {
            complain(where + ": the qg template only supports query_generation");
        }
        if (is_yn && method.kind != PromptTemplateKind::RG_YN) {
            complain(where + ": binary_yes_no requires the rg_yes_no template");
        }
        if (!is_yn && method.kind == PromptTemplateKind::RG_YN) {
            complain(where + ": the rg_yes_no template only supports binary_yes_no");
        }
        if (method.kind == PromptTemplateKind::RG_TEXTUAL &&
            method.scheme.kind != SchemeKind::textual) {
            complain(where + ": rg_textual template needs a textual scheme");
        }
        if (method.kind == PromptTemplateKind::RG_SCALE &&
            method.scheme.kind != SchemeKind::rating_scale) {
            complain(where + ": rg_scale template needs a rating-scale scheme");
        }
        if (!method.template_file.empty() && !fs::exists(method.template_file)) {
            complain(where + ": template_file not found: " + method.template_file);
        }
        if (method.kind != PromptTemplateKind::QG) {
            const auto& labels =
                method.kind == PromptTemplateKind::RG_YN ? yes_no_scheme().labels
                                                         : method.scheme.labels;
            for (const auto& exemplar : method.prefix.exemplars) {
                if (std::find(labels.begin(), labels.end(), exemplar.label) == labels.end()) {
                    complain(where + ": exemplar label \"" + exemplar.label +
                             "\" is not in the scheme");
                }
            }
        }
        if (config.backend.kind == BackendSpec::Kind::synthetic) {
            int label_count = static_cast<int>(method.scheme.size());
            if (is_qg) {
                label_count = 1;
            } else if (is_yn) {
                label_count = 2;
            }
            if (config.backend.synthetic.calibrations.find(label_count) ==
                config.backend.synthetic.calibrations.end()) {
                complain(where + ": synthetic backend has no calibration for " +
                         std::to_string(label_count) + " labels");
            }
        }
    }

    if (!config.baseline_method.empty() &&
        method_names.find(config.baseline_method) == method_names.end()) {
        complain("baseline method \"" + config.baseline_method + "\" is not in the roster");
    }
    if (config.backend.kind == BackendSpec::Kind::table) {
        if (config.backend.fixture_path.empty()) {
            complain("table backend needs a fixture path");
        } else if (!fs::exists(config.backend.fixture_path)) {
            complain("table fixture not found: " + config.backend.fixture_path);
        }
    }
    if (config.backend.kind == BackendSpec::Kind::http && config.backend.http.base_url.empty() &&
        std::getenv("GRADED_RANK_API_URL") == nullptr) {
        complain("http backend needs base_url or GRADED_RANK_API_URL");
    }
    if (!config.backend.synthetic_qrels_path.empty() &&
        !fs::exists(config.backend.synthetic_qrels_path)) {
        complain("synthetic qrels not found: " + config.backend.synthetic_qrels_path);
    }
    if (config.backend.kind == BackendSpec::Kind::synthetic &&
        config.backend.synthetic.noise_sigma < 0.0) {
        complain("noise_sigma must be non-negative");
    }
    if (config.output_dir.empty()) {
        complain("output_dir must be set");
    }
    if (config.concurrency < 1) {
        complain("concurrency must be >= 1");
    }
    if (config.truncation.max_doc_chars < 1) {
        complain("truncation.max_doc_chars must be >= 1");
    }
    if (config.ndcg_k < 1) {
        complain("ndcg_k must be >= 1");
    }
    return errors;
}

// ---------------------------------------------------------------------------
// Dataset loading

Dataset load_dataset(const DatasetSpec& spec, const FirstStageSpec& first_stage) {
    Dataset dataset;
    dataset.name = spec.name;
    dataset.corpus = read_corpus_jsonl(spec.corpus_path);
    dataset.queries = read_queries_tsv(spec.queries_path);
    dataset.qrels = read_qrels(spec.qrels_path);

    for (std::size_t i = 0; i < dataset.corpus.size(); ++i) {
        if (!dataset.doc_index.emplace(dataset.corpus[i].id, i).second) {
            throw ValidationError("duplicate document id \"" + dataset.corpus[i].id +
                                  "\" in corpus " + spec.corpus_path);
        }
    }

    if (first_stage.mode == FirstStageSpec::Mode::bm25) {
        const InvertedIndex index = build_index(dataset.corpus, first_stage.stopwords);
        for (const auto& query : dataset.queries) {
            dataset.candidates[query.id] = bm25_search(index, query.text, first_stage.k,
                                                       first_stage.bm25, first_stage.stopwords);
        }
    } else {
        auto by_query = candidates_from_run(read_run(spec.first_stage_run_path));
        for (auto& [query_id, candidates] : by_query) {
            if (candidates.size() > first_stage.k) {
                candidates.resize(first_stage.k);
            }
            for (const auto& candidate : candidates) {
                if (dataset.doc_index.find(candidate.doc_id) == dataset.doc_index.end()) {
                    throw ValidationError("run file document \"" + candidate.doc_id +
                                          "\" is not in corpus " + spec.corpus_path);
                }
            }
            dataset.candidates[query_id] = std::move(candidates);
        }
        for (const auto& query : dataset.queries) {
            dataset.candidates.emplace(query.id, std::vector<Candidate>{});
        }
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// Reranking

namespace {

double derive_score(const MethodSpec& method, const PairRecord& record,
                    const std::string& query_text) {
    const auto& lls = record.log_likelihoods;
    switch (method.strategy) {
        case DerivationStrategy::ExpectedRelevance:
            return expected_relevance(lls, method.scheme);
        case DerivationStrategy::PeakRelevance:
            return peak_relevance(lls, method.scheme);
        case DerivationStrategy::BinaryYesNo:
            if (lls.size() != 2) {
                throw ValidationError("yes/no derivation needs exactly 2 log-likelihoods");
            }
            return binary_yes_no(lls[0], lls[1]);
        case DerivationStrategy::QueryGeneration: {
            if (lls.size() != 1) {
                throw ValidationError("query generation expects a single continuation");
            }
            if (!method.qg_length_normalize) {
                return lls[0];
            }
            const std::size_t tokens = std::max<std::size_t>(1, whitespace_token_count(query_text));
            return lls[0] / static_cast<double>(tokens);
        }
        case DerivationStrategy::GeneratedLabel: {
            if (method.generated_sampled) {
                return generated_label_score(record.generated_text, method.scheme,
                                             record.first_stage_rank)
                    .value;
            }
            if (lls.size() != method.scheme.size()) {
                throw ValidationError("generated derivation: log-likelihood count mismatch");
            }
            const std::size_t best =
                std::distance(lls.begin(), std::max_element(lls.begin(), lls.end()));
            return method.scheme.relevance_values[best];
        }
    }
    throw ValidationError("unknown derivation strategy");
}

void check_finite(const std::vector<double>& lls, const std::string& query_id,
                  const std::string& doc_id) {
    for (std::size_t k = 0; k < lls.size(); ++k) {
        if (!std::isfinite(lls[k])) {
            throw ValidationError("non-finite log-likelihood from backend for query \"" +
                                  query_id + "\", document \"" + doc_id + "\", label " +
                                  std::to_string(k));
        }
    }
}

MethodDatasetResult assemble_result(const Dataset& dataset, const MethodSpec& method,
                                    std::vector<std::vector<PairRecord>> per_query_records,
                                    std::vector<std::vector<std::string>> per_query_errors,
                                    const RunnerOptions& options) {
    MethodDatasetResult result;
    result.method = method.name;
    result.dataset = dataset.name;

    for (std::size_t qi = 0; qi < dataset.queries.size(); ++qi) {
        const Query& query = dataset.queries[qi];
        if (!per_query_errors[qi].empty()) {
            result.failures.push_back({query.id, per_query_errors[qi].front()});
            continue;
        }
        auto& records = per_query_records[qi];
        std::sort(records.begin(), records.end(), [](const PairRecord& a, const PairRecord& b) {
            return a.first_stage_rank < b.first_stage_rank;
        });
        std::vector<Candidate> candidates;
        std::vector<double> scores;
        candidates.reserve(records.size());
        scores.reserve(records.size());
        for (const auto& record : records) {
            candidates.push_back(
                {record.doc_id, record.first_stage_score, record.first_stage_rank});
            scores.push_back(derive_score(method, record, query.text));
        }
        result.ranked.push_back(rank(query.id, candidates, scores));
        for (auto& record : records) {
            result.archive.push_back(std::move(record));
        }
    }

    std::sort(result.archive.begin(), result.archive.end(),
              [](const PairRecord& a, const PairRecord& b) {
                  return std::tie(a.query_id, a.doc_id) < std::tie(b.query_id, b.doc_id);
              });
    result.report =
        evaluate_ranked_lists(result.ranked, dataset.qrels, options.ndcg_k, options.gain_mode);
    return result;
}

}  // namespace

MethodDatasetResult rerank_dataset(const Dataset& dataset, const MethodSpec& method,
                                   Backend& backend, const RunnerOptions& options) {
    RenderOptions render_options{options.truncation, options.continuation_style,
                                 options.templates};
    if (!method.template_file.empty()) {
        render_options.templates.override_from_file(method.kind, method.template_file);
    }
    const bool wants_generation =
        method.strategy == DerivationStrategy::GeneratedLabel && method.generated_sampled;
    if (wants_generation) {
        if (auto* synthetic = find_synthetic(backend)) {
            synthetic->bind_scheme(method.scheme);
        }
    }

    struct Task {
        std::size_t query_idx;
        const Candidate* candidate;
    };
    std::vector<Task> tasks;
    for (std::size_t qi = 0; qi < dataset.queries.size(); ++qi) {
        const auto it = dataset.candidates.find(dataset.queries[qi].id);
        if (it == dataset.candidates.end()) {
            continue;
        }
        for (const auto& candidate : it->second) {
            tasks.push_back({qi, &candidate});
        }
    }

    std::vector<PairRecord> records(tasks.size());
    std::vector<std::string> errors(tasks.size());
    parallel_for(tasks.size(), options.concurrency, [&](std::size_t i) {
        const Query& query = dataset.queries[tasks[i].query_idx];
        const Candidate& candidate = *tasks[i].candidate;
        try {
            const Document& doc = dataset.corpus[dataset.doc_index.at(candidate.doc_id)];
            const RenderedPrompt prompt =
                render(method.kind, query, doc, method.scheme, method.prefix, render_options);
            const ScoreResponse response = backend.score({prompt.text, prompt.continuations});
            check_finite(response.log_likelihoods, query.id, candidate.doc_id);
            PairRecord record;
            record.query_id = query.id;
            record.doc_id = candidate.doc_id;
            record.first_stage_rank = candidate.first_stage_rank;
            record.first_stage_score = candidate.first_stage_score;
            record.log_likelihoods = response.log_likelihoods;
            if (wants_generation) {
                record.generated_text = backend.generate(prompt.text);
            }
            records[i] = std::move(record);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    std::vector<std::vector<PairRecord>> per_query_records(dataset.queries.size());
    std::vector<std::vector<std::string>> per_query_errors(dataset.queries.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!errors[i].empty()) {
            per_query_errors[tasks[i].query_idx].push_back(errors[i]);
        } else {
            per_query_records[tasks[i].query_idx].push_back(std::move(records[i]));
        }
    }
    return assemble_result(dataset, method, std::move(per_query_records),
                           std::move(per_query_errors), options);
}

MethodDatasetResult rederive_dataset(const Dataset& dataset, const MethodSpec& method,
                                     const std::vector<PairRecord>& archive,
                                     const RunnerOptions& options) {
    std::unordered_map<std::string, std::size_t> query_index;
    for (std::size_t qi = 0; qi < dataset.queries.size(); ++qi) {
        query_index[dataset.queries[qi].id] = qi;
    }
    std::vector<std::vector<PairRecord>> per_query_records(dataset.queries.size());
    for (const auto& record : archive) {
        const auto it = query_index.find(record.query_id);
        if (it == query_index.end()) {
            throw ValidationError("archive query \"" + record.query_id +
                                  "\" is not in the dataset");
        }
        per_query_records[it->second].push_back(record);
    }
    return assemble_result(dataset, method, std::move(per_query_records),
                           std::vector<std::vector<std::string>>(dataset.queries.size()),
                           options);
}

// ---------------------------------------------------------------------------
// Archives

void write_archive(const std::string& path, const std::vector<PairRecord>& archive) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write archive file " + path);
    }
    for (const auto& record : archive) {
        nlohmann::json line;
        line["query_id"] = record.query_id;
        line["doc_id"] = record.doc_id;
        line["first_stage_rank"] = record.first_stage_rank;
        line["first_stage_score"] = record.first_stage_score;
        line["lls"] = record.log_likelihoods;
        if (!record.generated_text.empty()) {
            line["text"] = record.generated_text;
        }
        out << line.dump() << "\n";
    }
}

std::vector<PairRecord> read_archive(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open archive file " + path);
    }
    std::vector<PairRecord> archive;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) {
            continue;
        }
        try {
            const auto parsed = nlohmann::json::parse(line);
            PairRecord record;
            record.query_id = parsed.at("query_id").get<std::string>();
            record.doc_id = parsed.at("doc_id").get<std::string>();
            record.first_stage_rank = parsed.at("first_stage_rank").get<int>();
            record.first_stage_score = parsed.at("first_stage_score").get<double>();
            record.log_likelihoods = parsed.at("lls").get<std::vector<double>>();
            record.generated_text = parsed.value("text", std::string{});
            archive.push_back(std::move(record));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_number) + ": " + e.what());
        }
    }
    return archive;
}

// ---------------------------------------------------------------------------
// Experiment driver

namespace {

struct BuiltBackend {
    std::shared_ptr<Backend> inner;
    std::shared_ptr<CachedBackend> cached;
};

BuiltBackend build_backend(const ExperimentConfig& config, const std::vector<Dataset>& datasets) {
    BuiltBackend built;
    switch (config.backend.kind) {
        case BackendSpec::Kind::table:
            built.inner = std::make_shared<TableMockBackend>(
                TableMockBackend::from_fixture(config.backend.fixture_path));
            break;
        case BackendSpec::Kind::synthetic: {
            SyntheticBackend::Config synthetic = config.backend.synthetic;
            if (!config.backend.synthetic_qrels_path.empty()) {
                synthetic.planted_qrels = read_qrels(config.backend.synthetic_qrels_path);
            } else if (config.backend.synthetic_use_dataset_qrels) {
                for (const auto& dataset : datasets) {
                    for (const auto& record : dataset.qrels.records()) {
                        synthetic.planted_qrels.add(record.query_id, record.doc_id, record.grade);
                    }
                }
            }
            auto backend = std::make_shared<SyntheticBackend>(std::move(synthetic));
            for (const auto& dataset : datasets) {
                backend->register_dataset(dataset.queries, dataset.corpus);
            }
            built.inner = backend;
            break;
        }
        case BackendSpec::Kind::http:
            built.inner = std::make_shared<HttpBackend>(HttpBackend::with_env(config.backend.http));
            break;
    }
    auto store = std::make_shared<CacheStore>(
        config.file_cache ? (fs::path(config.output_dir) / "cache.jsonl").string()
                          : std::string{});
    built.cached = std::make_shared<CachedBackend>(built.inner, store);
    return built;
}

RunnerOptions runner_options(const ExperimentConfig& config) {
    RunnerOptions options;
    options.truncation = config.truncation;
    options.continuation_style = config.continuation_style;
    options.templates = config.templates;
    options.concurrency = config.concurrency;
    options.ndcg_k = config.ndcg_k;
    options.gain_mode = config.gain_mode;
    return options;
}

nlohmann::json report_to_json(const MethodDatasetResult& result, const ExperimentConfig& config) {
    nlohmann::json out;
    out["dataset"] = result.dataset;
    out["method"] = result.method;
    out["k"] = config.ndcg_k;
    out["gain_mode"] = gain_mode_name(config.gain_mode);
    out["mean"] = result.report.mean;
    out["evaluated"] = result.report.evaluated;
    out["skipped_no_relevant"] = result.report.skipped_no_relevant;
    out["failed_queries"] = result.failures.size();
    nlohmann::json per_query = nlohmann::json::object();
    for (const auto& [query_id, value] : result.report.per_query) {
        per_query[query_id] = value;
    }
    out["per_query"] = std::move(per_query);
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& failure : result.failures) {
        failures.push_back({{"query_id", failure.query_id}, {"error", failure.error}});
    }
    out["failures"] = std::move(failures);
    return out;
}

nlohmann::json significance_to_json(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || a.size() != b.size()) {
        return nullptr;
    }
    try {
        const SignificanceResult test = paired_t_test(a, b);
        return {{"t", test.t_statistic},
                {"p", test.p_value},
                {"df", test.df},
                {"n", test.paired_n}};
    } catch (const ValidationError&) {
        return nullptr;  // zero-variance differences
    }
}

/// Per-query NDCG values of `method` and `baseline` paired over the
/// queries both evaluated, in deterministic (dataset, query) order.
std::pair<std::vector<double>, std::vector<double>> paired_values(
    const std::vector<MethodDatasetResult*>& method_results,
    const std::vector<MethodDatasetResult*>& baseline_results) {
    std::vector<double> a;
    std::vector<double> b;
    for (std::size_t d = 0; d < method_results.size(); ++d) {
        for (const auto& [query_id, value] : method_results[d]->report.per_query) {
            const auto it = baseline_results[d]->report.per_query.find(query_id);
            if (it != baseline_results[d]->report.per_query.end()) {
                a.push_back(value);
                b.push_back(it->second);
            }
        }
    }
    return {std::move(a), std::move(b)};
}

nlohmann::json build_comparison(const ExperimentConfig& config,
                                std::vector<std::vector<MethodDatasetResult>>& results,
                                const std::vector<Dataset>& datasets) {
    const std::string baseline_name =
        config.baseline_method.empty() ? config.methods.front().name : config.baseline_method;
    std::size_t baseline_idx = 0;
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
        if (config.methods[m].name == baseline_name) {
            baseline_idx = m;
        }
    }

    nlohmann::json comparison;
    comparison["k"] = config.ndcg_k;
    comparison["gain_mode"] = gain_mode_name(config.gain_mode);
    comparison["baseline"] = baseline_name;
    nlohmann::json dataset_names = nlohmann::json::array();
    for (const auto& dataset : config.datasets) {
        dataset_names.push_back(dataset.name);
    }
    comparison["datasets"] = dataset_names;

    // First-stage reference row.
    {
        nlohmann::json row;
        double total = 0.0;
        nlohmann::json per_dataset = nlohmann::json::object();
        for (const auto& dataset : datasets) {
            std::vector<RankedList> lists;
            for (const auto& query : dataset.queries) {
                const auto it = dataset.candidates.find(query.id);
                if (it == dataset.candidates.end()) {
                    continue;
                }
                RankedList list;
                list.query_id = query.id;
                for (const auto& candidate : it->second) {
                    list.entries.push_back({candidate.doc_id, candidate.first_stage_score,
                                            candidate.first_stage_rank});
                }
                lists.push_back(std::move(list));
            }
            const MetricReport report =
                evaluate_ranked_lists(lists, dataset.qrels, config.ndcg_k, config.gain_mode);
            per_dataset[dataset.name] = report.mean;
            total += report.mean;
        }
        row["per_dataset"] = std::move(per_dataset);
        row["average"] = total / static_cast<double>(datasets.size());
        comparison["first_stage"] = std::move(row);
    }

    std::vector<std::vector<MethodDatasetResult*>> by_method(config.methods.size());
    for (std::size_t d = 0; d < results.size(); ++d) {
        for (std::size_t m = 0; m < results[d].size(); ++m) {
            by_method[m].push_back(&results[d][m]);
        }
    }

    nlohmann::json methods = nlohmann::json::array();
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
        nlohmann::json row;
        row["name"] = config.methods[m].name;
        double total = 0.0;
        nlohmann::json per_dataset = nlohmann::json::object();
        for (std::size_t d = 0; d < datasets.size(); ++d) {
            per_dataset[datasets[d].name] = by_method[m][d]->report.mean;
            total += by_method[m][d]->report.mean;
        }
        const double average = total / static_cast<double>(datasets.size());
        row["per_dataset"] = std::move(per_dataset);
        row["average"] = average;

        if (m != baseline_idx) {
            const auto [a, b] = paired_values(by_method[m], by_method[baseline_idx]);
            row["pooled_vs_baseline"] = significance_to_json(a, b);
            nlohmann::json per_dataset_tests = nlohmann::json::object();
            for (std::size_t d = 0; d < datasets.size(); ++d) {
                const auto [da, db] = paired_values({by_method[m][d]}, {by_method[baseline_idx][d]});
                per_dataset_tests[datasets[d].name] = significance_to_json(da, db);
            }
            row["per_dataset_vs_baseline"] = std::move(per_dataset_tests);
            const auto& pooled = row["pooled_vs_baseline"];
            const double baseline_average = [&] {
                double sum = 0.0;
                for (std::size_t d = 0; d < datasets.size(); ++d) {
                    sum += by_method[baseline_idx][d]->report.mean;
                }
                return sum / static_cast<double>(datasets.size());
            }();
            row["significantly_better"] = !pooled.is_null() &&
                                          pooled["p"].get<double>() < 0.05 &&
                                          average > baseline_average;
        } else {
            row["pooled_vs_baseline"] = nullptr;
            row["per_dataset_vs_baseline"] = nlohmann::json::object();
            row["significantly_better"] = false;
        }
        methods.push_back(std::move(row));
    }
    comparison["methods"] = std::move(methods);
    return comparison;
}

void write_comparison_csv(const std::string& path, const nlohmann::json& comparison) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write comparison file " + path);
    }
    out << "method";
    for (const auto& name : comparison["datasets"]) {
        out << "," << name.get<std::string>();
    }
    out << ",average,p_vs_baseline,significant\n";

    out << "first_stage";
    for (const auto& name : comparison["datasets"]) {
        out << ","
            << format6(comparison["first_stage"]["per_dataset"][name.get<std::string>()]
                           .get<double>());
    }
    out << "," << format6(comparison["first_stage"]["average"].get<double>()) << ",,\n";

    for (const auto& row : comparison["methods"]) {
        out << row["name"].get<std::string>();
        for (const auto& name : comparison["datasets"]) {
            out << "," << format6(row["per_dataset"][name.get<std::string>()].get<double>());
        }
        out << "," << format6(row["average"].get<double>());
        if (row["pooled_vs_baseline"].is_null()) {
            out << ",";
        } else {
            out << "," << format6(row["pooled_vs_baseline"]["p"].get<double>());
        }
        out << "," << (row["significantly_better"].get<bool>() ? "*" : "") << "\n";
    }
}

void write_method_artifacts(const ExperimentConfig& config, const Dataset& dataset,
                            const MethodDatasetResult& result) {
    const fs::path dir = fs::path(config.output_dir) / sanitize_filename(dataset.name);
    fs::create_directories(dir);
    const std::string stem = sanitize_filename(result.method);

    std::vector<RunEntry> entries;
    for (const auto& list : result.ranked) {
        auto query_entries = run_from_ranked(list, stem);
        entries.insert(entries.end(), query_entries.begin(), query_entries.end());
    }
    write_run((dir / (stem + ".run.trec")).string(), entries);
    write_archive((dir / (stem + ".archive.jsonl")).string(), result.archive);

    std::ofstream report(dir / (stem + ".report.json"), std::ios::binary);
    report << report_to_json(result, config).dump(2) << "\n";
}

ExperimentResult run_or_rederive(const ExperimentConfig& config, const std::string& archive_dir) {
    const auto errors = validate_config(config);
    if (!errors.empty()) {
        std::string message = "invalid experiment config:";
        for (const auto& error : errors) {
            message += "\n  - " + error;
        }
        throw ValidationError(message);
    }

    fs::create_directories(config.output_dir);
    std::vector<Dataset> datasets;
    datasets.reserve(config.datasets.size());
    for (const auto& spec : config.datasets) {
        datasets.push_back(load_dataset(spec, config.first_stage));
    }

    const bool rederive = !archive_dir.empty();
    BuiltBackend backend;
    if (!rederive) {
        backend = build_backend(config, datasets);
    }
    const RunnerOptions options = runner_options(config);

    ExperimentResult result;
    result.results.resize(datasets.size());
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        for (const auto& method : config.methods) {
            MethodDatasetResult method_result;
            if (rederive) {
                const fs::path archive_path = fs::path(archive_dir) /
                                              sanitize_filename(datasets[d].name) /
                                              (sanitize_filename(method.name) + ".archive.jsonl");
                method_result = rederive_dataset(datasets[d], method,
                                                 read_archive(archive_path.string()), options);
            } else {
                method_result = rerank_dataset(datasets[d], method, *backend.cached, options);
            }
            if (!method_result.failures.empty()) {
                result.had_failures = true;
                std::fprintf(stderr, "warning: %zu queries failed for method %s on %s\n",
                             method_result.failures.size(), method.name.c_str(),
                             datasets[d].name.c_str());
            }
            write_method_artifacts(config, datasets[d], method_result);
            result.results[d].push_back(std::move(method_result));
        }
    }

    result.comparison = build_comparison(config, result.results, datasets);
    {
        std::ofstream out(fs::path(config.output_dir) / "comparison.json", std::ios::binary);
        out << result.comparison.dump(2) << "\n";
    }
    write_comparison_csv((fs::path(config.output_dir) / "comparison.csv").string(),
                         result.comparison);
    {
        std::ofstream out(fs::path(config.output_dir) / "resolved_config.json",
                          std::ios::binary);
        out << config.resolved.dump(2) << "\n";
    }
    return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
    return run_or_rederive(config, {});
}

ExperimentResult rederive_experiment(const ExperimentConfig& config,
                                     const std::string& archive_dir) {
    return run_or_rederive(config, archive_dir);
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

void write_sweep_csv(const std::string& path, const std::string& key_column,
                     const std::vector<std::string>& dataset_names,
                     const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write sweep file " + path);
    }
    out << key_column;
    for (const auto& name : dataset_names) {
        out << "," << name;
    }
    out << ",average\n";
    for (const auto& [key, means] : rows) {
        out << key;
        double total = 0.0;
        for (double mean : means) {
            out << "," << format6(mean);
            total += mean;
        }
        out << "," << format6(total / static_cast<double>(means.size())) << "\n";
    }
}

std::vector<double> dataset_means(const ExperimentResult& result) {
    std::vector<double> means;
    for (const auto& per_dataset : result.results) {
        means.push_back(per_dataset.front().report.mean);
    }
    return means;
}

std::vector<std::string> dataset_names(const ExperimentConfig& config) {
    std::vector<std::string> names;
    for (const auto& dataset : config.datasets) {
        names.push_back(dataset.name);
    }
    return names;
}

}  // namespace

void sweep_scale(const ExperimentConfig& config, int lo, const std::vector<int>& k_values,
                 const std::string& csv_path) {
    if (k_values.empty()) {
        throw ValidationError("sweep-scale needs at least one k value");
    }
    DerivationStrategy strategy = DerivationStrategy::ExpectedRelevance;
    if (!config.methods.empty() &&
        (config.methods.front().strategy == DerivationStrategy::PeakRelevance ||
         config.methods.front().strategy == DerivationStrategy::GeneratedLabel)) {
        strategy = config.methods.front().strategy;
    }

    std::vector<std::pair<std::string, std::vector<double>>> rows;
    for (int k : k_values) {
        MethodSpec method;
        method.name = "RG-S(" + std::to_string(lo) + "," + std::to_string(k) + ")";
        method.kind = PromptTemplateKind::RG_SCALE;
        method.scheme = rating_scheme(lo, k);
        method.strategy = strategy;

        ExperimentConfig sub = config;
        sub.methods = {method};
        sub.baseline_method.clear();
        sub.output_dir =
            (fs::path(config.output_dir) / "sweep_scale" / ("k" + std::to_string(k))).string();
        sub.resolved["output_dir"] = sub.output_dir;

        const ExperimentResult result = run_experiment(sub);
        rows.emplace_back(std::to_string(k), dataset_means(result));
    }
    write_sweep_csv(csv_path, "k", dataset_names(config), rows);
}

void sweep_values(const ExperimentConfig& config, const std::vector<std::vector<double>>& grids,
                  const std::string& method_name, const std::string& csv_path) {
    if (grids.empty()) {
        throw ValidationError("sweep-values needs at least one value grid");
    }
    if (config.methods.empty()) {
        throw ValidationError("sweep-values needs a configured method");
    }
    const MethodSpec* base = &config.methods.front();
    if (!method_name.empty()) {
        base = nullptr;
        for (const auto& method : config.methods) {
            if (method.name == method_name) {
                base = &method;
            }
        }
        if (base == nullptr) {
            throw ValidationError("sweep-values: method \"" + method_name +
                                  "\" is not in the roster");
        }
    }
    if (base->strategy == DerivationStrategy::QueryGeneration ||
        base->strategy == DerivationStrategy::BinaryYesNo) {
        throw ValidationError("sweep-values requires a scheme-backed method");
    }

    std::vector<std::pair<std::string, std::vector<double>>> rows;
    for (std::size_t g = 0; g < grids.size(); ++g) {
        const auto& grid = grids[g];
        if (grid.size() != base->scheme.size()) {
            throw ValidationError("value grid " + std::to_string(g) + " has " +
                                  std::to_string(grid.size()) + " entries, scheme has " +
                                  std::to_string(base->scheme.size()) + " labels");
        }
        MethodSpec method = *base;
        method.scheme = with_values(method.scheme, grid);

        ExperimentConfig sub = config;
        sub.methods = {method};
        sub.baseline_method.clear();
        sub.output_dir =
            (fs::path(config.output_dir) / "sweep_values" / ("g" + std::to_string(g))).string();
        sub.resolved["output_dir"] = sub.output_dir;

        const ExperimentResult result = run_experiment(sub);
        std::string key;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (i > 0) {
                key += ":";
            }
            key += format6(grid[i]);
        }
        rows.emplace_back(key, dataset_means(result));
    }
    write_sweep_csv(csv_path, "y_values", dataset_names(config), rows);
}

PairScoreMap scores_from_run(const std::vector<RunEntry>& entries) {
    PairScoreMap scores;
    for (const auto& entry : entries) {
        scores[{entry.query_id, entry.doc_id}] = entry.score;
    }
    return scores;
}

}  // namespace gradedrank
