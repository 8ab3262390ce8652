#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "gradedrank/backend.hpp"
#include "gradedrank/core.hpp"
#include "gradedrank/eval.hpp"
#include "gradedrank/prompt.hpp"
#include "gradedrank/retrieval.hpp"
#include "gradedrank/scoring.hpp"

namespace gradedrank {

struct DatasetSpec {
    std::string name;
    std::string corpus_path;
    std::string queries_path;
    std::string qrels_path;
    std::string first_stage_run_path;  // used when first stage mode is run_file
};

struct FirstStageSpec {
    enum class Mode { bm25, run_file };
    Mode mode = Mode::bm25;
    std::size_t k = 100;
    Bm25Params bm25;
    bool stopwords = false;
};

struct MethodSpec {
    std::string name;
    PromptTemplateKind kind = PromptTemplateKind::RG_TEXTUAL;
    LabelScheme scheme;  // ignored for QG; forced to yes/no for RG_YN
    DerivationStrategy strategy = DerivationStrategy::ExpectedRelevance;
    PromptPrefix prefix;
    std::string template_file;    // optional body override
    bool generated_sampled = false;  // Generated: parse sampled text, not the argmax label
    bool qg_length_normalize = true;  // QG: mean per-token instead of sum
};

struct BackendSpec {
    enum class Kind { table, synthetic, http };
    Kind kind = Kind::synthetic;
    std::string fixture_path;                     // table
    SyntheticBackend::Config synthetic;           // synthetic
    std::string synthetic_qrels_path;             // explicit planted qrels
    bool synthetic_use_dataset_qrels = false;     // plant the datasets' own qrels
    HttpBackend::Config http;                     // http
};

struct ExperimentConfig {
    std::vector<DatasetSpec> datasets;
    FirstStageSpec first_stage;
    std::vector<MethodSpec> methods;
    BackendSpec backend;
    std::string output_dir;
    std::uint64_t seed = 0;
    std::string baseline_method;  // significance reference; default = first method
    TruncationPolicy truncation;
    ContinuationStyle continuation_style;
    TemplateSet templates = TemplateSet::defaults();
    int concurrency = 8;
    int ndcg_k = 10;
    GainMode gain_mode = GainMode::linear;
    bool file_cache = true;

    nlohmann::json resolved;  // the fully resolved form archived with each run
};

/// Parses a config file; relative paths resolve against the file's
/// directory. `overrides` are dotted-path assignments like
/// "first_stage.k=10" applied before parsing.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});
ExperimentConfig parse_experiment_config(nlohmann::json raw, const std::string& base_dir);

/// Every problem found, not just the first.
std::vector<std::string> validate_config(const ExperimentConfig& config);

struct Dataset {
    std::string name;
    std::vector<Query> queries;
    std::vector<Document> corpus;
    std::unordered_map<std::string, std::size_t> doc_index;
    Qrels qrels;
    // First-stage candidates per query id, ascending first-stage rank.
    std::unordered_map<std::string, std::vector<Candidate>> candidates;
};

Dataset load_dataset(const DatasetSpec& spec, const FirstStageSpec& first_stage);

/// Raw per-pair backend output, the unit of the score archive. Scores for
/// any derivation strategy can be recomputed from these without touching
/// the backend again.
struct PairRecord {
    std::string query_id;
    std::string doc_id;
    int first_stage_rank = 0;
    double first_stage_score = 0.0;
    std::vector<double> log_likelihoods;
    std::string generated_text;  // only for sampled generated-label runs
};

struct QueryFailure {
    std::string query_id;
    std::string error;
};

struct MethodDatasetResult {
    std::string method;
    std::string dataset;
    std::vector<RankedList> ranked;    // query order of the dataset
    std::vector<PairRecord> archive;   // sorted by (query_id, doc_id)
    MetricReport report;
    std::vector<QueryFailure> failures;
};

struct RunnerOptions {
    TruncationPolicy truncation;
    ContinuationStyle continuation_style;
    TemplateSet templates = TemplateSet::defaults();
    int concurrency = 8;
    int ndcg_k = 10;
    GainMode gain_mode = GainMode::linear;
};

/// Scores every (query, candidate) pair of one dataset with one method and
/// ranks the results. Failing queries are recorded and skipped, not fatal.
MethodDatasetResult rerank_dataset(const Dataset& dataset, const MethodSpec& method,
                                   Backend& backend, const RunnerOptions& options);

/// Recomputes a method's ranked lists from archived records, calling no
/// backend. Query texts are needed only for QG length normalization.
MethodDatasetResult rederive_dataset(const Dataset& dataset, const MethodSpec& method,
                                     const std::vector<PairRecord>& archive,
                                     const RunnerOptions& options);

struct ExperimentResult {
    // results[d][m] pairs config.datasets[d] with config.methods[m].
    std::vector<std::vector<MethodDatasetResult>> results;
    nlohmann::json comparison;
    bool had_failures = false;
};

/// Full pipeline: first stage, reranking per method, NDCG@k reports,
/// significance table, artifacts under config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Same artifacts, but derives every score from the archives of a previous
/// run at `archive_dir` without constructing a backend.
ExperimentResult rederive_experiment(const ExperimentConfig& config,
                                     const std::string& archive_dir);

/// One RG-S(lo, k) method per k value; CSV of per-dataset and average
/// NDCG@k per scale size. Derivation follows the first configured method.
void sweep_scale(const ExperimentConfig& config, int lo, const std::vector<int>& k_values,
                 const std::string& csv_path);

/// Reruns one method (default: the first) under each relevance-value
/// grid; CSV of grids against NDCG@k.
void sweep_values(const ExperimentConfig& config, const std::vector<std::vector<double>>& grids,
                  const std::string& method_name, const std::string& csv_path);

std::string sanitize_filename(const std::string& name);

std::vector<PairRecord> read_archive(const std::string& path);
void write_archive(const std::string& path, const std::vector<PairRecord>& archive);

/// Builds a PairScoreMap for scatter export from run files.
PairScoreMap scores_from_run(const std::vector<RunEntry>& entries);

}  // namespace gradedrank
