#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradedrank/backend.hpp"
#include "gradedrank/eval.hpp"
#include "gradedrank/experiment.hpp"
#include "gradedrank/retrieval.hpp"
#include "gradedrank/scoring.hpp"

namespace {

using namespace gradedrank;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) {
            values.push_back(std::stoi(item));
        }
    }
    return values;
}

std::vector<std::vector<double>> parse_grids(const std::string& text) {
    std::vector<std::vector<double>> grids;
    std::stringstream outer(text);
    std::string grid_text;
    while (std::getline(outer, grid_text, ';')) {
        std::vector<double> grid;
        std::stringstream inner(grid_text);
        std::string item;
        while (std::getline(inner, item, ',')) {
            if (!item.empty()) {
                grid.push_back(std::stod(item));
            }
        }
        if (!grid.empty()) {
            grids.push_back(std::move(grid));
        }
    }
    return grids;
}

std::vector<RankedList> ranked_lists_from_run(const std::vector<RunEntry>& entries) {
    std::vector<RankedList> lists;
    std::map<std::string, std::size_t> index;
    for (const auto& entry : entries) {
        auto [it, inserted] = index.emplace(entry.query_id, lists.size());
        if (inserted) {
            lists.push_back({entry.query_id, {}});
        }
        lists[it->second].entries.push_back({entry.doc_id, entry.score, entry.rank});
    }
    return lists;
}

int cmd_index(const std::string& corpus_path, const std::string& out_path, bool stopwords) {
    const auto corpus = read_corpus_jsonl(corpus_path);
    const auto index = build_index(corpus, stopwords);
    save_index(out_path, index);
    std::printf("indexed %zu documents, %zu terms, avg length %.2f -> %s\n", index.doc_count,
                index.postings.size(), index.avg_doc_length, out_path.c_str());
    return kExitOk;
}

int cmd_retrieve(const std::string& corpus_path, const std::string& queries_path,
                 const std::string& index_path, std::size_t k, double k1, double b,
                 bool stopwords, const std::string& out_path, std::string tag) {
    InvertedIndex index;
    if (!index_path.empty()) {
        index = load_index(index_path);
    } else {
        index = build_index(read_corpus_jsonl(corpus_path), stopwords);
    }
    if (tag.empty()) {
        char buffer[64];
        std::snprintf(buffer, sizeof(buffer), "bm25_k1-%g_b-%g", k1, b);
        tag = buffer;
    }
    const auto queries = read_queries_tsv(queries_path);
    std::vector<RunEntry> entries;
    for (const auto& query : queries) {
        const auto candidates = bm25_search(index, query.text, k, {k1, b}, stopwords);
        for (const auto& candidate : candidates) {
            entries.push_back({query.id, candidate.doc_id, candidate.first_stage_rank,
                               candidate.first_stage_score, tag});
        }
    }
    write_run(out_path, entries);
    std::printf("retrieved top-%zu for %zu queries -> %s\n", k, queries.size(),
                out_path.c_str());
    return kExitOk;
}

int cmd_rerank(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::string& archive_dir) {
    const auto config = load_experiment_config(config_path, overrides);
    const ExperimentResult result = archive_dir.empty()
                                        ? run_experiment(config)
                                        : rederive_experiment(config, archive_dir);
    for (const auto& row : result.comparison["methods"]) {
        std::printf("%-16s average NDCG@%d = %.4f%s\n", row["name"].get<std::string>().c_str(),
                    config.ndcg_k, row["average"].get<double>(),
                    row["significantly_better"].get<bool>() ? " *" : "");
    }
    std::printf("artifacts in %s\n", config.output_dir.c_str());
    return result.had_failures ? kExitRuntime : kExitOk;
}

int cmd_eval(const std::string& run_path, const std::string& qrels_path, int k,
             const std::string& gain, const std::string& out_path) {
    const auto qrels = read_qrels(qrels_path);
    const auto lists = ranked_lists_from_run(read_run(run_path));
    const auto report = evaluate_ranked_lists(lists, qrels, k, gain_mode_from_name(gain));
    std::printf("NDCG@%d = %.4f over %zu queries (%zu skipped: no relevant docs)\n", k,
                report.mean, report.evaluated, report.skipped_no_relevant);
    if (!out_path.empty()) {
        nlohmann::json out;
        out["run"] = run_path;
        out["k"] = k;
        out["gain_mode"] = gain;
        out["mean"] = report.mean;
        out["evaluated"] = report.evaluated;
        out["skipped_no_relevant"] = report.skipped_no_relevant;
        nlohmann::json per_query = nlohmann::json::object();
        for (const auto& [query_id, value] : report.per_query) {
            per_query[query_id] = value;
        }
        out["per_query"] = std::move(per_query);
        std::ofstream file(out_path, std::ios::binary);
        file << out.dump(2) << "\n";
    }
    return kExitOk;
}

int cmd_compare(const std::string& qrels_path, const std::vector<std::string>& run_paths,
                std::vector<std::string> names, const std::string& baseline, int k,
                const std::string& gain, const std::string& out_path) {
    if (run_paths.size() < 2) {
        throw ValidationError("compare needs at least two run files");
    }
    while (names.size() < run_paths.size()) {
        names.push_back(std::filesystem::path(run_paths[names.size()]).stem().string());
    }
    const auto qrels = read_qrels(qrels_path);
    const GainMode mode = gain_mode_from_name(gain);

    std::vector<MetricReport> reports;
    for (const auto& path : run_paths) {
        reports.push_back(evaluate_ranked_lists(ranked_lists_from_run(read_run(path)), qrels, k,
                                                mode));
    }
    std::size_t baseline_idx = 0;
    if (!baseline.empty()) {
        const auto it = std::find(names.begin(), names.end(), baseline);
        if (it == names.end()) {
            throw ValidationError("baseline \"" + baseline + "\" is not among the run names");
        }
        baseline_idx = static_cast<std::size_t>(it - names.begin());
    }

    std::ofstream out;
    if (!out_path.empty()) {
        out.open(out_path, std::ios::binary);
        out << "method,ndcg,p_vs_" << names[baseline_idx] << ",significant\n";
    }
    for (std::size_t i = 0; i < reports.size(); ++i) {
        std::string p_text;
        bool significant = false;
        if (i != baseline_idx) {
            std::vector<double> a;
            std::vector<double> b;
            for (const auto& [query_id, value] : reports[i].per_query) {
                const auto it = reports[baseline_idx].per_query.find(query_id);
                if (it != reports[baseline_idx].per_query.end()) {
                    a.push_back(value);
                    b.push_back(it->second);
                }
            }
            try {
                const auto test = paired_t_test(a, b);
                char buffer[32];
                std::snprintf(buffer, sizeof(buffer), "%.6f", test.p_value);
                p_text = buffer;
                significant = test.p_value < 0.05 && reports[i].mean > reports[baseline_idx].mean;
            } catch (const ValidationError&) {
                p_text = "n/a";
            }
        }
        std::printf("%-24s NDCG@%d = %.4f  %s%s\n", names[i].c_str(), k, reports[i].mean,
                    p_text.empty() ? "(baseline)" : ("p=" + p_text).c_str(),
                    significant ? " *" : "");
        if (out.is_open()) {
            out << names[i] << "," << std::fixed << reports[i].mean << "," << p_text << ","
                << (significant ? "*" : "") << "\n";
        }
    }
    return kExitOk;
}

int cmd_export_scatter(const std::string& run_a, const std::string& run_b,
                       const std::string& out_path) {
    export_scatter(scores_from_run(read_run(run_a)), scores_from_run(read_run(run_b)), out_path);
    std::printf("scatter -> %s\n", out_path.c_str());
    return kExitOk;
}

int cmd_export_marginals(const std::string& archive_path, const std::string& qrels_path,
                         const std::string& out_path) {
    const auto archive = read_archive(archive_path);
    std::vector<MarginalRecord> records;
    records.reserve(archive.size());
    for (const auto& record : archive) {
        records.push_back({record.query_id, record.doc_id, softmax_probs(record.log_likelihoods)});
    }
    export_marginals(records, read_qrels(qrels_path), out_path);
    std::printf("marginals for %zu pairs -> %s\n", records.size(), out_path.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "graded-rank: rerank retrieved documents with pointwise LLM prompts over "
        "graded relevance labels.\n"
        "HTTP backends read GRADED_RANK_API_URL and GRADED_RANK_API_TOKEN."};
    app.require_subcommand(1);

    // index
    auto* index_cmd = app.add_subcommand("index", "Build a BM25 inverted index");
    std::string corpus_path, out_path;
    bool stopwords = false;
    index_cmd->add_option("--corpus", corpus_path, "Corpus JSONL (_id, title, text)")->required();
    index_cmd->add_option("--out", out_path, "Index output path")->required();
    index_cmd->add_flag("--stopwords", stopwords, "Drop basic English stopwords");

    // retrieve
    auto* retrieve_cmd = app.add_subcommand("retrieve", "First-stage BM25 retrieval to a run file");
    std::string queries_path, index_path, tag;
    std::size_t top_k = 100;
    double k1 = 0.9;
    double b = 0.4;
    retrieve_cmd->add_option("--corpus", corpus_path, "Corpus JSONL");
    retrieve_cmd->add_option("--queries", queries_path, "Queries TSV (id<TAB>text)")->required();
    retrieve_cmd->add_option("--index", index_path, "Prebuilt index (skips --corpus)");
    retrieve_cmd->add_option("--k", top_k, "Candidates per query (default 100)");
    retrieve_cmd->add_option("--k1", k1, "BM25 k1 (default 0.9)");
    retrieve_cmd->add_option("--b", b, "BM25 b (default 0.4)");
    retrieve_cmd->add_flag("--stopwords", stopwords, "Drop basic English stopwords");
    retrieve_cmd->add_option("--out", out_path, "TREC run output path")->required();
    retrieve_cmd->add_option("--tag", tag, "Run tag (default embeds BM25 params)");

    // rerank
    auto* rerank_cmd = app.add_subcommand("rerank", "Run a reranking experiment from a config");
    std::string config_path, archive_dir;
    std::vector<std::string> overrides;
    rerank_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    rerank_cmd->add_option("--set", overrides, "Override config leaves, e.g. first_stage.k=10");
    rerank_cmd->add_option("--from-archive", archive_dir,
                           "Re-derive scores from a previous run's archives (no backend calls)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "NDCG@k for a run file against qrels");
    std::string run_path, qrels_path, gain = "linear", report_path;
    int ndcg_k = 10;
    eval_cmd->add_option("--run", run_path, "TREC run file")->required();
    eval_cmd->add_option("--qrels", qrels_path, "Qrels TSV")->required();
    eval_cmd->add_option("--k", ndcg_k, "Cutoff (default 10)");
    eval_cmd->add_option("--gain", gain, "linear|exponential");
    eval_cmd->add_option("--out", report_path, "Report JSON output");

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "Compare run files with paired t-tests");
    std::vector<std::string> run_paths, run_names;
    std::string baseline;
    compare_cmd->add_option("--qrels", qrels_path, "Qrels TSV")->required();
    compare_cmd->add_option("--runs", run_paths, "Run files")->required()->expected(-2);
    compare_cmd->add_option("--names", run_names, "Display names (default: file stems)");
    compare_cmd->add_option("--baseline", baseline, "Baseline name (default: first run)");
    compare_cmd->add_option("--k", ndcg_k, "Cutoff (default 10)");
    compare_cmd->add_option("--gain", gain, "linear|exponential");
    compare_cmd->add_option("--out", out_path, "CSV output");

    // sweep-scale
    auto* sweep_scale_cmd =
        app.add_subcommand("sweep-scale", "NDCG vs rating-scale size RG-S(lo,k)");
    std::string ks_text;
    int scale_lo = 0;
    sweep_scale_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    sweep_scale_cmd->add_option("--set", overrides, "Config overrides");
    sweep_scale_cmd->add_option("--lo", scale_lo, "Scale start (default 0)");
    sweep_scale_cmd->add_option("--ks", ks_text, "Comma-separated k values")->required();
    sweep_scale_cmd->add_option("--out", out_path, "CSV output")->required();

    // sweep-values
    auto* sweep_values_cmd =
        app.add_subcommand("sweep-values", "NDCG under different relevance value grids");
    std::string grids_text, sweep_method;
    sweep_values_cmd->add_option("--config", config_path, "Experiment config JSON")->required();
    sweep_values_cmd->add_option("--set", overrides, "Config overrides");
    sweep_values_cmd->add_option("--grids", grids_text,
                                 "Semicolon-separated grids, e.g. \"0,1,2;0,2,2\"")
        ->required();
    sweep_values_cmd->add_option("--method", sweep_method, "Roster method (default: first)");
    sweep_values_cmd->add_option("--out", out_path, "CSV output")->required();

    // export-scatter
    auto* scatter_cmd =
        app.add_subcommand("export-scatter", "Pairwise score scatter CSV from two runs");
    std::string run_a, run_b;
    scatter_cmd->add_option("--run-a", run_a, "First run file")->required();
    scatter_cmd->add_option("--run-b", run_b, "Second run file")->required();
    scatter_cmd->add_option("--out", out_path, "CSV output")->required();

    // export-marginals
    auto* marginals_cmd = app.add_subcommand(
        "export-marginals", "Per-grade marginal label probabilities from a score archive");
    std::string archive_path;
    marginals_cmd->add_option("--archive", archive_path, "Method archive JSONL")->required();
    marginals_cmd->add_option("--qrels", qrels_path, "Qrels TSV")->required();
    marginals_cmd->add_option("--out", out_path, "CSV output")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (index_cmd->parsed()) {
            return cmd_index(corpus_path, out_path, stopwords);
        }
        if (retrieve_cmd->parsed()) {
            if (index_path.empty() && corpus_path.empty()) {
                throw ValidationError("retrieve needs --corpus or --index");
            }
            return cmd_retrieve(corpus_path, queries_path, index_path, top_k, k1, b, stopwords,
                                out_path, tag);
        }
        if (rerank_cmd->parsed()) {
            return cmd_rerank(config_path, overrides, archive_dir);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(run_path, qrels_path, ndcg_k, gain, report_path);
        }
        if (compare_cmd->parsed()) {
            return cmd_compare(qrels_path, run_paths, run_names, baseline, ndcg_k, gain,
                               out_path);
        }
        if (sweep_scale_cmd->parsed()) {
            sweep_scale(load_experiment_config(config_path, overrides), scale_lo,
                        parse_int_list(ks_text), out_path);
            std::printf("sweep -> %s\n", out_path.c_str());
            return kExitOk;
        }
        if (sweep_values_cmd->parsed()) {
            sweep_values(load_experiment_config(config_path, overrides), parse_grids(grids_text),
                         sweep_method, out_path);
            std::printf("sweep -> %s\n", out_path.c_str());
            return kExitOk;
        }
        if (scatter_cmd->parsed()) {
            return cmd_export_scatter(run_a, run_b, out_path);
        }
        if (marginals_cmd->parsed()) {
            return cmd_export_marginals(archive_path, qrels_path, out_path);
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
