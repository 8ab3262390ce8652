#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradedrank/core.hpp"

namespace gradedrank {

struct Posting {
    std::uint32_t doc_ordinal = 0;
    std::uint32_t term_frequency = 0;
};

struct InvertedIndex {
    std::unordered_map<std::string, std::vector<Posting>> postings;
    std::vector<std::uint32_t> doc_lengths;
    std::vector<std::string> doc_ids;
    double avg_doc_length = 0.0;
    std::size_t doc_count = 0;
};

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;
};

/// Lowercases and splits on any non-alphanumeric byte. No stemming; an
/// optional basic English stopword list can be applied on top.
std::vector<std::string> tokenize(const std::string& text);
std::vector<std::string> drop_stopwords(std::vector<std::string> terms);

/// Builds the index over document_text(). Deterministic for a given corpus
/// order; rejects empty corpora and duplicate ids.
InvertedIndex build_index(const std::vector<Document>& corpus, bool use_stopwords = false);

/// Okapi BM25 with the Lucene IDF variant ln(1 + (N - df + 0.5)/(df + 0.5)).
/// Returns at most k candidates with positive term overlap, descending
/// score, ties by ascending doc ordinal.
std::vector<Candidate> bm25_search(const InvertedIndex& index, const std::string& query_text,
                                   std::size_t k, const Bm25Params& params = {},
                                   bool use_stopwords = false);

struct RunEntry {
    std::string query_id;
    std::string doc_id;
    int rank = 0;
    double score = 0.0;
    std::string tag;
};

/// TREC 6-column run format: "qid Q0 docid rank score tag" with the score
/// printed to 6 decimal places. Parsing validates per-query rank
/// consecutiveness and reports offending line numbers.
std::vector<RunEntry> read_run(const std::string& path);
void write_run(const std::string& path, const std::vector<RunEntry>& entries);

std::vector<RunEntry> run_from_ranked(const RankedList& list, const std::string& tag);
std::unordered_map<std::string, std::vector<Candidate>> candidates_from_run(
    const std::vector<RunEntry>& entries);

/// BEIR-style TSV qrels: query-id<TAB>corpus-id<TAB>score, an optional
/// header row is tolerated on read and always written.
Qrels read_qrels(const std::string& path);
void write_qrels(const std::string& path, const Qrels& qrels);

/// Corpus as JSON lines with _id, title, text fields.
std::vector<Document> read_corpus_jsonl(const std::string& path);

/// Queries as id<TAB>text lines.
std::vector<Query> read_queries_tsv(const std::string& path);

void save_index(const std::string& path, const InvertedIndex& index);
InvertedIndex load_index(const std::string& path);

}  // namespace gradedrank
