#include "gradedrank/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace gradedrank {

namespace {

const std::unordered_set<std::string>& stopword_set() {
    static const std::unordered_set<std::string> words = {
        "a",  "an", "and", "are", "as",   "at", "be",   "but",  "by",   "for", "if",
        "in", "is", "it",  "no",  "not",  "of", "on",   "or",   "such", "that", "the",
        "their", "then", "there", "these", "they", "this", "to", "was", "will", "with"};
    return words;
}

std::string format_score(double score) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.6f", score);
    return buffer;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line_number,
                             const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line_number) + ": " + what);
}

std::vector<std::string> split_whitespace(const std::string& line) {
    std::vector<std::string> fields;
    std::istringstream stream(line);
    std::string field;
    while (stream >> field) {
        fields.push_back(field);
    }
    return fields;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return fields;
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    return line;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> terms;
    std::string current;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            terms.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        terms.push_back(std::move(current));
    }
    return terms;
}

std::vector<std::string> drop_stopwords(std::vector<std::string> terms) {
    const auto& stop = stopword_set();
    terms.erase(std::remove_if(terms.begin(), terms.end(),
                               [&](const std::string& t) { return stop.count(t) > 0; }),
                terms.end());
    return terms;
}

InvertedIndex build_index(const std::vector<Document>& corpus, bool use_stopwords) {
    if (corpus.empty()) {
        throw ValidationError("cannot build an index over an empty corpus");
    }
    InvertedIndex index;
    index.doc_count = corpus.size();
    index.doc_ids.reserve(corpus.size());
    index.doc_lengths.reserve(corpus.size());

    std::unordered_set<std::string> seen_ids;
    std::uint64_t total_length = 0;
    for (std::uint32_t ordinal = 0; ordinal < corpus.size(); ++ordinal) {
        const Document& doc = corpus[ordinal];
        if (!seen_ids.insert(doc.id).second) {
            throw ValidationError("duplicate document id \"" + doc.id + "\" in corpus");
        }
        auto terms = tokenize(document_text(doc));
        if (use_stopwords) {
            terms = drop_stopwords(std::move(terms));
        }
        std::unordered_map<std::string, std::uint32_t> frequencies;
        for (const auto& term : terms) {
            ++frequencies[term];
        }
        for (const auto& [term, tf] : frequencies) {
            index.postings[term].push_back({ordinal, tf});
        }
        index.doc_ids.push_back(doc.id);
        index.doc_lengths.push_back(static_cast<std::uint32_t>(terms.size()));
        total_length += terms.size();
    }
    for (auto& [term, list] : index.postings) {
        std::sort(list.begin(), list.end(),
                  [](const Posting& a, const Posting& b) { return a.doc_ordinal < b.doc_ordinal; });
    }
    index.avg_doc_length = static_cast<double>(total_length) / static_cast<double>(corpus.size());
    return index;
}

std::vector<Candidate> bm25_search(const InvertedIndex& index, const std::string& query_text,
                                   std::size_t k, const Bm25Params& params, bool use_stopwords) {
    if (k < 1) {
        throw ValidationError("bm25_search requires k >= 1");
    }
    auto terms = tokenize(query_text);
    if (use_stopwords) {
        terms = drop_stopwords(std::move(terms));
    }

    const double n_docs = static_cast<double>(index.doc_count);
    std::unordered_map<std::uint32_t, double> accumulator;
    for (const auto& term : terms) {
        const auto it = index.postings.find(term);
        if (it == index.postings.end()) {
            continue;
        }
        const double df = static_cast<double>(it->second.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const Posting& posting : it->second) {
            const double tf = static_cast<double>(posting.term_frequency);
            const double dl = static_cast<double>(index.doc_lengths[posting.doc_ordinal]);
            const double norm = 1.0 - params.b + params.b * dl / index.avg_doc_length;
            const double tf_term = tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
            accumulator[posting.doc_ordinal] += idf * tf_term;
        }
    }

    std::vector<std::pair<std::uint32_t, double>> scored(accumulator.begin(), accumulator.end());
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    if (scored.size() > k) {
        scored.resize(k);
    }

    std::vector<Candidate> results;
    results.reserve(scored.size());
    for (std::size_t i = 0; i < scored.size(); ++i) {
        results.push_back(
            {index.doc_ids[scored[i].first], scored[i].second, static_cast<int>(i + 1)});
    }
    return results;
}

std::vector<RunEntry> read_run(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open run file " + path);
    }
    std::vector<RunEntry> entries;
    std::unordered_map<std::string, int> last_rank;
    std::unordered_map<std::string, double> last_score;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        line = strip_cr(line);
        if (line.empty()) {
            continue;
        }
        const auto fields = split_whitespace(line);
        if (fields.size() != 6) {
            parse_fail(path, line_number,
                       "expected 6 columns (qid Q0 docid rank score tag), got " +
                           std::to_string(fields.size()));
        }
        RunEntry entry;
        entry.query_id = fields[0];
        entry.doc_id = fields[2];
        try {
            entry.rank = std::stoi(fields[3]);
            entry.score = std::stod(fields[4]);
        } catch (const std::exception&) {
            parse_fail(path, line_number, "non-numeric rank or score");
        }
        entry.tag = fields[5];

        auto rank_it = last_rank.find(entry.query_id);
        const int expected = rank_it == last_rank.end() ? 1 : rank_it->second + 1;
        if (entry.rank != expected) {
            parse_fail(path, line_number,
                       "rank gap for query " + entry.query_id + ": expected " +
                           std::to_string(expected) + ", got " + std::to_string(entry.rank));
        }
        auto score_it = last_score.find(entry.query_id);
        if (score_it != last_score.end() && entry.score > score_it->second) {
            parse_fail(path, line_number, "scores must be non-increasing within a query");
        }
        last_rank[entry.query_id] = entry.rank;
        last_score[entry.query_id] = entry.score;
        entries.push_back(std::move(entry));
    }
    return entries;
}

void write_run(const std::string& path, const std::vector<RunEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write run file " + path);
    }
    for (const auto& entry : entries) {
        out << entry.query_id << " Q0 " << entry.doc_id << " " << entry.rank << " "
            << format_score(entry.score) << " " << entry.tag << "\n";
    }
}

std::vector<RunEntry> run_from_ranked(const RankedList& list, const std::string& tag) {
    std::vector<RunEntry> entries;
    entries.reserve(list.entries.size());
    for (const auto& entry : list.entries) {
        entries.push_back({list.query_id, entry.doc_id, entry.rank, entry.score, tag});
    }
    return entries;
}

std::unordered_map<std::string, std::vector<Candidate>> candidates_from_run(
    const std::vector<RunEntry>& entries) {
    std::unordered_map<std::string, std::vector<Candidate>> by_query;
    for (const auto& entry : entries) {
        by_query[entry.query_id].push_back({entry.doc_id, entry.score, entry.rank});
    }
    return by_query;
}

Qrels read_qrels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open qrels file " + path);
    }
    Qrels qrels;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        line = strip_cr(line);
        if (line.empty()) {
            continue;
        }
        const auto fields = split_tabs(line);
        if (fields.size() != 3) {
            parse_fail(path, line_number, "expected 3 tab-separated columns, got " +
                                              std::to_string(fields.size()));
        }
        if (line_number == 1 && fields[0] == "query-id") {
            continue;  // BEIR header row
        }
        int grade = 0;
        try {
            grade = std::stoi(fields[2]);
        } catch (const std::exception&) {
            parse_fail(path, line_number, "non-integer relevance grade \"" + fields[2] + "\"");
        }
        if (grade < 0) {
            parse_fail(path, line_number, "negative relevance grade");
        }
        qrels.add(fields[0], fields[1], grade);
    }
    return qrels;
}

void write_qrels(const std::string& path, const Qrels& qrels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write qrels file " + path);
    }
    out << "query-id\tcorpus-id\tscore\n";
    for (const auto& record : qrels.records()) {
        out << record.query_id << "\t" << record.doc_id << "\t" << record.grade << "\n";
    }
}

std::vector<Document> read_corpus_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open corpus file " + path);
    }
    std::vector<Document> corpus;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        line = strip_cr(line);
        if (line.empty()) {
            continue;
        }
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            parse_fail(path, line_number, std::string("bad JSON: ") + e.what());
        }
        if (!record.contains("_id")) {
            parse_fail(path, line_number, "missing _id field");
        }
        Document doc;
        doc.id = record["_id"].is_string() ? record["_id"].get<std::string>()
                                           : record["_id"].dump();
        doc.title = record.value("title", std::string{});
        doc.body = record.value("text", std::string{});
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

std::vector<Query> read_queries_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open queries file " + path);
    }
    std::vector<Query> queries;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        line = strip_cr(line);
        if (line.empty()) {
            continue;
        }
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            parse_fail(path, line_number, "expected id<TAB>text");
        }
        queries.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return queries;
}

void save_index(const std::string& path, const InvertedIndex& index) {
    nlohmann::json out;
    out["doc_ids"] = index.doc_ids;
    out["doc_lengths"] = index.doc_lengths;
    out["avg_doc_length"] = index.avg_doc_length;
    out["doc_count"] = index.doc_count;
    nlohmann::json postings = nlohmann::json::object();
    for (const auto& [term, list] : index.postings) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& posting : list) {
            rows.push_back({posting.doc_ordinal, posting.term_frequency});
        }
        postings[term] = std::move(rows);
    }
    out["postings"] = std::move(postings);
    std::ofstream file(path, std::ios::binary);
    if (!file) {
        throw ParseError("cannot write index file " + path);
    }
    file << out.dump() << "\n";
}

InvertedIndex load_index(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw ParseError("cannot open index file " + path);
    }
    nlohmann::json in;
    try {
        file >> in;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad index file " + path + ": " + e.what());
    }
    InvertedIndex index;
    index.doc_ids = in.at("doc_ids").get<std::vector<std::string>>();
    index.doc_lengths = in.at("doc_lengths").get<std::vector<std::uint32_t>>();
    index.avg_doc_length = in.at("avg_doc_length").get<double>();
    index.doc_count = in.at("doc_count").get<std::size_t>();
    for (const auto& [term, rows] : in.at("postings").items()) {
        std::vector<Posting> list;
        list.reserve(rows.size());
        for (const auto& row : rows) {
            list.push_back({row.at(0).get<std::uint32_t>(), row.at(1).get<std::uint32_t>()});
        }
        index.postings[term] = std::move(list);
    }
    return index;
}

}  // namespace gradedrank
