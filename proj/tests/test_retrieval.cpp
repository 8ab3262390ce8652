#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "gradedrank/retrieval.hpp"

using namespace gradedrank;

namespace {

std::string fixture_path(const std::string& name) {
    return std::string(GRADEDRANK_TEST_DIR) + "/fixtures/" + name;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

/// Independent BM25 scorer: walks every document and recomputes the
/// formula from scratch, no inverted index involved.
std::map<std::string, double> brute_force_bm25(const std::vector<Document>& corpus,
                                               const std::string& query_text, double k1,
                                               double b) {
    std::vector<std::vector<std::string>> doc_terms;
    double total_length = 0.0;
    for (const auto& doc : corpus) {
        doc_terms.push_back(tokenize(document_text(doc)));
        total_length += static_cast<double>(doc_terms.back().size());
    }
    const double avgdl = total_length / static_cast<double>(corpus.size());
    const double n = static_cast<double>(corpus.size());

    std::map<std::string, double> scores;
    for (const auto& term : tokenize(query_text)) {
        double df = 0.0;
        for (const auto& terms : doc_terms) {
            if (std::count(terms.begin(), terms.end(), term) > 0) {
                df += 1.0;
            }
        }
        if (df == 0.0) {
            continue;
        }
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            const double tf =
                static_cast<double>(std::count(doc_terms[i].begin(), doc_terms[i].end(), term));
            if (tf == 0.0) {
                continue;
            }
            const double dl = static_cast<double>(doc_terms[i].size());
            scores[corpus[i].id] +=
                idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
    }
    return scores;
}

std::vector<Document> random_corpus(std::mt19937& rng, std::size_t max_docs) {
    const std::vector<std::string> vocab = {"alpha", "beta",  "gamma", "delta", "epsilon",
                                            "zeta",  "eta",   "theta", "iota",  "kappa",
                                            "mu",    "nu",    "xi",    "omega", "pi"};
    const std::size_t n = 1 + rng() % max_docs;
    std::vector<Document> corpus;
    for (std::size_t i = 0; i < n; ++i) {
        std::string body;
        const std::size_t len = 1 + rng() % 25;
        for (std::size_t t = 0; t < len; ++t) {
            if (t > 0) {
                body += " ";
            }
            body += vocab[rng() % vocab.size()];
        }
        corpus.push_back({"doc" + std::to_string(i), "", body});
    }
    return corpus;
}

}  // namespace

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
    CHECK(tokenize("COVID-19 spread!") == std::vector<std::string>{"covid", "19", "spread"});
    CHECK(tokenize("") == std::vector<std::string>{});
    CHECK(tokenize("a a B") == std::vector<std::string>{"a", "a", "b"});
    CHECK(drop_stopwords(tokenize("the spread of covid")) ==
          std::vector<std::string>{"spread", "covid"});
}

TEST_CASE("index construction counts terms and lengths") {
    const std::vector<Document> corpus = {{"d1", "", "a b a"}, {"d2", "", "b c"}};
    const auto index = build_index(corpus);
    CHECK(index.doc_count == 2);
    CHECK(index.doc_lengths == std::vector<std::uint32_t>{3, 2});
    CHECK(index.avg_doc_length == doctest::Approx(2.5));
    REQUIRE(index.postings.count("a") == 1);
    REQUIRE(index.postings.at("a").size() == 1);
    CHECK(index.postings.at("a")[0].doc_ordinal == 0);
    CHECK(index.postings.at("a")[0].term_frequency == 2);

    CHECK_THROWS_AS(build_index({}), ValidationError);
    CHECK_THROWS_AS(build_index({{"d1", "", "x"}, {"d1", "", "y"}}), ValidationError);

    const auto rebuilt = build_index(corpus);
    CHECK(rebuilt.doc_lengths == index.doc_lengths);
    CHECK(rebuilt.avg_doc_length == index.avg_doc_length);
    CHECK(rebuilt.doc_ids == index.doc_ids);
}

TEST_CASE("single-document BM25 score equals ln(4/3)") {
    const auto index = build_index({{"d1", "", "a"}});
    const auto results = bm25_search(index, "a", 10, {0.9, 0.4});
    REQUIRE(results.size() == 1);
    CHECK(results[0].first_stage_score ==
          doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
    CHECK(results[0].first_stage_rank == 1);

    CHECK(bm25_search(index, "zzz", 10).empty());
}

TEST_CASE("search agrees with the brute-force scorer on random corpora") {
    std::mt19937 rng(424242);
    for (int trial = 0; trial < 60; ++trial) {
        const auto corpus = random_corpus(rng, 40);
        const auto index = build_index(corpus);
        std::string query = "alpha beta";
        if (trial % 3 == 1) {
            query = "gamma gamma delta";
        } else if (trial % 3 == 2) {
            query = "omega";
        }
        const auto results = bm25_search(index, query, corpus.size(), {0.9, 0.4});
        const auto oracle = brute_force_bm25(corpus, query, 0.9, 0.4);
        REQUIRE(results.size() == oracle.size());
        for (const auto& candidate : results) {
            CHECK(candidate.first_stage_score ==
                  doctest::Approx(oracle.at(candidate.doc_id)).epsilon(1e-9));
        }
        for (std::size_t i = 1; i < results.size(); ++i) {
            CHECK(results[i - 1].first_stage_score >= results[i].first_stage_score);
        }
    }
}

TEST_CASE("corpus order does not change scores") {
    std::mt19937 rng(31337);
    auto corpus = random_corpus(rng, 20);
    const auto index = build_index(corpus);
    auto shuffled = corpus;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto shuffled_index = build_index(shuffled);

    const auto a = bm25_search(index, "alpha beta gamma", corpus.size());
    const auto b = bm25_search(shuffled_index, "alpha beta gamma", corpus.size());
    std::map<std::string, double> scores_a, scores_b;
    for (const auto& c : a) {
        scores_a[c.doc_id] = c.first_stage_score;
    }
    for (const auto& c : b) {
        scores_b[c.doc_id] = c.first_stage_score;
    }
    CHECK(scores_a == scores_b);
}

TEST_CASE("an added zero-overlap document holding avgdl fixed preserves single-term order") {
    const std::vector<Document> corpus = {{"d1", "", "alpha alpha beta kappa"},
                                          {"d2", "", "alpha beta beta beta"},
                                          {"d3", "", "alpha kappa mu nu"}};
    const auto index = build_index(corpus);
    const auto before = bm25_search(index, "alpha", corpus.size());

    // New doc has length 4 == avgdl, so avgdl stays fixed and only the
    // IDF's N changes, which scales all single-term scores equally.
    auto extended = corpus;
    extended.push_back({"d4", "", "omega omega omega omega"});
    const auto after = bm25_search(build_index(extended), "alpha", extended.size());

    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i].doc_id == after[i].doc_id);
    }
}

TEST_CASE("run files round-trip and parse the documented line") {
    const auto entries = read_run(fixture_path("sample_run.trec"));
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].query_id == "q1");
    CHECK(entries[0].doc_id == "d7");
    CHECK(entries[0].rank == 1);
    CHECK(entries[0].score == doctest::Approx(0.912345));
    CHECK(entries[0].tag == "graded-rank");

    const auto out = temp_file("gr_run_roundtrip.trec");
    write_run(out.string(), entries);
    CHECK(read_file(out.string()) == read_file(fixture_path("sample_run.trec")));
    std::filesystem::remove(out);
}

TEST_CASE("malformed run lines name the line number") {
    const auto path = temp_file("gr_bad_run.trec");
    {
        std::ofstream out(path, std::ios::binary);
        out << "q1 Q0 d1 1 0.9 tag\n";
        out << "q1 Q0 d2 2 0.8\n";  // missing column
    }
    CHECK_THROWS_WITH_AS(read_run(path.string()),
                         doctest::Contains(":2:"), ParseError);

    {
        std::ofstream out(path, std::ios::binary);
        out << "q1 Q0 d1 1 0.9 tag\n";
        out << "q1 Q0 d2 3 0.8 tag\n";  // rank gap
    }
    CHECK_THROWS_WITH_AS(read_run(path.string()), doctest::Contains("rank gap"), ParseError);

    {
        std::ofstream out(path, std::ios::binary);
        out << "q1 Q0 d1 1 0.5 tag\n";
        out << "q1 Q0 d2 2 0.8 tag\n";  // score increases
    }
    CHECK_THROWS_AS(read_run(path.string()), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("qrels round-trip through the BEIR TSV format") {
    const auto qrels = read_qrels(fixture_path("qrels.tsv"));
    CHECK(qrels.size() == 7);
    CHECK(qrels.grade("q1", "d1") == 2);
    CHECK(qrels.grade("q2", "d2") == 2);

    const auto out = temp_file("gr_qrels_roundtrip.tsv");
    write_qrels(out.string(), qrels);
    CHECK(read_file(out.string()) == read_file(fixture_path("qrels.tsv")));
    std::filesystem::remove(out);

    const auto bad = temp_file("gr_bad_qrels.tsv");
    {
        std::ofstream file(bad, std::ios::binary);
        file << "q1\td1\t1\n";
        file << "q1\td2\n";  // missing grade
    }
    CHECK_THROWS_WITH_AS(read_qrels(bad.string()), doctest::Contains(":2:"), ParseError);
    std::filesystem::remove(bad);
}

TEST_CASE("corpus and query files parse the BEIR layouts") {
    const auto corpus = read_corpus_jsonl(fixture_path("corpus.jsonl"));
    REQUIRE(corpus.size() == 6);
    CHECK(corpus[0].id == "d1");
    CHECK(corpus[0].title == "Vaccine overview");

    const auto queries = read_queries_tsv(fixture_path("queries.tsv"));
    REQUIRE(queries.size() == 3);
    CHECK(queries[1].id == "q2");
    CHECK(queries[1].text == "vaccination fever side effects");
}

TEST_CASE("saved indexes load back identically") {
    const auto corpus = read_corpus_jsonl(fixture_path("corpus.jsonl"));
    const auto index = build_index(corpus);
    const auto path = temp_file("gr_index.json");
    save_index(path.string(), index);
    const auto loaded = load_index(path.string());
    CHECK(loaded.doc_count == index.doc_count);
    CHECK(loaded.doc_ids == index.doc_ids);
    CHECK(loaded.doc_lengths == index.doc_lengths);
    CHECK(loaded.avg_doc_length == doctest::Approx(index.avg_doc_length));
    REQUIRE(loaded.postings.size() == index.postings.size());
    const auto results_a = bm25_search(index, "vaccine immune", 5);
    const auto results_b = bm25_search(loaded, "vaccine immune", 5);
    REQUIRE(results_a.size() == results_b.size());
    for (std::size_t i = 0; i < results_a.size(); ++i) {
        CHECK(results_a[i].doc_id == results_b[i].doc_id);
        CHECK(results_a[i].first_stage_score ==
              doctest::Approx(results_b[i].first_stage_score));
    }
    std::filesystem::remove(path);
}
