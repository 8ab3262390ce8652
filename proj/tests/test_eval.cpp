#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gradedrank/eval.hpp"

using namespace gradedrank;

namespace {

RankedList make_list(const std::string& query_id, const std::vector<std::string>& docs) {
    RankedList list;
    list.query_id = query_id;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        list.entries.push_back({docs[i], static_cast<double>(docs.size() - i),
                                static_cast<int>(i + 1)});
    }
    return list;
}

/// From-scratch NDCG: no shared code with the library implementation.
double reference_ndcg(const std::vector<int>& ranked_grades, std::vector<int> judged, int k,
                      bool exponential) {
    const auto gain = [&](int g) {
        return exponential ? std::pow(2.0, g) - 1.0 : static_cast<double>(g);
    };
    double dcg = 0.0;
    for (int r = 0; r < static_cast<int>(ranked_grades.size()) && r < k; ++r) {
        dcg += gain(ranked_grades[r]) / (std::log(r + 2.0) / std::log(2.0));
    }
    std::sort(judged.begin(), judged.end(), std::greater<int>());
    double idcg = 0.0;
    for (int r = 0; r < static_cast<int>(judged.size()) && r < k; ++r) {
        idcg += gain(judged[r]) / (std::log(r + 2.0) / std::log(2.0));
    }
    return dcg / idcg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace

TEST_CASE("ndcg matches the hand-computed cases") {
    Qrels qrels;
    qrels.add("q1", "d1", 1);
    qrels.add("q1", "d2", 0);

    CHECK(*ndcg_at_k(make_list("q1", {"d1", "d2"}), qrels, 10) == doctest::Approx(1.0));
    CHECK(*ndcg_at_k(make_list("q1", {"d2", "d1"}), qrels, 10) ==
          doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-6));

    Qrels graded;
    graded.add("q1", "d1", 2);
    graded.add("q1", "d2", 1);
    const double value = *ndcg_at_k(make_list("q1", {"d2", "d1"}), graded, 10);
    CHECK(value == doctest::Approx(0.859719).epsilon(5e-7));
}

TEST_CASE("queries without relevant documents return the sentinel") {
    Qrels qrels;
    qrels.add("q1", "d1", 0);
    CHECK_FALSE(ndcg_at_k(make_list("q1", {"d1"}), qrels, 10).has_value());
    CHECK_FALSE(ndcg_at_k(make_list("q2", {"d1"}), qrels, 10).has_value());

    qrels.add("q3", "d1", 1);
    const auto report = evaluate_ranked_lists(
        {make_list("q1", {"d1"}), make_list("q3", {"d1"})}, qrels, 10);
    CHECK(report.evaluated == 1);
    CHECK(report.skipped_no_relevant == 1);
    CHECK(report.mean == doctest::Approx(1.0));
}

TEST_CASE("the ideal ranking uses all judged documents, retrieved or not") {
    Qrels qrels;
    qrels.add("q1", "d1", 1);
    qrels.add("q1", "d9", 3);  // judged but never retrieved
    const double linear = *ndcg_at_k(make_list("q1", {"d1"}), qrels, 10);
    CHECK(linear == doctest::Approx(1.0 / (3.0 + 1.0 / std::log2(3.0))).epsilon(1e-9));
    const double exponential =
        *ndcg_at_k(make_list("q1", {"d1"}), qrels, 10, GainMode::exponential);
    CHECK(exponential == doctest::Approx(1.0 / (7.0 + 1.0 / std::log2(3.0))).epsilon(1e-9));
}

TEST_CASE("ndcg agrees with an independent reference on random instances") {
    std::mt19937 rng(987654);
    for (int trial = 0; trial < 400; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 50);
        Qrels qrels;
        std::vector<std::string> docs;
        std::vector<int> ranked_grades;
        std::vector<int> judged;
        bool any_relevant = false;
        for (int i = 0; i < n; ++i) {
            const int grade = static_cast<int>(rng() % 4);
            docs.push_back("d" + std::to_string(i));
            ranked_grades.push_back(grade);
            judged.push_back(grade);
            if (grade > 0) {
                any_relevant = true;
            }
            qrels.add("q", docs.back(), grade);
        }
        // A few judged-but-unretrieved documents.
        for (int extra = 0; extra < static_cast<int>(rng() % 3); ++extra) {
            const int grade = static_cast<int>(rng() % 4);
            judged.push_back(grade);
            if (grade > 0) {
                any_relevant = true;
            }
            qrels.add("q", "extra" + std::to_string(extra), grade);
        }
        const int k = 1 + static_cast<int>(rng() % 15);
        for (const bool exponential : {false, true}) {
            const auto value = ndcg_at_k(make_list("q", docs), qrels, k,
                                         exponential ? GainMode::exponential : GainMode::linear);
            if (!any_relevant) {
                CHECK_FALSE(value.has_value());
                continue;
            }
            const double expected = reference_ndcg(ranked_grades, judged, k, exponential);
            CHECK(*value == doctest::Approx(expected).epsilon(1e-9));
            CHECK(*value >= 0.0);
            CHECK(*value <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("ndcg depends only on the ordering, not the scores") {
    Qrels qrels;
    qrels.add("q1", "d1", 2);
    qrels.add("q1", "d2", 1);
    qrels.add("q1", "d3", 0);

    RankedList list = make_list("q1", {"d2", "d1", "d3"});
    const double before = *ndcg_at_k(list, qrels, 10);
    // Any strictly monotone transform of the scores keeps the order.
    for (auto& entry : list.entries) {
        entry.score = std::exp(entry.score) * 0.001;
    }
    CHECK(*ndcg_at_k(list, qrels, 10) == doctest::Approx(before));
}

TEST_CASE("paired t-test reproduces the documented example") {
    const auto result = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
    CHECK(result.t_statistic == doctest::Approx(4.2426).epsilon(1e-4));
    CHECK(result.p_value == doctest::Approx(0.0132).epsilon(1e-2));
    CHECK(result.df == 4);
    CHECK(result.paired_n == 5);

    const auto zero = paired_t_test({1, 0, 1, 0}, {0, 1, 0, 1});
    CHECK(zero.t_statistic == doctest::Approx(0.0));
    CHECK(zero.p_value == doctest::Approx(1.0));

    CHECK_THROWS_AS(paired_t_test({1, 2}, {1, 2}), ValidationError);        // zero variance
    CHECK_THROWS_AS(paired_t_test({1, 2, 3}, {0, 1}), ValidationError);     // length mismatch
    CHECK_THROWS_AS(paired_t_test({1}, {0}), ValidationError);              // too short
}

TEST_CASE("paired t-test is antisymmetric") {
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(12);
        std::vector<double> b(12);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = dist(rng);
            b[i] = dist(rng);
        }
        const auto forward = paired_t_test(a, b);
        const auto backward = paired_t_test(b, a);
        CHECK(forward.t_statistic == -backward.t_statistic);
        CHECK(forward.p_value == backward.p_value);
    }
}

TEST_CASE("scatter export writes the sorted pair intersection") {
    PairScoreMap a;
    PairScoreMap b;
    a[{"q1", "d1"}] = 0.25;
    a[{"q1", "d2"}] = 0.75;
    a[{"q2", "d1"}] = 0.5;  // not in b
    b[{"q1", "d1"}] = 0.3;
    b[{"q1", "d2"}] = 0.6;

    const auto path = std::filesystem::temp_directory_path() / "gr_scatter.csv";
    export_scatter(a, b, path.string());
    CHECK(read_file(path.string()) ==
          "query_id,doc_id,score_a,score_b\n"
          "q1,d1,0.250000,0.300000\n"
          "q1,d2,0.750000,0.600000\n");
    std::filesystem::remove(path);

    PairScoreMap disjoint;
    disjoint[{"q9", "d9"}] = 1.0;
    CHECK_THROWS_AS(export_scatter(a, disjoint, path.string()), ValidationError);
}

TEST_CASE("marginal export writes one row per pair and label") {
    Qrels qrels;
    qrels.add("q1", "d1", 2);

    std::vector<MarginalRecord> records;
    records.push_back({"q1", "d1", {0.1, 0.2, 0.7}});
    records.push_back({"q1", "dX", {0.8, 0.15, 0.05}});  // unjudged -> grade 0

    const auto path = std::filesystem::temp_directory_path() / "gr_marginals.csv";
    export_marginals(records, qrels, path.string());
    CHECK(read_file(path.string()) ==
          "ground_truth_grade,label_index,p_k\n"
          "2,0,0.100000\n"
          "2,1,0.200000\n"
          "2,2,0.700000\n"
          "0,0,0.800000\n"
          "0,1,0.150000\n"
          "0,2,0.050000\n");
    std::filesystem::remove(path);

    records.push_back({"q1", "d2", {0.5, 0.5}});  // mixed scheme sizes
    CHECK_THROWS_AS(export_marginals(records, qrels, path.string()), ValidationError);
}
