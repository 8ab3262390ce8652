#include <doctest.h>

#include <algorithm>
#include <random>

#include "gradedrank/core.hpp"

using namespace gradedrank;

TEST_CASE("preset schemes carry the published label sets") {
    const auto rg3 = preset_scheme(PresetScheme::RG3L);
    CHECK(rg3.labels ==
          std::vector<std::string>{"Not Relevant", "Somewhat Relevant", "Highly Relevant"});
    CHECK(rg3.relevance_values == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(rg3.peak_index == 2);
    CHECK(rg3.kind == SchemeKind::textual);

    const auto rg2 = preset_scheme(PresetScheme::RG2L);
    CHECK(rg2.labels == std::vector<std::string>{"Not Relevant", "Relevant"});
    CHECK(rg2.relevance_values == std::vector<double>{0.0, 1.0});
    CHECK(rg2.peak_index == 1);

    const auto rg4 = preset_scheme(PresetScheme::RG4L);
    CHECK(rg4.labels.size() == 4);
    CHECK(rg4.labels.back() == "Perfectly Relevant");
    CHECK(rg4.peak_index == 3);
}

TEST_CASE("rating schemes enumerate the scale") {
    const auto scale = rating_scheme(0, 4);
    CHECK(scale.labels == std::vector<std::string>{"0", "1", "2", "3", "4"});
    CHECK(scale.relevance_values == std::vector<double>{0.0, 1.0, 2.0, 3.0, 4.0});
    CHECK(scale.peak_index == 4);
    CHECK(scale.kind == SchemeKind::rating_scale);

    const auto shifted = rating_scheme(1, 3);
    CHECK(shifted.labels == std::vector<std::string>{"1", "2", "3"});
    CHECK(shifted.relevance_values == std::vector<double>{1.0, 2.0, 3.0});

    CHECK_THROWS_AS(rating_scheme(1, 1), ValidationError);
    CHECK_THROWS_AS(rating_scheme(3, 1), ValidationError);
    CHECK_THROWS_AS(rating_scheme(-1, 2), ValidationError);
}

TEST_CASE("custom schemes are validated") {
    const auto scheme = custom_scheme({"Irrelevant", "Relevant"}, {0.0, 1.0});
    CHECK(scheme.labels.front() == "Irrelevant");
    CHECK(scheme.peak_index == 1);

    CHECK_THROWS_AS(custom_scheme({"A", "A"}, {0.0, 1.0}), ValidationError);
    CHECK_THROWS_AS(custom_scheme({"A", "B"}, {0.0}), ValidationError);
    CHECK_THROWS_AS(custom_scheme({"A", "B", "C"}, {0.0, 2.0, 1.0}), ValidationError);
    CHECK_THROWS_AS(custom_scheme({"A"}, {0.0}), ValidationError);
}

TEST_CASE("tied maximum relevance values peak at the highest index") {
    const auto scheme = custom_scheme({"N", "S", "H"}, {0.0, 2.0, 2.0});
    CHECK(scheme.peak_index == 2);
}

TEST_CASE("relevance value overrides keep the labels") {
    const auto base = preset_scheme(PresetScheme::RG3L);
    const auto swept = with_values(base, {0.0, 0.5, 2.0});
    CHECK(swept.labels == base.labels);
    CHECK(swept.relevance_values == std::vector<double>{0.0, 0.5, 2.0});
    CHECK_THROWS_AS(with_values(base, {0.0, 1.0}), ValidationError);
}

TEST_CASE("random rating schemes satisfy every scheme invariant") {
    std::mt19937 rng(20240811);
    for (int trial = 0; trial < 200; ++trial) {
        const int lo = static_cast<int>(rng() % 5);
        const int hi = lo + 1 + static_cast<int>(rng() % 9);
        const auto scheme = rating_scheme(lo, hi);

        // RG-S(lo, hi) scores hi - lo + 1 labels; for lo = 0 that is k + 1.
        CHECK(scheme.labels.size() == static_cast<std::size_t>(hi - lo + 1));
        CHECK(scheme.labels.size() == scheme.relevance_values.size());
        CHECK(scheme.labels.size() >= 2);
        for (std::size_t k = 1; k < scheme.relevance_values.size(); ++k) {
            CHECK(scheme.relevance_values[k] >= scheme.relevance_values[k - 1]);
        }
        CHECK(scheme.peak_index == scheme.labels.size() - 1);
    }
}

TEST_CASE("document text joins a non-empty title with the body") {
    CHECK(document_text({"d1", "Title", "Body text"}) == "Title Body text");
    CHECK(document_text({"d1", "", "Body text"}) == "Body text");
}

TEST_CASE("qrels default missing pairs to grade zero") {
    Qrels qrels;
    qrels.add("q1", "d1", 2);
    qrels.add("q1", "d2", 0);
    qrels.add("q2", "d1", 1);

    CHECK(qrels.grade("q1", "d1") == 2);
    CHECK(qrels.grade("q1", "dX") == 0);
    CHECK(qrels.grade("qX", "d1") == 0);
    CHECK(qrels.has_relevant("q1"));
    CHECK_FALSE(qrels.has_relevant("q9"));

    auto grades = qrels.judged_grades("q1");
    std::sort(grades.begin(), grades.end());
    CHECK(grades == std::vector<int>{0, 2});

    CHECK_THROWS_AS(qrels.add("q1", "d9", -1), ValidationError);
}
