#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "gradedrank/backend.hpp"
#include "gradedrank/prompt.hpp"

using namespace gradedrank;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

SyntheticBackend::Config grade3_config(double sigma, std::uint64_t seed) {
    SyntheticBackend::Config config;
    config.planted_qrels.add("q1", "d1", 2);
    config.planted_qrels.add("q1", "d2", 1);
    config.planted_qrels.add("q1", "d3", 0);
    config.calibrations[3] = {{0, {-0.5, -2.0, -5.0}},
                              {1, {-2.0, -0.7, -2.5}},
                              {2, {-5.0, -2.0, -0.5}}};
    config.noise_sigma = sigma;
    config.seed = seed;
    return config;
}

RenderedPrompt rg3_prompt(const std::string& query_text, const std::string& doc_body) {
    return render(PromptTemplateKind::RG_TEXTUAL, {"q", query_text}, {"d", "", doc_body},
                  preset_scheme(PresetScheme::RG3L));
}

}  // namespace

TEST_CASE("table mock echoes its fixture and reports missing keys") {
    TableMockBackend mock;
    mock.add("p", "A", -1.0);
    mock.add("p", "B", -2.0);

    const auto response = mock.score({"p", {"A", "B"}});
    CHECK(response.log_likelihoods == std::vector<double>{-1.0, -2.0});
    CHECK(mock.score_calls() == 1);

    CHECK_THROWS_WITH_AS(mock.score({"p", {"A", "C"}}), doctest::Contains("C"), BackendError);
    CHECK_THROWS_AS(mock.score({"unknown prompt", {"A"}}), BackendError);

    CHECK(mock.generate("p") == "A");  // argmax of the fixture
    CHECK_THROWS_AS(mock.generate("unknown prompt"), BackendError);
}

TEST_CASE("score requests are validated") {
    TableMockBackend mock;
    mock.add("p", "A", -1.0);
    CHECK_THROWS_AS(mock.score({"p", {}}), ValidationError);
    CHECK_THROWS_AS(mock.score({"p", {"A", "A"}}), ValidationError);
}

TEST_CASE("table fixtures persist through the documented JSON format") {
    TableMockBackend mock;
    mock.add("some prompt", " Yes", -0.5);
    mock.add("some prompt", " No", -1.5);
    const auto path = temp_file("gr_fixture.json");
    mock.save_fixture(path.string());

    // Keys are "sha256(prompt)\n<continuation>".
    std::ifstream in(path);
    nlohmann::json fixture;
    in >> fixture;
    const std::string key = sha256_hex("some prompt") + "\n Yes";
    REQUIRE(fixture.contains(key));
    CHECK(fixture[key].get<double>() == -0.5);

    auto loaded = TableMockBackend::from_fixture(path.string());
    CHECK(loaded.score({"some prompt", {" No", " Yes"}}).log_likelihoods ==
          std::vector<double>{-1.5, -0.5});
    CHECK(loaded.generate("some prompt") == " Yes");
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".prompts");
}

TEST_CASE("synthetic mock is exact at zero noise and deterministic under noise") {
    SyntheticBackend backend(grade3_config(0.0, 1));
    backend.register_dataset({{"q1", "query one"}}, {{"d1", "", "first document"},
                                                     {"d2", "", "second document"},
                                                     {"d3", "", "third document"}});
    const auto prompt = rg3_prompt("query one", "first document");
    const auto response = backend.score({prompt.text, prompt.continuations});
    CHECK(response.log_likelihoods == std::vector<double>{-5.0, -2.0, -0.5});

    SyntheticBackend noisy(grade3_config(0.5, 42));
    noisy.register_dataset({{"q1", "query one"}}, {{"d1", "", "first document"},
                                                   {"d2", "", "second document"},
                                                   {"d3", "", "third document"}});
    const auto first = noisy.score({prompt.text, prompt.continuations});
    const auto second = noisy.score({prompt.text, prompt.continuations});
    CHECK(first.log_likelihoods == second.log_likelihoods);
    CHECK(first.log_likelihoods != std::vector<double>{-5.0, -2.0, -0.5});

    SyntheticBackend reseeded(grade3_config(0.5, 43));
    reseeded.register_dataset({{"q1", "query one"}}, {{"d1", "", "first document"},
                                                      {"d2", "", "second document"},
                                                      {"d3", "", "third document"}});
    CHECK(reseeded.score({prompt.text, prompt.continuations}).log_likelihoods !=
          first.log_likelihoods);
}

TEST_CASE("synthetic generation returns the argmax label of the bound scheme") {
    SyntheticBackend backend(grade3_config(0.0, 1));
    backend.register_dataset({{"q1", "query one"}}, {{"d1", "", "first document"}});
    const auto prompt = rg3_prompt("query one", "first document");
    CHECK_THROWS_WITH_AS(backend.generate(prompt.text), doctest::Contains("unsupported"),
                         BackendError);

    backend.bind_scheme(preset_scheme(PresetScheme::RG3L));
    CHECK(backend.generate(prompt.text) == "Highly Relevant");

    CHECK_THROWS_AS(backend.bind_scheme(rating_scheme(0, 4)), ValidationError);
}

TEST_CASE("synthetic mock resolves truncated document text by prefix") {
    SyntheticBackend backend(grade3_config(0.0, 1));
    backend.register_dataset({{"q1", "query one"}},
                             {{"d1", "", "a very long body that will be truncated somewhere"}});
    RenderOptions options;
    options.truncation.max_doc_chars = 20;
    const auto prompt = render(PromptTemplateKind::RG_TEXTUAL, {"q1", "query one"},
                               {"d1", "", "a very long body that will be truncated somewhere"},
                               preset_scheme(PresetScheme::RG3L), {}, options);
    CHECK(backend.score({prompt.text, prompt.continuations}).log_likelihoods ==
          std::vector<double>{-5.0, -2.0, -0.5});

    CHECK_THROWS_WITH_AS(
        backend.score({rg3_prompt("query one", "never registered").text,
                       prompt.continuations}),
        doctest::Contains("unregistered document"), BackendError);
    CHECK_THROWS_WITH_AS(
        backend.score({rg3_prompt("never registered", "a very long body that will be truncated "
                                                      "somewhere")
                           .text,
                       prompt.continuations}),
        doctest::Contains("unregistered query"), BackendError);
}

TEST_CASE("cached backend calls the inner backend once per distinct request") {
    auto inner = std::make_shared<TableMockBackend>();
    inner->add("p", "A", -1.0);
    inner->add("p", "B", -2.0);
    CachedBackend cached(inner, std::make_shared<CacheStore>());

    const ScoreRequest request{"p", {"A", "B"}};
    const auto first = cached.score(request);
    const auto second = cached.score(request);
    CHECK(first.log_likelihoods == second.log_likelihoods);
    CHECK(inner->score_calls() == 1);

    // Continuation order is part of the key.
    cached.score({"p", {"B", "A"}});
    CHECK(inner->score_calls() == 2);
}

TEST_CASE("cached backend is observationally equivalent to its inner backend") {
    auto plain = std::make_shared<TableMockBackend>();
    auto wrapped = std::make_shared<TableMockBackend>();
    std::mt19937 rng(11);
    std::vector<std::string> prompts;
    for (int p = 0; p < 5; ++p) {
        prompts.push_back("prompt " + std::to_string(p));
        for (int c = 0; c < 3; ++c) {
            const double value = -static_cast<double>(rng() % 1000) / 100.0;
            plain->add(prompts.back(), "c" + std::to_string(c), value);
            wrapped->add(prompts.back(), "c" + std::to_string(c), value);
        }
    }
    CachedBackend cached(wrapped, std::make_shared<CacheStore>());
    for (int trial = 0; trial < 200; ++trial) {
        const auto& prompt = prompts[rng() % prompts.size()];
        std::vector<std::string> continuations = {"c0", "c1", "c2"};
        if (rng() % 2 == 0) {
            std::shuffle(continuations.begin(), continuations.end(), rng);
        }
        if (rng() % 3 == 0) {
            continuations.resize(1 + rng() % 2);
        }
        const ScoreRequest request{prompt, continuations};
        CHECK(cached.score(request).log_likelihoods == plain->score(request).log_likelihoods);
    }
    CHECK(wrapped->score_calls() < 200);
}

TEST_CASE("cache contents survive a process-style restart") {
    const auto path = temp_file("gr_cache.jsonl");
    std::filesystem::remove(path);
    {
        auto inner = std::make_shared<TableMockBackend>();
        inner->add("p", "A", -1.25);
        CachedBackend cached(inner, std::make_shared<CacheStore>(path.string()));
        cached.score({"p", {"A"}});
    }
    {
        // Fresh store, empty inner backend: only the cache can answer.
        auto empty_inner = std::make_shared<TableMockBackend>();
        CachedBackend cached(empty_inner, std::make_shared<CacheStore>(path.string()));
        CHECK(cached.score({"p", {"A"}}).log_likelihoods == std::vector<double>{-1.25});
        CHECK(empty_inner->score_calls() == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("http backend speaks the wire protocol and retries 5xx") {
    httplib::Server server;
    std::atomic<int> score_hits{0};
    server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
        const int hit = ++score_hits;
        if (hit <= 2) {
            res.status = 503;
            res.set_content("{\"error\": \"warming up\"}", "application/json");
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        CHECK(req.get_header_value("Authorization") == "Bearer sekrit");
        nlohmann::json out;
        std::vector<double> lls;
        for (std::size_t i = 0; i < body.at("continuations").size(); ++i) {
            lls.push_back(-1.0 - static_cast<double>(i));
        }
        out["log_likelihoods"] = lls;
        res.set_content(out.dump(), "application/json");
    });
    server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        CHECK(body.at("max_tokens").get<int>() == 8);
        res.set_content("{\"text\": \" Highly Relevant\"}", "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackend::Config config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port);
    config.bearer_token = "sekrit";
    config.max_tokens = 8;
    config.retry.max_attempts = 5;
    config.retry.base_delay_ms = 1;
    HttpBackend backend(config);

    const auto response = backend.score({"a prompt", {" No", " Yes"}});
    CHECK(response.log_likelihoods == std::vector<double>{-1.0, -2.0});
    CHECK(score_hits.load() == 3);  // two 503s then success, content unchanged

    CHECK(backend.generate("a prompt") == " Highly Relevant");

    server.stop();
    server_thread.join();
}

TEST_CASE("http backend treats 4xx as fatal and stops retrying") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 400;
        res.set_content("{\"error\": \"bad continuation\"}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackend::Config config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port);
    config.retry.max_attempts = 4;
    config.retry.base_delay_ms = 1;
    HttpBackend backend(config);
    CHECK_THROWS_WITH_AS(backend.score({"p", {"A"}}), doctest::Contains("bad continuation"),
                         BackendError);
    CHECK(hits.load() == 1);

    server.stop();
    server_thread.join();
}

TEST_CASE("http backend fails after exhausting retries") {
    HttpBackend::Config config;
    config.base_url = "http://127.0.0.1:9";  // nothing listens on the discard port
    config.retry.max_attempts = 2;
    config.retry.base_delay_ms = 1;
    config.connect_timeout_s = 1;
    HttpBackend backend(config);
    CHECK_THROWS_WITH_AS(backend.score({"p", {"A"}}), doctest::Contains("2 attempts"),
                         BackendError);
}

TEST_CASE("malformed score responses are protocol violations") {
    httplib::Server server;
    server.Post("/v1/score", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"log_likelihoods\": [-1.0]}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackend::Config config;
    config.base_url = "http://127.0.0.1:" + std::to_string(port);
    config.retry.base_delay_ms = 1;
    HttpBackend backend(config);
    // Two continuations but one value: length mismatch is fatal.
    CHECK_THROWS_AS(backend.score({"p", {"A", "B"}}), BackendError);

    server.stop();
    server_thread.join();
}
