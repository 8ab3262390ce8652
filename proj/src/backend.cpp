#include "gradedrank/backend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <unordered_set>

#include <openssl/evp.h>

#include <httplib.h>
#include <json.hpp>

namespace gradedrank {

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    static const char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

void validate_request(const ScoreRequest& request) {
    if (request.continuations.empty()) {
        throw ValidationError("score request needs at least one continuation");
    }
    std::unordered_set<std::string> seen;
    for (const auto& continuation : request.continuations) {
        if (!seen.insert(continuation).second) {
            throw ValidationError("score request has duplicate continuation \"" + continuation +
                                  "\"");
        }
    }
}

ScoreResponse Backend::score(const ScoreRequest& request) {
    validate_request(request);
    ++score_calls_;
    ScoreResponse response = score_impl(request);
    if (response.log_likelihoods.size() != request.continuations.size()) {
        throw BackendError("backend returned " + std::to_string(response.log_likelihoods.size()) +
                           " log-likelihoods for " + std::to_string(request.continuations.size()) +
                           " continuations");
    }
    return response;
}

std::string Backend::generate(const std::string& prompt) {
    if (prompt.empty()) {
        throw ValidationError("generate called with empty prompt");
    }
    ++generate_calls_;
    return generate_impl(prompt);
}

// ---------------------------------------------------------------------------
// Table mock

void TableMockBackend::add(const std::string& prompt, const std::string& continuation,
                           double log_likelihood) {
    const std::string hash = sha256_hex(prompt);
    scores_[hash + "\n" + continuation] = log_likelihood;
    by_prompt_[hash].emplace_back(continuation, log_likelihood);
    prompts_[hash] = prompt;
}

ScoreResponse TableMockBackend::score_impl(const ScoreRequest& request) {
    const std::string hash = sha256_hex(request.prompt);
    ScoreResponse response;
    response.log_likelihoods.reserve(request.continuations.size());
    for (const auto& continuation : request.continuations) {
        const std::string key = hash + "\n" + continuation;
        const auto it = scores_.find(key);
        if (it == scores_.end()) {
            throw BackendError("table mock has no fixture entry for key \"" + hash + "\\n" +
                               continuation + "\"");
        }
        response.log_likelihoods.push_back(it->second);
    }
    return response;
}

std::string TableMockBackend::generate_impl(const std::string& prompt) {
    const std::string hash = sha256_hex(prompt);
    const auto it = by_prompt_.find(hash);
    if (it == by_prompt_.end() || it->second.empty()) {
        throw BackendError("table mock has no continuations for prompt hash " + hash);
    }
    const auto best = std::max_element(
        it->second.begin(), it->second.end(),
        [](const auto& a, const auto& b) { return a.second < b.second; });
    return best->first;
}

void TableMockBackend::save_fixture(const std::string& path) const {
    nlohmann::json fixture = nlohmann::json::object();
    for (const auto& [key, value] : scores_) {
        fixture[key] = value;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ParseError("cannot write fixture file " + path);
    }
    out << fixture.dump(2) << "\n";

    nlohmann::json sidecar = nlohmann::json::object();
    for (const auto& [hash, prompt] : prompts_) {
        sidecar[hash] = prompt;
    }
    std::ofstream side(path + ".prompts", std::ios::binary);
    side << sidecar.dump(2) << "\n";
}

TableMockBackend TableMockBackend::from_fixture(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open fixture file " + path);
    }
    nlohmann::json fixture;
    try {
        in >> fixture;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad fixture file " + path + ": " + e.what());
    }
    TableMockBackend backend;
    for (const auto& [key, value] : fixture.items()) {
        const std::size_t newline = key.find('\n');
        if (newline == std::string::npos || !value.is_number()) {
            throw ParseError("bad fixture entry \"" + key + "\" in " + path);
        }
        const std::string hash = key.substr(0, newline);
        const std::string continuation = key.substr(newline + 1);
        backend.scores_[key] = value.get<double>();
        backend.by_prompt_[hash].emplace_back(continuation, value.get<double>());
    }
    std::ifstream side(path + ".prompts", std::ios::binary);
    if (side) {
        nlohmann::json sidecar;
        try {
            side >> sidecar;
            for (const auto& [hash, prompt] : sidecar.items()) {
                backend.prompts_[hash] = prompt.get<std::string>();
            }
        } catch (const nlohmann::json::exception&) {
            // sidecar is advisory only
        }
    }
    backend.fixture_id_ = sha256_hex(fixture.dump());
    return backend;
}

// ---------------------------------------------------------------------------
// Synthetic mock

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(const std::string& data, std::uint64_t hash = 0xCBF29CE484222325ull) {
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 0x100000001B3ull;
    }
    return hash;
}

double unit_interval(std::uint64_t bits) {
    // (0, 1]: keeps log() in Box-Muller finite.
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

/// Standard normal draw from a fixed key; platform-stable by construction
/// (no std::distribution involved).
double gaussian_from_key(std::uint64_t key) {
    std::uint64_t state = key;
    const double u1 = unit_interval(splitmix64(state));
    const double u2 = unit_interval(splitmix64(state));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Field value between `marker` (last occurrence) and the next `terminator`.
std::optional<std::string> extract_field(const std::string& prompt, const std::string& marker,
                                         const std::string& terminator) {
    const std::size_t start = prompt.rfind(marker);
    if (start == std::string::npos) {
        return std::nullopt;
    }
    const std::size_t value_begin = start + marker.size();
    const std::size_t end = prompt.find(terminator, value_begin);
    if (end == std::string::npos) {
        return std::nullopt;
    }
    return prompt.substr(value_begin, end - value_begin);
}

}  // namespace

SyntheticBackend::SyntheticBackend(Config config) : config_(std::move(config)) {
    for (const auto& [label_count, table] : config_.calibrations) {
        for (const auto& record : config_.planted_qrels.records()) {
            if (table.find(record.grade) == table.end()) {
                throw ValidationError("synthetic calibration for " + std::to_string(label_count) +
                                      " labels does not cover grade " +
                                      std::to_string(record.grade));
            }
        }
        for (const auto& [grade, means] : table) {
            if (static_cast<int>(means.size()) != label_count) {
                throw ValidationError("synthetic calibration vector for grade " +
                                      std::to_string(grade) + " has " +
                                      std::to_string(means.size()) + " entries, expected " +
                                      std::to_string(label_count));
            }
        }
    }
    if (config_.noise_sigma < 0.0) {
        throw ValidationError("noise_sigma must be non-negative");
    }
}

void SyntheticBackend::register_dataset(const std::vector<Query>& queries,
                                        const std::vector<Document>& corpus) {
    for (const auto& query : queries) {
        query_text_to_id_[query.text] = query.id;
    }
    for (const auto& doc : corpus) {
        const std::string text = document_text(doc);
        doc_text_to_id_[text] = doc.id;
        doc_texts_.emplace_back(text, doc.id);
    }
}

void SyntheticBackend::bind_scheme(const LabelScheme& scheme) {
    const int count = static_cast<int>(scheme.size());
    if (config_.calibrations.find(count) == config_.calibrations.end()) {
        throw ValidationError("no synthetic calibration for schemes with " +
                              std::to_string(count) + " labels");
    }
    bound_scheme_ = scheme;
}

std::string SyntheticBackend::identity() const {
    std::string spec = "sigma=" + std::to_string(config_.noise_sigma) +
                       ";seed=" + std::to_string(config_.seed);
    for (const auto& [count, table] : config_.calibrations) {
        spec += ";" + std::to_string(count) + ":" + std::to_string(table.size());
    }
    return "synthetic:" + sha256_hex(spec).substr(0, 16);
}

std::pair<std::string, std::string> SyntheticBackend::resolve_pair(
    const std::string& prompt, const std::string* continuation) const {
    std::optional<std::string> query_text;
    std::optional<std::string> doc_text;
    if (prompt.rfind("You said: ") != std::string::npos) {
        // Query-generation layout: the query is the continuation.
        doc_text = extract_field(prompt, "You said: ", "\nI googled:");
        if (continuation != nullptr) {
            std::string text = *continuation;
            if (!text.empty() && text.front() == ' ') {
                text.erase(text.begin());
            }
            query_text = text;
        }
    } else {
        query_text = extract_field(prompt, "Query: ", "\nDocument: ");
        doc_text = extract_field(prompt, "Document: ", "\nOutput:");
    }
    if (!query_text || !doc_text) {
        throw BackendError("synthetic backend cannot locate query/document fields in prompt");
    }

    const auto query_it = query_text_to_id_.find(*query_text);
    if (query_it == query_text_to_id_.end()) {
        throw BackendError("synthetic backend: unregistered query text \"" + *query_text + "\"");
    }

    const auto doc_it = doc_text_to_id_.find(*doc_text);
    if (doc_it != doc_text_to_id_.end()) {
        return {query_it->second, doc_it->second};
    }
    // Truncated document text: match the unique registered text it prefixes.
    const std::string* match = nullptr;
    for (const auto& [text, id] : doc_texts_) {
        if (text.size() > doc_text->size() && text.compare(0, doc_text->size(), *doc_text) == 0) {
            if (match != nullptr) {
                throw BackendError("synthetic backend: truncated document text is ambiguous");
            }
            match = &id;
        }
    }
    if (match == nullptr) {
        throw BackendError("synthetic backend: unregistered document text \"" +
                           doc_text->substr(0, 64) + "...\"");
    }
    return {query_it->second, *match};
}

std::vector<double> SyntheticBackend::pair_log_likelihoods(const std::string& query_id,
                                                           const std::string& doc_id,
                                                           int label_count) const {
    const auto table_it = config_.calibrations.find(label_count);
    if (table_it == config_.calibrations.end()) {
        throw BackendError("no synthetic calibration for " + std::to_string(label_count) +
                           " labels");
    }
    const int grade = config_.planted_qrels.grade(query_id, doc_id);
    const auto mean_it = table_it->second.find(grade);
    if (mean_it == table_it->second.end()) {
        throw BackendError("synthetic calibration missing grade " + std::to_string(grade));
    }

    std::vector<double> values = mean_it->second;
    if (config_.noise_sigma > 0.0) {
        std::uint64_t base = fnv1a(query_id);
        base = fnv1a("\x1f", base);
        base = fnv1a(doc_id, base);
        base ^= config_.seed * 0x9E3779B97F4A7C15ull;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const std::uint64_t key =
                base + (static_cast<std::uint64_t>(k) + 1) * 0xD1342543DE82EF95ull +
                static_cast<std::uint64_t>(label_count) * 0x2545F4914F6CDD1Dull;
            values[k] += config_.noise_sigma * gaussian_from_key(key);
        }
    }
    return values;
}

ScoreResponse SyntheticBackend::score_impl(const ScoreRequest& request) {
    const auto [query_id, doc_id] =
        resolve_pair(request.prompt, request.continuations.size() == 1
                                         ? &request.continuations.front()
                                         : nullptr);
    ScoreResponse response;
    response.log_likelihoods =
        pair_log_likelihoods(query_id, doc_id, static_cast<int>(request.continuations.size()));
    return response;
}

std::string SyntheticBackend::generate_impl(const std::string& prompt) {
    if (!bound_scheme_) {
        throw BackendError("synthetic backend has no bound label scheme; generation unsupported");
    }
    const auto [query_id, doc_id] = resolve_pair(prompt, nullptr);
    const auto values =
        pair_log_likelihoods(query_id, doc_id, static_cast<int>(bound_scheme_->size()));
    const std::size_t best =
        std::distance(values.begin(), std::max_element(values.begin(), values.end()));
    return bound_scheme_->labels[best];
}

// ---------------------------------------------------------------------------
// Cache

CacheStore::CacheStore(std::string path) : path_(std::move(path)) {
    load();
}

void CacheStore::load() {
    if (path_.empty()) {
        return;
    }
    std::ifstream in(path_, std::ios::binary);
    if (!in) {
        return;  // nothing cached yet
    }
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        try {
            const auto record = nlohmann::json::parse(line);
            entries_[record.at("k").get<std::string>()] =
                record.at("v").get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
            if (!warned_) {
                std::fprintf(stderr, "warning: skipping corrupt cache line in %s\n",
                             path_.c_str());
                warned_ = true;
            }
        }
    }
}

std::optional<std::vector<double>> CacheStore::get(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void CacheStore::put(const std::string& key, const std::vector<double>& values) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!entries_.emplace(key, values).second) {
        return;
    }
    if (path_.empty()) {
        return;
    }
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) {
        if (!warned_) {
            std::fprintf(stderr, "warning: cannot append to cache file %s\n", path_.c_str());
            warned_ = true;
        }
        return;
    }
    nlohmann::json record;
    record["k"] = key;
    record["v"] = values;
    out << record.dump() << "\n";
}

std::size_t CacheStore::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
}

CachedBackend::CachedBackend(std::shared_ptr<Backend> inner, std::shared_ptr<CacheStore> store)
    : inner_(std::move(inner)), store_(std::move(store)) {
    if (!inner_ || !store_) {
        throw ValidationError("cached backend needs an inner backend and a store");
    }
}

std::string CachedBackend::cache_key(const std::string& identity, const ScoreRequest& request) {
    std::string joined;
    for (const auto& continuation : request.continuations) {
        joined += continuation;
        joined += '\x1f';
    }
    return sha256_hex(identity + '\0' + sha256_hex(request.prompt) + '\0' + sha256_hex(joined));
}

ScoreResponse CachedBackend::score_impl(const ScoreRequest& request) {
    const std::string key = cache_key(identity(), request);
    if (auto hit = store_->get(key)) {
        return {std::move(*hit)};
    }
    ScoreResponse response = inner_->score(request);
    store_->put(key, response.log_likelihoods);
    return response;
}

std::string CachedBackend::generate_impl(const std::string& prompt) {
    return inner_->generate(prompt);
}

// ---------------------------------------------------------------------------
// HTTP

HttpBackend::HttpBackend(Config config)
    : config_(std::move(config)), jitter_state_(config_.retry.jitter_seed) {
    if (config_.base_url.empty()) {
        throw ValidationError(
            "HTTP backend needs a base URL (config or GRADED_RANK_API_URL)");
    }
    const std::size_t scheme_end = config_.base_url.find("://");
    const std::size_t path_start =
        config_.base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) {
        host_ = config_.base_url;
    } else {
        host_ = config_.base_url.substr(0, path_start);
        path_prefix_ = config_.base_url.substr(path_start);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') {
            path_prefix_.pop_back();
        }
    }
}

HttpBackend::Config HttpBackend::with_env(Config config) {
    if (config.base_url.empty()) {
        if (const char* url = std::getenv("GRADED_RANK_API_URL")) {
            config.base_url = url;
        }
    }
    if (config.bearer_token.empty()) {
        if (const char* token = std::getenv("GRADED_RANK_API_TOKEN")) {
            config.bearer_token = token;
        }
    }
    return config;
}

std::string HttpBackend::identity() const {
    return "http:" + (config_.id.empty() ? config_.base_url : config_.id);
}

std::string HttpBackend::post_with_retry(const std::string& route, const std::string& body) {
    std::string last_error;
    for (int attempt = 0; attempt < config_.retry.max_attempts; ++attempt) {
        if (attempt > 0) {
            double jitter;
            {
                std::lock_guard<std::mutex> lock(jitter_mutex_);
                jitter = unit_interval(splitmix64(jitter_state_));
            }
            const double delay_ms = static_cast<double>(config_.retry.base_delay_ms) *
                                    std::pow(2.0, attempt - 1) * (0.5 + 0.5 * jitter);
            std::this_thread::sleep_for(
                std::chrono::milliseconds(static_cast<long>(delay_ms)));
        }

        httplib::Client client(host_);
        client.set_connection_timeout(config_.connect_timeout_s, 0);
        client.set_read_timeout(config_.read_timeout_s, 0);
        httplib::Headers headers;
        if (!config_.bearer_token.empty()) {
            headers.emplace("Authorization", "Bearer " + config_.bearer_token);
        }

        auto result = client.Post(path_prefix_ + route, headers, body, "application/json");
        if (!result) {
            last_error = "transport error: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status == 429 || result->status >= 500) {
            last_error = "HTTP " + std::to_string(result->status);
            continue;
        }
        if (result->status >= 400) {
            std::string detail = result->body;
            try {
                const auto parsed = nlohmann::json::parse(result->body);
                if (parsed.contains("error")) {
                    detail = parsed["error"].get<std::string>();
                }
            } catch (const nlohmann::json::exception&) {
            }
            throw BackendError("HTTP " + std::to_string(result->status) + " from " + route +
                               ": " + detail);
        }
        return result->body;
    }
    throw BackendError("request to " + route + " failed after " +
                           std::to_string(config_.retry.max_attempts) + " attempts (" +
                           last_error + ")",
                       /*retryable=*/true);
}

ScoreResponse HttpBackend::score_impl(const ScoreRequest& request) {
    nlohmann::json body;
    body["prompt"] = request.prompt;
    body["continuations"] = request.continuations;
    const std::string raw = post_with_retry("/v1/score", body.dump());

    try {
        const auto parsed = nlohmann::json::parse(raw);
        ScoreResponse response;
        response.log_likelihoods = parsed.at("log_likelihoods").get<std::vector<double>>();
        for (double value : response.log_likelihoods) {
            if (!std::isfinite(value)) {
                throw BackendError("score response contains a non-finite log-likelihood");
            }
        }
        return response;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed score response: ") + e.what());
    }
}

std::string HttpBackend::generate_impl(const std::string& prompt) {
    nlohmann::json body;
    body["prompt"] = prompt;
    body["max_tokens"] = config_.max_tokens;
    const std::string raw = post_with_retry("/v1/generate", body.dump());
    try {
        return nlohmann::json::parse(raw).at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed generate response: ") + e.what());
    }
}

}  // namespace gradedrank
