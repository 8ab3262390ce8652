#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradedrank/core.hpp"

namespace gradedrank {

/// Backend failure. Retryable errors (transport, 429/5xx) are re-attempted
/// under the retry policy; fatal ones (protocol violations, 4xx, missing
/// fixture entries) abort the request.
struct BackendError : std::runtime_error {
    explicit BackendError(const std::string& what, bool retryable_ = false)
        : std::runtime_error(what), retryable(retryable_) {}
    bool retryable;
};

struct ScoreRequest {
    std::string prompt;
    std::vector<std::string> continuations;
};

struct ScoreResponse {
    std::vector<double> log_likelihoods;  // aligned with request continuations
};

std::string sha256_hex(const std::string& data);

/// Source of log-likelihoods and generated text. Implementations must
/// tolerate concurrent score calls.
class Backend {
  public:
    virtual ~Backend() = default;

    ScoreResponse score(const ScoreRequest& request);
    std::string generate(const std::string& prompt);

    virtual std::string identity() const = 0;

    std::uint64_t score_calls() const { return score_calls_.load(); }
    std::uint64_t generate_calls() const { return generate_calls_.load(); }

  protected:
    Backend() = default;
    Backend(const Backend& other)
        : score_calls_(other.score_calls_.load()), generate_calls_(other.generate_calls_.load()) {}
    Backend& operator=(const Backend& other) {
        score_calls_ = other.score_calls_.load();
        generate_calls_ = other.generate_calls_.load();
        return *this;
    }

    virtual ScoreResponse score_impl(const ScoreRequest& request) = 0;
    virtual std::string generate_impl(const std::string& prompt) = 0;

  private:
    std::atomic<std::uint64_t> score_calls_{0};
    std::atomic<std::uint64_t> generate_calls_{0};
};

void validate_request(const ScoreRequest& request);

/// Fixture-driven mock. The fixture is a JSON object mapping
/// "sha256(prompt)\n<continuation>" to a log-likelihood, with a sidecar
/// JSON file of raw prompts next to it for debuggability.
class TableMockBackend : public Backend {
  public:
    TableMockBackend() = default;

    void add(const std::string& prompt, const std::string& continuation, double log_likelihood);

    void save_fixture(const std::string& path) const;
    static TableMockBackend from_fixture(const std::string& path);

    std::string identity() const override { return "table:" + fixture_id_; }

  protected:
    ScoreResponse score_impl(const ScoreRequest& request) override;
    std::string generate_impl(const std::string& prompt) override;

  private:
    std::unordered_map<std::string, double> scores_;  // key = hash + "\n" + continuation
    std::unordered_map<std::string, std::vector<std::pair<std::string, double>>> by_prompt_;
    std::unordered_map<std::string, std::string> prompts_;  // hash -> raw prompt
    std::string fixture_id_ = "inline";
};

/// Deterministic synthetic model: every (query, document) pair draws its
/// label log-likelihoods from a per-grade calibration vector plus seeded
/// Gaussian noise. Noise is keyed by (seed, query id, doc id, label), so
/// responses do not depend on request order or concurrency schedule.
class SyntheticBackend : public Backend {
  public:
    struct Config {
        Qrels planted_qrels;
        // label count -> grade -> mean log-likelihood per label. Keying by
        // label count lets one backend serve rosters that mix schemes.
        std::map<int, std::map<int, std::vector<double>>> calibrations;
        double noise_sigma = 0.0;
        std::uint64_t seed = 0;
    };

    explicit SyntheticBackend(Config config);

    /// Registers the texts the pipeline will render into prompts, so the
    /// backend can map a prompt back to its (query, document) pair.
    void register_dataset(const std::vector<Query>& queries,
                          const std::vector<Document>& corpus);

    /// Binds the label texts used by generate(); the table for the
    /// scheme's label count must exist.
    void bind_scheme(const LabelScheme& scheme);

    std::string identity() const override;

    /// Exposed for tests: the exact noisy vector for a known pair.
    std::vector<double> pair_log_likelihoods(const std::string& query_id,
                                             const std::string& doc_id, int label_count) const;

  protected:
    ScoreResponse score_impl(const ScoreRequest& request) override;
    std::string generate_impl(const std::string& prompt) override;

  private:
    std::pair<std::string, std::string> resolve_pair(const std::string& prompt,
                                                     const std::string* continuation) const;

    Config config_;
    std::unordered_map<std::string, std::string> query_text_to_id_;
    std::unordered_map<std::string, std::string> doc_text_to_id_;
    std::vector<std::pair<std::string, std::string>> doc_texts_;  // (text, id), for prefix lookup
    std::optional<LabelScheme> bound_scheme_;
};

/// Append-only key-value store for cached score responses. A missing or
/// unwritable file degrades to in-memory caching with a warning.
class CacheStore {
  public:
    CacheStore() = default;
    explicit CacheStore(std::string path);

    std::optional<std::vector<double>> get(const std::string& key) const;
    void put(const std::string& key, const std::vector<double>& values);

    std::size_t size() const;

  private:
    void load();

    std::string path_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::vector<double>> entries_;
    bool warned_ = false;
};

/// Wraps a backend with a response cache. Keys combine the backend
/// identity with hashes of the prompt and the ordered continuation list;
/// values are raw log-likelihoods, never derived scores.
class CachedBackend : public Backend {
  public:
    CachedBackend(std::shared_ptr<Backend> inner, std::shared_ptr<CacheStore> store);

    std::string identity() const override { return inner_->identity(); }
    Backend& inner() { return *inner_; }

    static std::string cache_key(const std::string& identity, const ScoreRequest& request);

  protected:
    ScoreResponse score_impl(const ScoreRequest& request) override;
    std::string generate_impl(const std::string& prompt) override;

  private:
    std::shared_ptr<Backend> inner_;
    std::shared_ptr<CacheStore> store_;
};

struct RetryPolicy {
    int max_attempts = 5;
    int base_delay_ms = 1000;  // attempt n waits base * 2^n, jittered
    std::uint64_t jitter_seed = 0;
};

/// Client for the scoring wire protocol:
///   POST {base}/v1/score    {"prompt": str, "continuations": [str]}
///                           -> {"log_likelihoods": [number]}
///   POST {base}/v1/generate {"prompt": str, "max_tokens": int}
///                           -> {"text": str}
/// 4xx responses are fatal; 429/5xx and transport errors are retried.
class HttpBackend : public Backend {
  public:
    struct Config {
        std::string base_url;
        std::string bearer_token;
        int max_tokens = 32;
        int connect_timeout_s = 5;
        int read_timeout_s = 120;
        RetryPolicy retry;
        std::string id;  // identity override, defaults to the base URL
    };

    explicit HttpBackend(Config config);

    /// Fills unset fields from GRADED_RANK_API_URL / GRADED_RANK_API_TOKEN.
    static Config with_env(Config config);

    std::string identity() const override;

  protected:
    ScoreResponse score_impl(const ScoreRequest& request) override;
    std::string generate_impl(const std::string& prompt) override;

  private:
    std::string post_with_retry(const std::string& route, const std::string& body);

    Config config_;
    std::string host_;  // scheme://host:port
    std::string path_prefix_;
    mutable std::mutex jitter_mutex_;
    std::uint64_t jitter_state_;
};

}  // namespace gradedrank
