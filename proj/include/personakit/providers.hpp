#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "personakit/util.hpp"

namespace personakit::providers {

enum class Role { user, assistant };

struct Message {
    Role role = Role::user;
    std::string content;
};

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kJudgeTemperature = 0.0;

struct ChatRequest {
    std::optional<std::string> system;
    std::vector<Message> messages;
    double temperature = kGenerationTemperature;
    int max_output_tokens = 1024;

    // Throws SchemaError unless the last message is from the user and no content is empty.
    void validate() const;
};

std::string_view to_string(Role role);

// Stable hash over (system, messages); sampling parameters do not participate.
std::string request_hash(const ChatRequest& req);

class ChatProvider {
public:
    virtual ~ChatProvider() = default;
    virtual std::string complete(const ChatRequest& req) = 0;
    virtual std::string id() const = 0;
    // False when the provider cannot possibly serve a request (e.g. no credential).
    virtual bool available() const { return true; }
};

// Lookup table keyed by request_hash, loaded from {request_hash, response} JSON lines.
// Unmatched requests raise MockExhausted.
class MockChatProvider final : public ChatProvider {
public:
    explicit MockChatProvider(std::string id = "mock") : id_(std::move(id)) {}
    static std::unique_ptr<MockChatProvider> from_fixture(const std::filesystem::path& path,
                                                          std::string id = "mock");
    void load_fixture(const std::filesystem::path& path);

    void add(std::string request_hash, std::string response);
    std::size_t size() const;
    std::size_t served() const;

    std::string complete(const ChatRequest& req) override;
    std::string id() const override { return id_; }

private:
    std::string id_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::string> table_;
    std::size_t served_ = 0;
};

// Wraps a callable; used for scripted endpoints and in-process bridges.
class FunctionChatProvider final : public ChatProvider {
public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    FunctionChatProvider(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    std::string complete(const ChatRequest& req) override;
    std::string id() const override { return id_; }

private:
    std::string id_;
    std::mutex mutex_;
    Fn fn_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{500};
    std::chrono::milliseconds max_delay{8000};

    // Upper bound of the jittered sleep before retry number `attempt` (1-based).
    std::chrono::milliseconds backoff_cap(int attempt) const;
};

class TokenBucket {
public:
    // requests_per_minute <= 0 disables limiting.
    explicit TokenBucket(double requests_per_minute, double burst = 1.0);
    void acquire();

private:
    std::mutex mutex_;
    double rate_per_sec_;
    double capacity_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
};

struct RemoteConfig {
    std::string url;  // full endpoint URL, e.g. https://host/v1/chat/completions
    std::string model;
    std::string api_key_env = "OPENAI_API_KEY";
    bool require_credential = true;
    std::chrono::milliseconds timeout{60000};
    RetryPolicy retry;
    double requests_per_minute = 60.0;
    std::size_t max_in_flight = 4;
};

// Reads RemoteConfig fields from a provider JSON block. Credentials are
// never read from config, only the name of the environment variable.
RemoteConfig parse_remote_config(const json& spec);

// HTTP+JSON chat-completion client with retry on transport/5xx/429 failures.
class RemoteChatProvider final : public ChatProvider {
public:
    explicit RemoteChatProvider(RemoteConfig config);

    std::string complete(const ChatRequest& req) override;
    std::string id() const override { return "remote:" + config_.model; }
    bool available() const override;

private:
    RemoteConfig config_;
    std::string api_key_;
    TokenBucket bucket_;
    std::counting_semaphore<1024> in_flight_;
};

struct EmbeddingVector {
    std::vector<double> values;
    std::string provider_id;

    std::size_t dim() const { return values.size(); }
};

// Dot product of unit vectors, clamped to [-1, 1]. Throws DimMismatch.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
    virtual std::string id() const = 0;
};

inline constexpr std::size_t kDefaultEmbeddingDim = 768;

// Offline fallback: ASCII-lowercased text, character (code point) 3-grams
// hashed with FNV-1a 64 into `dim` buckets, counts L2-normalized. Texts
// shorter than three code points form a single gram.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dim = kDefaultEmbeddingDim);

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
    EmbeddingVector embed_one(std::string_view text) const;
    std::string id() const override;

private:
    std::size_t dim_;
};

class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(RemoteConfig config);

    std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;
    std::string id() const override { return "remote:" + config_.model; }

private:
    RemoteConfig config_;
    std::string api_key_;
    TokenBucket bucket_;
};

// Factories over {"kind": "mock"|"scripted"|"remote", ...} and {"kind": "hashing"|"remote", ...}.
// "scripted" answers replies[k % n], k = assistant messages already in the request.
std::unique_ptr<ChatProvider> make_chat_provider(const json& spec, const std::filesystem::path& base_dir);
std::unique_ptr<Embedder> make_embedder(const json& spec);

// Embeds in fixed-size batches, in parallel, preserving order.
std::vector<EmbeddingVector> embed_all(Embedder& embedder, std::span<const std::string> texts,
                                       std::size_t jobs = 1, std::size_t batch = 64);

}  // namespace personakit::providers
