#include <cmath>
#include <cstdlib>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "personakit/error.hpp"
#include "personakit/providers.hpp"

namespace personakit::providers {

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, fmt::format("bad url '{}'", url));
    const auto path_begin = url.find('/', scheme_end + 3);
    if (path_begin == std::string::npos) return {url, "/"};
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

std::string read_credential(const RemoteConfig& cfg) {
    if (cfg.api_key_env.empty()) return {};
    const char* value = std::getenv(cfg.api_key_env.c_str());
    return value ? std::string(value) : std::string{};
}

bool retryable(int status) { return status == 429 || status >= 500; }

std::chrono::milliseconds jittered(std::chrono::milliseconds cap) {
    static std::mutex mutex;
    static std::mt19937_64 rng{std::random_device{}()};
    if (cap.count() <= 0) return cap;
    std::lock_guard lock(mutex);
    // Equal jitter: half fixed, half random.
    const auto half = cap.count() / 2;
    std::uniform_int_distribution<std::int64_t> dist(0, cap.count() - half);
    return std::chrono::milliseconds(half + dist(rng));
}

// POSTs `body` with retries; returns the parsed JSON response body.
json post_with_retry(const RemoteConfig& cfg, const std::string& api_key, TokenBucket& bucket, const json& body) {
    const auto ep = split_url(cfg.url);
    const auto payload = body.dump();
    std::string last_error;
    for (int attempt = 1; attempt <= cfg.retry.max_attempts; ++attempt) {
        bucket.acquire();
        httplib::Client client(ep.origin);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

        const auto res = client.Post(ep.path, headers, payload, "application/json");
        if (res && res->status == 200) {
            try {
                return json::parse(res->body);
            } catch (const json::parse_error& e) {
                throw Error(ErrorCode::ProviderUnavailable, fmt::format("malformed response body: {}", e.what()));
            }
        }
        if (!res) {
            last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
        } else {
            last_error = fmt::format("HTTP {}", res->status);
            if (!retryable(res->status)) break;
        }
        if (attempt < cfg.retry.max_attempts) {
            spdlog::warn("{} {} (attempt {}/{}), retrying", cfg.url, last_error, attempt, cfg.retry.max_attempts);
            std::this_thread::sleep_for(jittered(cfg.retry.backoff_cap(attempt)));
        }
    }
    throw Error(ErrorCode::ProviderUnavailable, fmt::format("{}: {}", cfg.url, last_error));
}

}  // namespace

RemoteChatProvider::RemoteChatProvider(RemoteConfig config)
    : config_(std::move(config)),
      api_key_(read_credential(config_)),
      bucket_(config_.requests_per_minute),
      in_flight_(static_cast<std::ptrdiff_t>(config_.max_in_flight)) {
    if (config_.require_credential && api_key_.empty())
        throw Error(ErrorCode::CredentialMissing, fmt::format("environment variable {} is not set", config_.api_key_env));
}

bool RemoteChatProvider::available() const { return !config_.require_credential || !api_key_.empty(); }

std::string RemoteChatProvider::complete(const ChatRequest& req) {
    req.validate();
    if (!available()) throw Error(ErrorCode::CredentialMissing, config_.api_key_env);

    json messages = json::array();
    if (req.system) messages.push_back({{"role", "system"}, {"content", *req.system}});
    for (const auto& m : req.messages) messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    const json body{{"model", config_.model},
                    {"messages", messages},
                    {"temperature", req.temperature},
                    {"max_tokens", req.max_output_tokens}};

    in_flight_.acquire();
    json res;
    try {
        res = post_with_retry(config_, api_key_, bucket_, body);
    } catch (...) {
        in_flight_.release();
        throw;
    }
    in_flight_.release();

    try {
        return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ProviderUnavailable, fmt::format("unexpected chat response shape: {}", e.what()));
    }
}

RemoteEmbedder::RemoteEmbedder(RemoteConfig config)
    : config_(std::move(config)), api_key_(read_credential(config_)), bucket_(config_.requests_per_minute) {
    if (config_.require_credential && api_key_.empty())
        throw Error(ErrorCode::CredentialMissing, fmt::format("environment variable {} is not set", config_.api_key_env));
}

std::vector<EmbeddingVector> RemoteEmbedder::embed(std::span<const std::string> texts) {
    for (const auto& t : texts) {
        if (t.empty()) throw Error(ErrorCode::EmptyText, "cannot embed an empty string");
    }
    const json body{{"model", config_.model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    const auto res = post_with_retry(config_, api_key_, bucket_, body);

    std::vector<EmbeddingVector> out(texts.size());
    try {
        const auto& data = res.at("data");
        if (data.size() != texts.size())
            throw Error(ErrorCode::ProviderUnavailable, "embedding count does not match input count");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto index = data[i].value("index", i);
            auto values = data[i].at("embedding").get<std::vector<double>>();
            double norm = 0.0;
            for (const double v : values) norm += v * v;
            norm = std::sqrt(norm);
            if (norm == 0.0) throw Error(ErrorCode::ProviderUnavailable, "zero embedding vector");
            for (auto& v : values) v /= norm;
            out.at(index) = {std::move(values), id()};
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ProviderUnavailable, fmt::format("unexpected embedding response shape: {}", e.what()));
    }
    return out;
}

}  // namespace personakit::providers
