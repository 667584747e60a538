#include "personakit/providers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>

#include "personakit/error.hpp"
#include "personakit/text.hpp"

namespace personakit::providers {

std::string_view to_string(Role role) { return role == Role::user ? "user" : "assistant"; }

void ChatRequest::validate() const {
    if (messages.empty()) throw Error(ErrorCode::SchemaError, "chat request has no messages");
    if (messages.back().role != Role::user)
        throw Error(ErrorCode::SchemaError, "last chat message must come from the user");
    for (const auto& m : messages) {
        if (m.content.empty()) throw Error(ErrorCode::SchemaError, "chat message content is empty");
    }
    if (temperature < 0.0) throw Error(ErrorCode::SchemaError, "temperature must be >= 0");
}

std::string request_hash(const ChatRequest& req) {
    json msgs = json::array();
    for (const auto& m : req.messages) msgs.push_back({to_string(m.role), m.content});
    const json canonical{{"system", req.system ? json(*req.system) : json(nullptr)}, {"messages", msgs}};
    return sha256_hex(canonical.dump());
}

std::unique_ptr<MockChatProvider> MockChatProvider::from_fixture(const std::filesystem::path& path, std::string id) {
    auto mock = std::make_unique<MockChatProvider>(std::move(id));
    mock->load_fixture(path);
    return mock;
}

void MockChatProvider::load_fixture(const std::filesystem::path& path) {
    for (const auto& row : read_jsonl(path)) {
        if (!row.contains("request_hash") || !row.contains("response"))
            throw Error(ErrorCode::SchemaError, path.string() + ": fixture rows need request_hash and response");
        add(row["request_hash"].get<std::string>(), row["response"].get<std::string>());
    }
}

void MockChatProvider::add(std::string hash, std::string response) {
    std::lock_guard lock(mutex_);
    table_.insert_or_assign(std::move(hash), std::move(response));
}

std::size_t MockChatProvider::size() const {
    std::lock_guard lock(mutex_);
    return table_.size();
}

std::size_t MockChatProvider::served() const {
    std::lock_guard lock(mutex_);
    return served_;
}

std::string MockChatProvider::complete(const ChatRequest& req) {
    req.validate();
    const auto hash = request_hash(req);
    std::lock_guard lock(mutex_);
    const auto it = table_.find(hash);
    if (it == table_.end()) throw Error(ErrorCode::MockExhausted, fmt::format("no fixture entry for request {}", hash));
    ++served_;
    return it->second;
}

std::string FunctionChatProvider::complete(const ChatRequest& req) {
    req.validate();
    std::lock_guard lock(mutex_);
    return fn_(req);
}

std::chrono::milliseconds RetryPolicy::backoff_cap(int attempt) const {
    const auto scaled = base_delay.count() * (std::int64_t{1} << std::min(attempt - 1, 20));
    return std::chrono::milliseconds(std::min<std::int64_t>(scaled, max_delay.count()));
}

TokenBucket::TokenBucket(double requests_per_minute, double burst)
    : rate_per_sec_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, burst)),
      tokens_(capacity_),
      last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
    if (rate_per_sec_ <= 0.0) return;
    std::unique_lock lock(mutex_);
    for (;;) {
        const auto now = std::chrono::steady_clock::now();
        const std::chrono::duration<double> elapsed = now - last_;
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed.count() * rate_per_sec_);
        if (tokens_ >= 1.0) {
            tokens_ -= 1.0;
            return;
        }
        const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_per_sec_);
        lock.unlock();
        std::this_thread::sleep_for(wait);
        lock.lock();
    }
}

RemoteConfig parse_remote_config(const json& spec) {
    RemoteConfig cfg;
    try {
        cfg.url = spec.at("url").get<std::string>();
        cfg.model = spec.value("model", std::string{});
        cfg.api_key_env = spec.value("api_key_env", cfg.api_key_env);
        cfg.require_credential = spec.value("require_credential", true);
        cfg.timeout = std::chrono::milliseconds(spec.value("timeout_ms", std::int64_t{60000}));
        cfg.retry.max_attempts = spec.value("max_attempts", cfg.retry.max_attempts);
        cfg.retry.base_delay = std::chrono::milliseconds(spec.value("backoff_base_ms", std::int64_t{500}));
        cfg.retry.max_delay = std::chrono::milliseconds(spec.value("backoff_max_ms", std::int64_t{8000}));
        cfg.requests_per_minute = spec.value("requests_per_minute", cfg.requests_per_minute);
        cfg.max_in_flight = spec.value("max_in_flight", cfg.max_in_flight);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("remote provider config: {}", e.what()));
    }
    if (spec.contains("api_key"))
        throw Error(ErrorCode::ConfigError, "credentials are read from the environment, not from config files");
    if (cfg.retry.max_attempts < 1) throw Error(ErrorCode::ConfigError, "max_attempts must be >= 1");
    if (cfg.timeout.count() <= 0) throw Error(ErrorCode::ConfigError, "timeout_ms must be > 0");
    if (cfg.max_in_flight < 1 || cfg.max_in_flight > 1024)
        throw Error(ErrorCode::ConfigError, "max_in_flight must be in [1, 1024]");
    return cfg;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw Error(ErrorCode::DimMismatch, fmt::format("{} vs {}", a.dim(), b.dim()));
    double dot = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
    return std::clamp(dot, -1.0, 1.0);
}

HashingEmbedder::HashingEmbedder(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw Error(ErrorCode::ConfigError, "embedding dim must be > 0");
}

std::string HashingEmbedder::id() const { return fmt::format("hashing-3gram-{}", dim_); }

EmbeddingVector HashingEmbedder::embed_one(std::string_view input) const {
    if (input.empty()) throw Error(ErrorCode::EmptyText, "cannot embed an empty string");
    const auto cps = text::decode_utf8(text::to_lower_ascii(input));
    std::vector<double> counts(dim_, 0.0);
    auto add_gram = [&](std::size_t begin, std::size_t end) {
        std::string gram;
        for (std::size_t i = begin; i < end; ++i) text::append_utf8(gram, cps[i]);
        counts[fnv1a64(gram) % dim_] += 1.0;
    };
    if (cps.size() < 3) {
        add_gram(0, cps.size());
    } else {
        for (std::size_t i = 0; i + 3 <= cps.size(); ++i) add_gram(i, i + 3);
    }
    double norm = 0.0;
    for (const double c : counts) norm += c * c;
    norm = std::sqrt(norm);
    for (auto& c : counts) c /= norm;
    return {std::move(counts), id()};
}

std::vector<EmbeddingVector> HashingEmbedder::embed(std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

std::unique_ptr<ChatProvider> make_chat_provider(const json& spec, const std::filesystem::path& base_dir) {
    const auto kind = spec.value("kind", std::string{});
    if (kind == "mock") {
        if (!spec.contains("fixture")) throw Error(ErrorCode::ConfigError, "mock chat provider needs 'fixture'");
        auto path = std::filesystem::path(spec["fixture"].get<std::string>());
        if (path.is_relative()) path = base_dir / path;
        return MockChatProvider::from_fixture(path, spec.value("id", std::string{"mock"}));
    }
    if (kind == "scripted") {
        const auto replies = spec.value("replies", std::vector<std::string>{});
        if (replies.empty()) throw Error(ErrorCode::ConfigError, "scripted chat provider needs non-empty 'replies'");
        return std::make_unique<FunctionChatProvider>(spec.value("id", std::string{"scripted"}), [replies](const ChatRequest& req) {
            const auto turn = std::count_if(req.messages.begin(), req.messages.end(),
                                            [](const Message& m) { return m.role == Role::assistant; });
            return replies[static_cast<std::size_t>(turn) % replies.size()];
        });
    }
    if (kind == "remote") return std::make_unique<RemoteChatProvider>(parse_remote_config(spec));
    throw Error(ErrorCode::ConfigError, fmt::format("unknown chat provider kind '{}'", kind));
}

std::unique_ptr<Embedder> make_embedder(const json& spec) {
    const auto kind = spec.value("kind", std::string{"hashing"});
    if (kind == "hashing") return std::make_unique<HashingEmbedder>(spec.value("dim", kDefaultEmbeddingDim));
    if (kind == "remote") return std::make_unique<RemoteEmbedder>(parse_remote_config(spec));
    throw Error(ErrorCode::ConfigError, fmt::format("unknown embedding provider kind '{}'", kind));
}

std::vector<EmbeddingVector> embed_all(Embedder& embedder, std::span<const std::string> texts, std::size_t jobs,
                                       std::size_t batch) {
    std::vector<EmbeddingVector> out(texts.size());
    const std::size_t batches = (texts.size() + batch - 1) / batch;
    parallel_for(batches, jobs, [&](std::size_t b) {
        const auto begin = b * batch;
        const auto end = std::min(texts.size(), begin + batch);
        auto vecs = embedder.embed(texts.subspan(begin, end - begin));
        if (vecs.size() != end - begin)
            throw Error(ErrorCode::ProviderUnavailable, "embedder returned the wrong number of vectors");
        for (std::size_t i = begin; i < end; ++i) out[i] = std::move(vecs[i - begin]);
    });
    return out;
}

}  // namespace personakit::providers
