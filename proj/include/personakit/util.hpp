#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace personakit {

using json = nlohmann::json;

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data);

// Seeded generator whose outputs depend only on the seed (no
// implementation-defined distributions), so shuffles and samples are
// reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    // Uniform in [0, n), n > 0.
    std::size_t index(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// Derives an independent stream seed for a named purpose.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

// JSON-lines I/O. Readers report the 1-based line number on parse failure.
std::vector<json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(std::span<const json> rows);
json read_json(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes through a temporary file in the same directory, then renames.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first exception
// thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace personakit
