#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pdforge {

// Exit-code contract: validation errors map to exit 1, storage/corruption
// errors to exit 2 (see cli::dispatch).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StorageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorruptionError : StorageError {
    using StorageError::StorageError;
};

// FNV-1a over a byte string; used for content-derived config hashes.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v);

// Worker count: min(hardware, PDFORGE_THREADS) with a floor of 1.
unsigned worker_count();

}  // namespace pdforge
