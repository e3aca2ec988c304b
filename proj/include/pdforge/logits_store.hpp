#pragma once

#include "pdforge/logits_codec.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

namespace pdforge {

// On-disk layout (all little-endian), normative:
//   <stem>.pdlg      magic "PDLG" | u32 format_version | u32 vocab_size |
//                    u32 chunk_len | f32 trunc_p | u32 trunc_k |
//                    f32 base_temperature | u64 sequence_count | records...
//   record           chunk_len x { u16 entry_count, entry_count x
//                    { u32 token_id, f32 prob } } | u32 crc32(record body)
//   <stem>.pdlg.idx  sequence_count x u64 byte offset of each record
struct ShardHeader {
    std::uint32_t format_version = 1;
    std::uint32_t vocab_size = 0;
    std::uint32_t chunk_len = 0;
    float trunc_p = 0.95f;
    std::uint32_t trunc_k = 100;
    float base_temperature = 1.0f;
    std::uint64_t sequence_count = 0;

    void validate() const;
};

inline constexpr std::size_t kShardHeaderBytes = 36;
inline constexpr char kShardMagic[4] = {'P', 'D', 'L', 'G'};

std::filesystem::path shard_index_path(const std::filesystem::path& shard_path);

// Streaming writer; single writer per shard. Records go out as they are
// appended; finalize() patches the header's sequence count and writes the
// sidecar index.
class ShardWriter {
public:
    ShardWriter(const std::filesystem::path& path, ShardHeader header);
    ~ShardWriter();

    ShardWriter(const ShardWriter&) = delete;
    ShardWriter& operator=(const ShardWriter&) = delete;

    // Returns the 0-based sequence number of the appended record.
    std::uint64_t append_sequence(const std::vector<SparseTeacherDistribution>& distributions);
    void finalize();

    const ShardHeader& header() const { return header_; }

private:
    std::filesystem::path path_;
    ShardHeader header_;
    std::ofstream out_;
    std::vector<std::uint64_t> offsets_;
    std::uint64_t next_offset_ = kShardHeaderBytes;
    bool finalized_ = false;
};

struct ShardStats {
    std::uint64_t sequence_count = 0;
    std::uint64_t total_tokens = 0;
    std::uint64_t total_entries = 0;
    double avg_kept_entries = 0.0;
    double bytes_per_token = 0.0;
};

// Random-access reader over a finalized shard. Uses pread internally, so one
// handle may serve any number of concurrent readers.
class ShardReader {
public:
    explicit ShardReader(const std::filesystem::path& path);
    ~ShardReader();

    ShardReader(const ShardReader&) = delete;
    ShardReader& operator=(const ShardReader&) = delete;

    const ShardHeader& header() const { return header_; }
    std::uint64_t sequence_count() const { return header_.sequence_count; }

    // CRC-verified decode; throws CorruptionError naming the sequence on any
    // mismatch, ValidationError on an out-of-range index.
    std::vector<SparseTeacherDistribution> read_sequence(std::uint64_t index) const;

    // Full scan with CRC verification of every record.
    ShardStats stats() const;

private:
    std::vector<std::uint8_t> record_bytes(std::uint64_t index) const;

    std::filesystem::path path_;
    ShardHeader header_;
    std::vector<std::uint64_t> offsets_;
    std::uint64_t file_size_ = 0;
    int fd_ = -1;
};

}  // namespace pdforge
