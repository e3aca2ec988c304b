#include "pdforge/logits_store.hpp"

#include "pdforge/binary_io.hpp"
#include "pdforge/common.hpp"

#include <zlib.h>

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <string>

namespace pdforge {

namespace {

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
    return static_cast<std::uint32_t>(
        ::crc32(0ul, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

std::string seq_label(std::uint64_t index) {
    return "sequence " + std::to_string(index);
}

}  // namespace

void ShardHeader::validate() const {
    if (format_version != 1) throw ValidationError("unsupported shard format version");
    if (chunk_len < 1) throw ValidationError("shard chunk_len must be >= 1");
    if (vocab_size < 1) throw ValidationError("shard vocab_size must be >= 1");
    TruncationSpec{trunc_p, trunc_k}.validate();
    if (!(base_temperature > 0.0f))
        throw ValidationError("shard base_temperature must be positive");
}

std::filesystem::path shard_index_path(const std::filesystem::path& shard_path) {
    std::filesystem::path p = shard_path;
    p += ".idx";
    return p;
}

ShardWriter::ShardWriter(const std::filesystem::path& path, ShardHeader header)
    : path_(path), header_(header) {
    header_.validate();
    header_.sequence_count = 0;
    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw StorageError("cannot open shard for writing: " + path_.string());
    ByteWriter w;
    w.put_bytes(kShardMagic, 4);
    w.put<std::uint32_t>(header_.format_version);
    w.put<std::uint32_t>(header_.vocab_size);
    w.put<std::uint32_t>(header_.chunk_len);
    w.put<float>(header_.trunc_p);
    w.put<std::uint32_t>(header_.trunc_k);
    w.put<float>(header_.base_temperature);
    w.put<std::uint64_t>(header_.sequence_count);
    out_.write(reinterpret_cast<const char*>(w.bytes().data()),
               static_cast<std::streamsize>(w.size()));
    if (!out_) throw StorageError("failed writing shard header: " + path_.string());
}

ShardWriter::~ShardWriter() {
    try {
        if (!finalized_) finalize();
    } catch (...) {
        // Destructor must not throw; an unfinalized shard is unreadable anyway.
    }
}

std::uint64_t ShardWriter::append_sequence(
    const std::vector<SparseTeacherDistribution>& distributions) {
    if (finalized_) throw ValidationError("append_sequence on a finalized shard");
    if (distributions.size() != header_.chunk_len)
        throw ValidationError("append_sequence expects exactly chunk_len distributions");
    ByteWriter w;
    for (const auto& dist : distributions) {
        dist.validate(header_.vocab_size);
        if (dist.size() > header_.trunc_k)
            throw ValidationError("distribution keeps more entries than the shard trunc_k");
        if (dist.size() > 0xFFFF)
            throw ValidationError("distribution entry count exceeds the 16-bit record field");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(dist.size()));
        for (std::size_t i = 0; i < dist.size(); ++i) {
            const float stored = static_cast<float>(dist.probs[i]);
            if (!(stored > 0.0f))
                throw ValidationError("probability underflows 32-bit shard storage");
            w.put<std::uint32_t>(dist.kept_ids[i]);
            w.put<float>(stored);
        }
    }
    const std::uint32_t crc = crc32_of(w.bytes().data(), w.size());
    w.put<std::uint32_t>(crc);
    out_.write(reinterpret_cast<const char*>(w.bytes().data()),
               static_cast<std::streamsize>(w.size()));
    if (!out_) throw StorageError("failed writing shard record: " + path_.string());
    offsets_.push_back(next_offset_);
    next_offset_ += w.size();
    return header_.sequence_count++;
}

void ShardWriter::finalize() {
    if (finalized_) return;
    finalized_ = true;
    // Patch the sequence count in place; records themselves streamed out.
    out_.seekp(28);
    const std::uint64_t count = header_.sequence_count;
    out_.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out_.flush();
    if (!out_) throw StorageError("failed finalizing shard: " + path_.string());
    out_.close();

    std::ofstream idx(shard_index_path(path_), std::ios::binary | std::ios::trunc);
    if (!idx) throw StorageError("cannot open shard index for writing: " + path_.string());
    idx.write(reinterpret_cast<const char*>(offsets_.data()),
              static_cast<std::streamsize>(offsets_.size() * sizeof(std::uint64_t)));
    idx.flush();
    if (!idx) throw StorageError("failed writing shard index: " + path_.string());
}

ShardReader::ShardReader(const std::filesystem::path& path) : path_(path) {
    fd_ = ::open(path_.c_str(), O_RDONLY);
    if (fd_ < 0) throw StorageError("cannot open shard: " + path_.string());

    std::uint8_t head[kShardHeaderBytes];
    const ssize_t got = ::pread(fd_, head, sizeof(head), 0);
    if (got != static_cast<ssize_t>(sizeof(head))) {
        ::close(fd_);
        fd_ = -1;
        throw CorruptionError("shard too short for header: " + path_.string());
    }
    if (std::memcmp(head, kShardMagic, 4) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw CorruptionError("bad shard magic: " + path_.string());
    }
    ByteReader r(head + 4, sizeof(head) - 4);
    r.get(header_.format_version);
    r.get(header_.vocab_size);
    r.get(header_.chunk_len);
    r.get(header_.trunc_p);
    r.get(header_.trunc_k);
    r.get(header_.base_temperature);
    r.get(header_.sequence_count);
    try {
        header_.validate();
    } catch (const ValidationError& e) {
        ::close(fd_);
        fd_ = -1;
        throw CorruptionError(std::string("invalid shard header: ") + e.what());
    }

    file_size_ = std::filesystem::file_size(path_);

    const auto idx_path = shard_index_path(path_);
    std::ifstream idx(idx_path, std::ios::binary);
    if (!idx) {
        ::close(fd_);
        fd_ = -1;
        throw StorageError("cannot open shard index: " + idx_path.string());
    }
    const auto idx_size = std::filesystem::file_size(idx_path);
    if (idx_size % sizeof(std::uint64_t) != 0 ||
        idx_size / sizeof(std::uint64_t) != header_.sequence_count) {
        ::close(fd_);
        fd_ = -1;
        throw CorruptionError("shard index length does not match header sequence count");
    }
    offsets_.resize(header_.sequence_count);
    idx.read(reinterpret_cast<char*>(offsets_.data()), static_cast<std::streamsize>(idx_size));
    if (!idx) {
        ::close(fd_);
        fd_ = -1;
        throw StorageError("failed reading shard index: " + idx_path.string());
    }
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < offsets_.size(); ++i) {
        const bool ok = i == 0 ? offsets_[i] == kShardHeaderBytes
                               : offsets_[i] > prev;
        if (!ok || offsets_[i] >= file_size_) {
            ::close(fd_);
            fd_ = -1;
            throw CorruptionError("shard index offsets are not monotone record starts");
        }
        prev = offsets_[i];
    }
}

ShardReader::~ShardReader() {
    if (fd_ >= 0) ::close(fd_);
}

std::vector<std::uint8_t> ShardReader::record_bytes(std::uint64_t index) const {
    if (index >= header_.sequence_count)
        throw ValidationError("shard sequence index out of range: " + seq_label(index));
    const std::uint64_t begin = offsets_[index];
    const std::uint64_t end =
        index + 1 < header_.sequence_count ? offsets_[index + 1] : file_size_;
    if (end <= begin) throw CorruptionError("empty shard record at " + seq_label(index));
    std::vector<std::uint8_t> buf(end - begin);
    std::size_t done = 0;
    while (done < buf.size()) {
        const ssize_t got = ::pread(fd_, buf.data() + done, buf.size() - done,
                                    static_cast<off_t>(begin + done));
        if (got <= 0) throw StorageError("shard read failed at " + seq_label(index));
        done += static_cast<std::size_t>(got);
    }
    return buf;
}

std::vector<SparseTeacherDistribution> ShardReader::read_sequence(std::uint64_t index) const {
    const auto buf = record_bytes(index);
    if (buf.size() < sizeof(std::uint32_t))
        throw CorruptionError("truncated shard record at " + seq_label(index));
    const std::size_t body_size = buf.size() - sizeof(std::uint32_t);
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, buf.data() + body_size, sizeof(stored_crc));
    if (crc32_of(buf.data(), body_size) != stored_crc)
        throw CorruptionError("crc mismatch in shard record at " + seq_label(index));

    ByteReader r(buf.data(), body_size);
    std::vector<SparseTeacherDistribution> out(header_.chunk_len);
    for (std::uint32_t pos = 0; pos < header_.chunk_len; ++pos) {
        std::uint16_t count = 0;
        if (!r.get(count) || count < 1)
            throw CorruptionError("bad entry count in shard record at " + seq_label(index));
        auto& dist = out[pos];
        dist.kept_ids.resize(count);
        dist.probs.resize(count);
        double sum = 0.0;
        std::uint32_t prev_id = 0;
        for (std::uint16_t i = 0; i < count; ++i) {
            std::uint32_t id = 0;
            float prob = 0.0f;
            if (!r.get(id) || !r.get(prob))
                throw CorruptionError("truncated shard record at " + seq_label(index));
            if (id >= header_.vocab_size || (i > 0 && id <= prev_id))
                throw CorruptionError("non-increasing or out-of-range token id at " +
                                      seq_label(index));
            if (!(prob > 0.0f) || !std::isfinite(prob))
                throw CorruptionError("non-positive stored probability at " + seq_label(index));
            prev_id = id;
            dist.kept_ids[i] = id;
            dist.probs[i] = static_cast<double>(prob);
            sum += static_cast<double>(prob);
        }
        if (std::abs(sum - 1.0) > 1e-4)
            throw CorruptionError("stored probabilities do not sum to 1 at " + seq_label(index));
    }
    if (r.remaining() != 0)
        throw CorruptionError("trailing bytes in shard record at " + seq_label(index));
    return out;
}

ShardStats ShardReader::stats() const {
    ShardStats s;
    s.sequence_count = header_.sequence_count;
    for (std::uint64_t i = 0; i < header_.sequence_count; ++i) {
        const auto dists = read_sequence(i);
        for (const auto& d : dists) s.total_entries += d.size();
        s.total_tokens += header_.chunk_len;
    }
    if (s.total_tokens > 0) {
        s.avg_kept_entries =
            static_cast<double>(s.total_entries) / static_cast<double>(s.total_tokens);
        s.bytes_per_token = static_cast<double>(file_size_ - kShardHeaderBytes) /
                            static_cast<double>(s.total_tokens);
    }
    return s;
}

}  // namespace pdforge
