#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace capval::retrieval {

inline constexpr const char* kIndexFormat = "capval-index/1";

struct ChunkConfig {
    std::size_t target_chars = 1024;
    std::size_t min_chars = 200;
    std::size_t max_chars = 2000;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct IndexConfig {
    ChunkConfig chunking;
    Bm25Params bm25;
};

// Throws ConfigError unless 0 < min <= target <= max and min + target <= max.
void validate(const ChunkConfig& config);

struct CorpusPassage {
    std::string passage_id;
    std::string shard;
    std::string document_id;
    std::string text;
    std::size_t start = 0; // byte offsets into the source document
    std::size_t end = 0;
};

struct ScoredPassage {
    CorpusPassage passage;
    double score = 0.0;
};

// Ranked evidence for one query. Hits are ordered by score descending, ties
// broken by passage_id ascending, and carry no duplicate passage ids.
struct EvidenceSet {
    std::string query;
    std::vector<ScoredPassage> hits;
};

// Lowercased word tokens. Letters, digits and any non-punctuation code point
// above U+007F are word characters; CJK ideographs become one token each; an
// apostrophe between letters and a '.' or ',' between digits stay inside the
// word.
std::vector<std::string> tokenize(std::string_view text);

// Splits a document into passage spans (byte offsets, whitespace-trimmed) at
// sentence boundaries. Fragments shorter than min_chars that cannot be merged
// into a neighbour are dropped.
std::vector<std::pair<std::size_t, std::size_t>> chunk_document(std::string_view document, const ChunkConfig& config,
                                                                std::size_t* dropped_short = nullptr);

struct IndexStats {
    std::size_t documents = 0;
    std::size_t passages = 0;
    std::size_t terms = 0;
    std::size_t dropped_duplicates = 0;
    std::size_t dropped_short = 0;
    double avg_passage_tokens = 0.0;
};

// Write-once inverted index over passages. Concurrent const access is safe.
class Index {
public:
    // Shards are plain-text files (one document each) or .jsonl files whose
    // lines carry a "text" field.
    static Index build(std::span<const std::string> shard_paths, const IndexConfig& config = {});
    static Index load(const std::string& directory);

    // Writes manifest.json, postings.bin and passages.jsonl into `directory`.
    void save(const std::string& directory) const;

    EvidenceSet retrieve(std::string_view query, std::size_t k) const;

    const IndexStats& stats() const noexcept { return stats_; }
    const IndexConfig& config() const noexcept { return config_; }
    const std::vector<CorpusPassage>& passages() const noexcept { return passages_; }
    const std::string& manifest_json() const noexcept { return manifest_; }
    std::string manifest_checksum() const;

private:
    struct Posting {
        std::uint32_t passage = 0;
        std::uint32_t tf = 0;
    };
    struct ShardInfo {
        std::string name;
        std::string sha256;
        std::size_t bytes = 0;
    };

    Index() = default;
    void finalize();
    std::string serialize_postings() const;
    std::string serialize_passages() const;
    std::string make_manifest(const std::string& postings_sha, const std::string& passages_sha) const;

    IndexConfig config_;
    IndexStats stats_;
    std::vector<ShardInfo> shards_;
    std::vector<CorpusPassage> passages_;
    std::vector<std::uint32_t> lengths_;
    std::vector<std::string> terms_; // sorted
    std::vector<std::vector<Posting>> postings_;
    std::unordered_map<std::string, std::uint32_t> term_ids_;
    std::string manifest_;
};

inline Index build_index(std::span<const std::string> shard_paths, const IndexConfig& config = {}) {
    return Index::build(shard_paths, config);
}

inline EvidenceSet retrieve(const Index& index, std::string_view query, std::size_t k) {
    return index.retrieve(query, k);
}

} // namespace capval::retrieval
