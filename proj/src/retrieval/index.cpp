#include "capval/error.hpp"
#include "capval/hash.hpp"
#include "capval/retrieval.hpp"
#include "capval/text.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>

namespace capval::retrieval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kPostingsMagic[8] = {'C', 'V', 'P', 'O', 'S', 'T', '0', '1'};

struct Document {
    std::string id;
    std::string text;
};

std::vector<Document> read_shard(const std::string& path, const std::string& shard_name) {
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw IoError("shard '" + path + "' is not a readable file");
    const std::string contents = text::read_file(path);
    std::vector<Document> docs;
    const auto ext = fs::path(path).extension().string();
    if (ext == ".jsonl" || ext == ".ndjson") {
        std::size_t line_no = 0;
        for (std::string_view line : text::split_lines(contents)) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            json obj;
            try {
                obj = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what(),
                                 std::string(line), line_no);
            }
            if (!obj.is_object() || !obj.contains("text") || !obj.at("text").is_string()) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": missing string field \"text\"",
                                 std::string(line), line_no);
            }
            auto body = obj.at("text").get<std::string>();
            if (text::trim(body).empty()) continue;
            docs.push_back({shard_name + "#" + std::to_string(line_no), std::move(body)});
        }
    } else if (!text::trim(contents).empty()) {
        docs.push_back({shard_name, contents});
    }
    return docs;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}
    std::uint64_t u(int bytes) {
        if (pos_ + bytes > data_.size()) throw ParseError("postings file truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += bytes;
        return v;
    }
    std::string bytes(std::size_t n) {
        if (pos_ + n > data_.size()) throw ParseError("postings file truncated");
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Index Index::build(std::span<const std::string> shard_paths, const IndexConfig& config) {
    if (shard_paths.empty()) throw PreconditionError("cannot build an index from an empty shard list");
    validate(config.chunking);
    if (!(config.bm25.k1 >= 0.0) || !(config.bm25.b >= 0.0 && config.bm25.b <= 1.0)) {
        throw ConfigError("BM25 parameters require k1 >= 0 and b in [0,1]");
    }

    Index index;
    index.config_ = config;
    std::set<std::string> names;
    std::set<std::string> seen_text;
    std::size_t sequence = 0;
    for (const auto& path : shard_paths) {
        std::string name = fs::path(path).filename().string();
        for (int n = 2; !names.insert(name).second; ++n) name = fs::path(path).filename().string() + "~" + std::to_string(n);
        const auto docs = read_shard(path, name);
        index.shards_.push_back({name, sha256_file(path), static_cast<std::size_t>(fs::file_size(path))});
        for (const auto& doc : docs) {
            ++index.stats_.documents;
            std::size_t dropped = 0;
            for (auto [b, e] : chunk_document(doc.text, config.chunking, &dropped)) {
                char id[32];
                std::snprintf(id, sizeof id, "p%08zu", sequence++);
                std::string body = doc.text.substr(b, e - b);
                if (!seen_text.insert(text::normalize_whitespace_lower(body)).second) {
                    ++index.stats_.dropped_duplicates;
                    continue;
                }
                index.passages_.push_back({id, name, doc.id, std::move(body), b, e});
            }
            index.stats_.dropped_short += dropped;
        }
    }
    if (index.passages_.empty()) throw PreconditionError("corpus produced no passages");

    std::map<std::string, std::vector<Posting>> inverted;
    for (std::uint32_t p = 0; p < index.passages_.size(); ++p) {
        const auto tokens = tokenize(index.passages_[p].text);
        index.lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        std::map<std::string, std::uint32_t> tf;
        for (const auto& t : tokens) ++tf[t];
        for (auto& [term, count] : tf) inverted[term].push_back({p, count});
    }
    for (auto& [term, list] : inverted) {
        index.terms_.push_back(term);
        index.postings_.push_back(std::move(list));
    }
    index.finalize();
    return index;
}

void Index::finalize() {
    term_ids_.clear();
    for (std::uint32_t i = 0; i < terms_.size(); ++i) term_ids_.emplace(terms_[i], i);
    stats_.passages = passages_.size();
    stats_.terms = terms_.size();
    double total = 0.0;
    for (auto len : lengths_) total += len;
    stats_.avg_passage_tokens = passages_.empty() ? 0.0 : total / static_cast<double>(passages_.size());
    manifest_ = make_manifest(sha256_hex(serialize_postings()), sha256_hex(serialize_passages()));
}

std::string Index::serialize_postings() const {
    std::string out(kPostingsMagic, sizeof kPostingsMagic);
    put_u64(out, terms_.size());
    put_u64(out, lengths_.size());
    for (auto len : lengths_) put_u32(out, len);
    for (std::size_t t = 0; t < terms_.size(); ++t) {
        put_u32(out, static_cast<std::uint32_t>(terms_[t].size()));
        out += terms_[t];
        put_u32(out, static_cast<std::uint32_t>(postings_[t].size()));
        for (const auto& p : postings_[t]) {
            put_u32(out, p.passage);
            put_u32(out, p.tf);
        }
    }
    return out;
}

std::string Index::serialize_passages() const {
    std::string out;
    for (const auto& p : passages_) {
        json j = {{"passage_id", p.passage_id}, {"shard", p.shard}, {"document_id", p.document_id},
                  {"start", p.start},           {"end", p.end},     {"text", p.text}};
        out += j.dump() + "\n";
    }
    return out;
}

std::string Index::make_manifest(const std::string& postings_sha, const std::string& passages_sha) const {
    json shards = json::array();
    for (const auto& s : shards_) shards.push_back({{"name", s.name}, {"sha256", s.sha256}, {"bytes", s.bytes}});
    json m = {
        {"format", kIndexFormat},
        {"config",
         {{"chunking",
           {{"target_chars", config_.chunking.target_chars},
            {"min_chars", config_.chunking.min_chars},
            {"max_chars", config_.chunking.max_chars}}},
          {"bm25", {{"k1", format_double(config_.bm25.k1)}, {"b", format_double(config_.bm25.b)}}}}},
        {"counts",
         {{"documents", stats_.documents},
          {"passages", stats_.passages},
          {"terms", stats_.terms},
          {"dropped_duplicates", stats_.dropped_duplicates},
          {"dropped_short", stats_.dropped_short}}},
        {"avg_passage_tokens", format_double(stats_.avg_passage_tokens)},
        {"shards", shards},
        {"files", {{"postings.bin", postings_sha}, {"passages.jsonl", passages_sha}}},
    };
    return m.dump(2) + "\n";
}

std::string Index::manifest_checksum() const { return sha256_hex(manifest_); }

void Index::save(const std::string& directory) const {
    fs::create_directories(directory);
    const fs::path dir(directory);
    text::write_file_atomic((dir / "postings.bin").string(), serialize_postings());
    text::write_file_atomic((dir / "passages.jsonl").string(), serialize_passages());
    text::write_file_atomic((dir / "manifest.json").string(), manifest_);
}

Index Index::load(const std::string& directory) {
    const fs::path dir(directory);
    const std::string manifest_text = text::read_file((dir / "manifest.json").string());
    json m;
    try {
        m = json::parse(manifest_text);
    } catch (const json::parse_error& e) {
        throw ParseError("index manifest is not valid JSON: " + std::string(e.what()));
    }
    if (m.value("format", std::string{}) != kIndexFormat) {
        throw ParseError("index '" + directory + "' has format '" + m.value("format", std::string{}) + "', expected " +
                         kIndexFormat);
    }
    const std::string postings_bytes = text::read_file((dir / "postings.bin").string());
    const std::string passages_text = text::read_file((dir / "passages.jsonl").string());
    if (sha256_hex(postings_bytes) != m.at("files").at("postings.bin").get<std::string>() ||
        sha256_hex(passages_text) != m.at("files").at("passages.jsonl").get<std::string>()) {
        throw ConsistencyError("index '" + directory + "' fails its manifest checksums");
    }

    Index index;
    const auto& cfg = m.at("config");
    index.config_.chunking.target_chars = cfg.at("chunking").at("target_chars").get<std::size_t>();
    index.config_.chunking.min_chars = cfg.at("chunking").at("min_chars").get<std::size_t>();
    index.config_.chunking.max_chars = cfg.at("chunking").at("max_chars").get<std::size_t>();
    index.config_.bm25.k1 = std::stod(cfg.at("bm25").at("k1").get<std::string>());
    index.config_.bm25.b = std::stod(cfg.at("bm25").at("b").get<std::string>());
    const auto& counts = m.at("counts");
    index.stats_.documents = counts.at("documents").get<std::size_t>();
    index.stats_.dropped_duplicates = counts.at("dropped_duplicates").get<std::size_t>();
    index.stats_.dropped_short = counts.at("dropped_short").get<std::size_t>();
    for (const auto& s : m.at("shards")) {
        index.shards_.push_back({s.at("name").get<std::string>(), s.at("sha256").get<std::string>(),
                                 s.at("bytes").get<std::size_t>()});
    }

    for (std::string_view line : text::split_lines(passages_text)) {
        if (line.empty()) continue;
        const json p = json::parse(line);
        index.passages_.push_back({p.at("passage_id").get<std::string>(), p.at("shard").get<std::string>(),
                                   p.at("document_id").get<std::string>(), p.at("text").get<std::string>(),
                                   p.at("start").get<std::size_t>(), p.at("end").get<std::size_t>()});
    }

    Reader r(postings_bytes);
    if (r.bytes(sizeof kPostingsMagic) != std::string(kPostingsMagic, sizeof kPostingsMagic)) {
        throw ParseError("postings file has a bad magic header");
    }
    const auto n_terms = r.u(8);
    const auto n_passages = r.u(8);
    if (n_passages != index.passages_.size()) throw ParseError("postings and passage store disagree on passage count");
    for (std::uint64_t i = 0; i < n_passages; ++i) index.lengths_.push_back(static_cast<std::uint32_t>(r.u(4)));
    for (std::uint64_t t = 0; t < n_terms; ++t) {
        index.terms_.push_back(r.bytes(r.u(4)));
        std::vector<Posting> list(r.u(4));
        for (auto& p : list) {
            p.passage = static_cast<std::uint32_t>(r.u(4));
            p.tf = static_cast<std::uint32_t>(r.u(4));
            if (p.passage >= n_passages) throw ParseError("posting references passage out of range");
        }
        index.postings_.push_back(std::move(list));
    }
    if (!r.done()) throw ParseError("postings file has trailing bytes");
    index.finalize();
    if (index.manifest_ != manifest_text) {
        spdlog::warn("index '{}' manifest differs from its recomputed form", directory);
    }
    return index;
}

EvidenceSet Index::retrieve(std::string_view query, std::size_t k) const {
    if (k == 0) throw PreconditionError("retrieve requires k >= 1");
    EvidenceSet result;
    result.query = std::string(query);

    auto q = tokenize(query);
    std::sort(q.begin(), q.end());
    q.erase(std::unique(q.begin(), q.end()), q.end());

    const double n = static_cast<double>(passages_.size());
    const double avgdl = stats_.avg_passage_tokens > 0.0 ? stats_.avg_passage_tokens : 1.0;
    const double k1 = config_.bm25.k1;
    const double b = config_.bm25.b;
    std::vector<double> scores(passages_.size(), 0.0);
    std::vector<std::uint32_t> touched;
    for (const auto& term : q) {
        const auto it = term_ids_.find(term);
        if (it == term_ids_.end()) continue;
        const auto& list = postings_[it->second];
        const double df = static_cast<double>(list.size());
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& p : list) {
            const double tf = p.tf;
            const double norm = k1 * (1.0 - b + b * lengths_[p.passage] / avgdl);
            if (scores[p.passage] == 0.0) touched.push_back(p.passage);
            scores[p.passage] += idf * tf * (k1 + 1.0) / (tf + norm);
        }
    }

    auto better = [&](std::uint32_t x, std::uint32_t y) {
        if (scores[x] != scores[y]) return scores[x] > scores[y];
        return passages_[x].passage_id < passages_[y].passage_id;
    };
    touched.erase(std::remove_if(touched.begin(), touched.end(), [&](auto p) { return !(scores[p] > 0.0); }),
                  touched.end());
    const std::size_t take = std::min(k, touched.size());
    std::partial_sort(touched.begin(), touched.begin() + static_cast<std::ptrdiff_t>(take), touched.end(), better);
    for (std::size_t i = 0; i < take; ++i) result.hits.push_back({passages_[touched[i]], scores[touched[i]]});
    return result;
}

} // namespace capval::retrieval
