#include "capval/error.hpp"
#include "capval/retrieval.hpp"
#include "capval/text.hpp"

namespace capval::retrieval {

namespace {

using Span = std::pair<std::size_t, std::size_t>;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

Span trimmed(std::string_view doc, Span s) {
    while (s.first < s.second && is_space(doc[s.first])) ++s.first;
    while (s.second > s.first && is_space(doc[s.second - 1])) --s.second;
    return s;
}

std::size_t length_of(std::string_view doc, Span s) {
    const Span t = trimmed(doc, s);
    return text::codepoint_count(doc.substr(t.first, t.second - t.first));
}

bool ends_sentence(std::string_view doc, std::size_t i) {
    const char c = doc[i];
    if (c == '\n') return true;
    if (c == '.' || c == '!' || c == '?') return i + 1 == doc.size() || is_space(doc[i + 1]);
    // U+3002, U+FF01, U+FF1F
    if (i >= 2) {
        const std::string_view tail = doc.substr(i - 2, 3);
        if (tail == "\xE3\x80\x82" || tail == "\xEF\xBC\x81" || tail == "\xEF\xBC\x9F") return true;
    }
    return false;
}

// Byte offset reached after advancing `chars` code points from `from`.
std::size_t advance_chars(std::string_view doc, std::size_t from, std::size_t end, std::size_t chars) {
    std::size_t pos = from;
    for (std::size_t n = 0; n < chars && pos < end; ++n) text::decode_utf8(doc, pos);
    return std::min(pos, end);
}

// Sentence-sized atoms, with any atom longer than `target` split at whitespace.
std::vector<Span> atoms(std::string_view doc, std::size_t target) {
    std::vector<Span> sentences;
    std::size_t start = 0;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        if (ends_sentence(doc, i)) {
            sentences.emplace_back(start, i + 1);
            start = i + 1;
        }
    }
    if (start < doc.size()) sentences.emplace_back(start, doc.size());

    std::vector<Span> out;
    for (Span s : sentences) {
        while (length_of(doc, s) > target) {
            std::size_t cut = advance_chars(doc, s.first, s.second, target);
            std::size_t ws = cut;
            while (ws > s.first && !is_space(doc[ws - 1])) --ws;
            if (ws > s.first && length_of(doc, {s.first, ws}) > 0) cut = ws;
            cut = text::utf8_floor(doc, cut);
            if (cut <= s.first) cut = advance_chars(doc, s.first, s.second, 1);
            out.emplace_back(s.first, cut);
            s.first = cut;
        }
        if (s.first < s.second) out.push_back(s);
    }
    return out;
}

} // namespace

void validate(const ChunkConfig& c) {
    if (c.min_chars == 0 || c.min_chars > c.target_chars || c.target_chars > c.max_chars ||
        c.min_chars + c.target_chars > c.max_chars) {
        throw ConfigError("chunking bounds must satisfy 0 < min <= target <= max and min + target <= max");
    }
}

std::vector<std::pair<std::size_t, std::size_t>> chunk_document(std::string_view doc, const ChunkConfig& config,
                                                                std::size_t* dropped_short) {
    validate(config);
    if (dropped_short) *dropped_short = 0;
    std::vector<Span> chunks;
    Span cur{0, 0};
    bool open = false;
    for (const Span& a : atoms(doc, config.target_chars)) {
        if (!open) {
            cur = a;
            open = true;
            continue;
        }
        const Span grown{cur.first, a.second};
        if (length_of(doc, grown) > config.target_chars && length_of(doc, cur) >= config.min_chars) {
            chunks.push_back(trimmed(doc, cur));
            cur = a;
        } else {
            cur = grown;
        }
    }
    if (open && length_of(doc, cur) > 0) {
        if (length_of(doc, cur) >= config.min_chars) {
            chunks.push_back(trimmed(doc, cur));
        } else if (!chunks.empty() && length_of(doc, {chunks.back().first, cur.second}) <= config.max_chars) {
            chunks.back() = trimmed(doc, {chunks.back().first, cur.second});
        } else {
            if (dropped_short) ++*dropped_short;
        }
    }
    return chunks;
}

} // namespace capval::retrieval
