#include "capval/retrieval.hpp"
#include "capval/text.hpp"

namespace capval::retrieval {

namespace {

bool is_ideograph(char32_t cp) {
    return (cp >= 0x3400 && cp <= 0x4DBF) || (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0xF900 && cp <= 0xFAFF) ||
           (cp >= 0x20000 && cp <= 0x3FFFF);
}

bool is_non_ascii_separator(char32_t cp) {
    return (cp >= 0x0080 && cp <= 0x00BF && cp != 0x00AA && cp != 0x00B5 && cp != 0x00BA) || cp == 0x00D7 ||
           cp == 0x00F7 || (cp >= 0x2000 && cp <= 0x2BFF) || (cp >= 0x3000 && cp <= 0x303F) ||
           (cp >= 0xFE30 && cp <= 0xFE4F) || (cp >= 0xFF00 && cp <= 0xFF0F) || (cp >= 0xFF1A && cp <= 0xFF20) ||
           (cp >= 0xFF3B && cp <= 0xFF40) || (cp >= 0xFF5B && cp <= 0xFF65) || cp == 0xFEFF || cp == 0xFFFD;
}

bool is_ascii_alpha(char32_t cp) { return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z'); }
bool is_ascii_digit(char32_t cp) { return cp >= '0' && cp <= '9'; }

bool is_word_char(char32_t cp) {
    if (cp < 0x80) return is_ascii_alpha(cp) || is_ascii_digit(cp) || cp == '_';
    return !is_non_ascii_separator(cp);
}

bool is_letter(char32_t cp) { return is_ascii_alpha(cp) || (cp >= 0x80 && is_word_char(cp) && !is_ideograph(cp)); }

char32_t fold_case(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp >= 0x00C0 && cp <= 0x00DE && cp != 0x00D7) return cp + 32;
    if (cp >= 0x0391 && cp <= 0x03A9 && cp != 0x03A2) return cp + 32;
    if (cp >= 0x0410 && cp <= 0x042F) return cp + 32;
    if (cp >= 0x0400 && cp <= 0x040F) return cp + 80;
    if (cp >= 0x0100 && cp <= 0x017F && cp % 2 == 0 && cp != 0x0130 && cp != 0x0138) return cp + 1;
    return cp;
}

} // namespace

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<char32_t> cps;
    cps.reserve(s.size());
    for (std::size_t pos = 0; pos < s.size();) cps.push_back(text::decode_utf8(s, pos));

    std::vector<std::string> tokens;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) tokens.push_back(std::move(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
        const char32_t cp = cps[i];
        if (is_ideograph(cp)) {
            flush();
            text::append_utf8(cur, cp);
            flush();
            continue;
        }
        if (is_word_char(cp)) {
            text::append_utf8(cur, fold_case(cp));
            continue;
        }
        const bool has_prev = !cur.empty() && i > 0;
        const bool has_next = i + 1 < cps.size();
        if (has_prev && has_next) {
            const char32_t prev = cps[i - 1];
            const char32_t next = cps[i + 1];
            if ((cp == '\'' || cp == 0x2019) && is_letter(prev) && is_letter(next)) {
                cur.push_back('\'');
                continue;
            }
            if ((cp == '.' || cp == ',') && is_ascii_digit(prev) && is_ascii_digit(next)) {
                cur.push_back(static_cast<char>(cp));
                continue;
            }
        }
        flush();
    }
    flush();
    return tokens;
}

} // namespace capval::retrieval
