#include "capval/synthesis/parsers.hpp"

#include "capval/error.hpp"
#include "capval/text.hpp"

#include <spdlog/spdlog.h>

#include <regex>

namespace capval::synthesis {

namespace {

using text::trim;

// "3. foo", "3) foo", "3、foo" -> "foo"
std::optional<std::string_view> numbered_item(std::string_view line) {
    line = trim(line);
    std::size_t i = 0;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
    if (i == 0 || i == line.size()) return std::nullopt;
    std::string_view rest = line.substr(i);
    if (rest.front() == '.' || rest.front() == ')') {
        rest.remove_prefix(1);
    } else if (rest.starts_with("\xE3\x80\x81") || rest.starts_with("\xEF\xBC\x8E")) { // 、 ．
        rest.remove_prefix(3);
    } else {
        return std::nullopt;
    }
    // "3.5 apples" is a number, not an item.
    if (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') return std::nullopt;
    return trim(rest);
}

bool is_ellipsis(std::string_view line) {
    line = trim(line);
    if (line.empty()) return false;
    for (std::size_t i = 0; i < line.size();) {
        if (line[i] == '.') {
            ++i;
        } else if (line.substr(i).starts_with("\xE2\x80\xA6")) { // …
            i += 3;
        } else {
            return false;
        }
    }
    return true;
}

std::string_view strip_list_punct(std::string_view item) {
    item = trim(item);
    while (!item.empty() && (item.back() == ',' || item.back() == ';')) item = trim(item.substr(0, item.size() - 1));
    if (item.ends_with("\xEF\xBC\x8C")) item = trim(item.substr(0, item.size() - 3)); // ，
    return item;
}

bool is_letter(char32_t cp) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return true;
    if (cp < 0xC0) return false;
    if (cp >= 0x2000 && cp <= 0x2BFF) return false;
    if (cp >= 0x3000 && cp <= 0x303F) return false;
    if (cp >= 0xFF00 && cp <= 0xFF20) return false;
    return cp != 0xD7 && cp != 0xF7 && cp != 0xFFFD;
}

// Strips "**" emphasis some models wrap around headers.
std::string_view unemphasize(std::string_view line) {
    line = trim(line);
    while (line.starts_with("*") || line.starts_with("#")) line.remove_prefix(1);
    while (line.ends_with("*")) line.remove_suffix(1);
    return trim(line);
}

std::vector<std::string> numbered_list_after(const std::vector<std::string_view>& lines, std::size_t header) {
    std::vector<std::string> items;
    for (std::size_t i = header + 1; i < lines.size(); ++i) {
        const auto line = trim(lines[i]);
        if (line.empty() || is_ellipsis(line)) continue;
        if (auto item = numbered_item(line)) {
            items.emplace_back(*item);
            continue;
        }
        break;
    }
    return items;
}

bool is_header(std::string_view line, std::string_view phrase) {
    const auto l = unemphasize(line);
    return text::starts_with_ci(l, phrase) && l.size() <= phrase.size() + 16;
}

std::optional<std::string_view> after_label(std::string_view line, std::string_view label) {
    line = trim(line);
    if (!text::starts_with_ci(line, label)) return std::nullopt;
    auto rest = line.substr(label.size());
    if (rest.starts_with(":")) {
        rest.remove_prefix(1);
    } else if (rest.starts_with("\xEF\xBC\x9A")) { // ：
        rest.remove_prefix(3);
    } else {
        return std::nullopt;
    }
    return trim(rest);
}

bool is_option_line(std::string_view line) {
    line = trim(line);
    if (line.size() < 2 || line[0] < 'A' || line[0] > 'G') return false;
    const auto rest = line.substr(1);
    return rest.front() == '.' || rest.front() == ')' || rest.starts_with("\xEF\xBC\x8E") || rest.starts_with("\xE3\x80\x81");
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out.push_back('\n');
        out += lines[i];
    }
    return out;
}

std::optional<Question> parse_question_block(std::string_view body) {
    enum class Part { text, answer, analysis } part = Part::text;
    std::vector<std::string> text_lines;
    std::vector<std::string> answer_lines;
    std::vector<std::string> analysis_lines;
    bool has_analysis = false;
    Question q;
    for (auto raw : text::split_lines(body)) {
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (part != Part::analysis) {
            if (auto rest = after_label(line, "Analysis")) {
                part = Part::analysis;
                has_analysis = true;
                if (!rest->empty()) analysis_lines.emplace_back(*rest);
                continue;
            }
        }
        if (part == Part::text) {
            if (auto rest = after_label(line, "Answer")) {
                part = Part::answer;
                if (!rest->empty()) answer_lines.emplace_back(*rest);
                continue;
            }
            if (is_option_line(line)) {
                q.options.emplace_back(line);
            } else {
                text_lines.emplace_back(line);
            }
        } else if (part == Part::answer) {
            answer_lines.emplace_back(line);
        } else {
            analysis_lines.emplace_back(line);
        }
    }
    q.text = join_lines(text_lines);
    q.answer = join_lines(answer_lines);
    if (has_analysis) q.analysis = join_lines(analysis_lines);
    if (q.answer.empty()) return std::nullopt;
    return q;
}

} // namespace

bool acceptable_factor(std::string_view item) {
    item = trim(item);
    if (text::codepoint_count(item) < 2) return false;
    for (std::size_t pos = 0; pos < item.size();) {
        if (is_letter(text::decode_utf8(item, pos))) return true;
    }
    return false;
}

std::vector<std::string> parse_extraction_output(std::string_view raw) {
    static constexpr std::string_view kHeader = "extraction of key knowledge words";
    const auto lines = text::split_lines(raw);
    std::size_t header = lines.size();
    std::size_t at = std::string_view::npos;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        at = text::find_ci(lines[i], kHeader);
        if (at != std::string_view::npos) {
            header = i;
            break;
        }
    }
    if (header == lines.size()) {
        throw ParseError("extraction output lacks the 'Extraction of key knowledge words' header", std::string(raw));
    }

    std::vector<std::string> candidates = numbered_list_after(lines, header);
    if (candidates.empty()) {
        // Inline comma-separated form on the header line itself.
        auto tail = trim(lines[header].substr(at + kHeader.size()));
        if (tail.starts_with(":")) tail = trim(tail.substr(1));
        std::size_t start = 0;
        while (start <= tail.size() && !tail.empty()) {
            const auto comma = tail.find(',', start);
            candidates.emplace_back(trim(tail.substr(start, comma == std::string_view::npos ? tail.npos : comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
    }

    std::vector<std::string> items;
    for (const auto& c : candidates) {
        const auto item = strip_list_punct(c);
        if (!acceptable_factor(item)) continue;
        items.emplace_back(item);
        if (items.size() == kMaxFactorsPerSample) break;
    }
    return items;
}

Verdict parse_filter_verdict(std::string_view raw) {
    auto classify = [&](std::string_view token) -> std::optional<Verdict> {
        token = unemphasize(token);
        const auto lower = text::to_lower(token);
        if (lower == "yes") return Verdict::yes;
        if (lower == "no") return Verdict::no;
        return std::nullopt;
    };
    const auto label = text::find_ci(raw, "judgment result");
    std::string_view scan;
    if (label != std::string_view::npos) {
        scan = raw.substr(label);
    } else {
        const auto t = trim(raw);
        if (!(t.starts_with("[") && t.ends_with("]"))) {
            throw ParseError("judge reply has no 'Judgment Result' label", std::string(raw));
        }
        scan = t;
    }
    const auto open = scan.find('[');
    const auto close = open == std::string_view::npos ? open : scan.find(']', open + 1);
    if (close == std::string_view::npos) throw ParseError("judge reply has no bracketed verdict", std::string(raw));
    if (auto v = classify(scan.substr(open + 1, close - open - 1))) return *v;
    throw ParseError("judge verdict is neither Yes nor No", std::string(raw));
}

Expansion parse_expansion_output(std::string_view raw, bool require_questions) {
    Expansion e;
    static const std::regex start_re(R"(<\s*Question_(\d+)_Start\s*>)", std::regex::icase);
    static const std::regex end_re(R"(<\s*Question_\d+_End\s*>)", std::regex::icase);

    const std::string all(raw);
    std::vector<std::pair<std::size_t, std::size_t>> starts; // tag begin, content begin
    for (auto it = std::sregex_iterator(all.begin(), all.end(), start_re); it != std::sregex_iterator(); ++it) {
        starts.emplace_back(static_cast<std::size_t>(it->position()),
                            static_cast<std::size_t>(it->position() + it->length()));
    }

    const std::string_view preamble = std::string_view(all).substr(0, starts.empty() ? all.size() : starts.front().first);
    const auto lines = text::split_lines(preamble);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (e.concepts.empty() && is_header(lines[i], "Key Knowledge Concepts")) {
            e.concepts = numbered_list_after(lines, i);
        } else if (e.expansions.empty() && is_header(lines[i], "Related Knowledge Expansion")) {
            e.expansions = numbered_list_after(lines, i);
        }
    }

    for (std::size_t b = 0; b < starts.size(); ++b) {
        const std::size_t content = starts[b].second;
        const std::size_t limit = b + 1 < starts.size() ? starts[b + 1].first : all.size();
        std::string_view body = std::string_view(all).substr(content, limit - content);
        std::match_results<std::string_view::const_iterator> m;
        if (std::regex_search(body.begin(), body.end(), m, end_re)) body = body.substr(0, static_cast<std::size_t>(m.position()));
        if (auto q = parse_question_block(body)) {
            e.questions.push_back(std::move(*q));
        } else {
            ++e.dropped_questions;
            spdlog::warn("dropping question block {} without an answer", b + 1);
        }
    }
    if (require_questions && e.questions.empty()) {
        throw EmptyExpansionError("expansion output has no question block with an answer", std::string(raw));
    }
    return e;
}

std::string render_expansion(const Expansion& e) {
    std::string out = "Key Knowledge Concepts:\n";
    for (std::size_t i = 0; i < e.concepts.size(); ++i) out += std::to_string(i + 1) + ". " + e.concepts[i] + "\n";
    out += "\nRelated Knowledge Expansion:\n";
    for (std::size_t i = 0; i < e.expansions.size(); ++i) out += std::to_string(i + 1) + ". " + e.expansions[i] + "\n";
    for (std::size_t i = 0; i < e.questions.size(); ++i) {
        const auto& q = e.questions[i];
        const auto n = std::to_string(i + 1);
        out += "\n<Question_" + n + "_Start>\n";
        if (!q.text.empty()) out += q.text + "\n";
        for (const auto& o : q.options) out += o + "\n";
        out += "Answer: " + q.answer + "\n";
        if (q.analysis) out += "Analysis: " + *q.analysis + "\n";
        out += "<Question_" + n + "_End>\n";
    }
    return out;
}

} // namespace capval::synthesis
