#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace capval::synthesis {

inline constexpr std::size_t kMaxFactorsPerSample = 6;

// Numbered items after the "Extraction of key knowledge words" header,
// trimmed, with items lacking any letter or holding a single character
// removed, capped at six. Throws ParseError when the header is missing.
std::vector<std::string> parse_extraction_output(std::string_view raw);

// True when a factor survives the extraction filters above.
bool acceptable_factor(std::string_view item);

enum class Verdict { yes, no };

// The bracketed token after "Judgment Result", case-insensitive. A reply made
// of just "[Yes]" or "[No]" is accepted too, since the prompt already ends
// with the label.
Verdict parse_filter_verdict(std::string_view raw);

struct Question {
    std::string text;
    std::vector<std::string> options; // "A. ..." lines, verbatim
    std::string answer;
    std::optional<std::string> analysis;

    bool operator==(const Question&) const = default;
};

struct Expansion {
    std::vector<std::string> concepts;
    std::vector<std::string> expansions;
    std::vector<Question> questions;
    std::size_t dropped_questions = 0; // blocks without an answer

    bool operator==(const Expansion& o) const {
        return concepts == o.concepts && expansions == o.expansions && questions == o.questions;
    }
};

// Parses the "Key Knowledge Concepts" and "Related Knowledge Expansion"
// numbered lists and every <Question_N_Start>...<Question_N_End> block.
// Throws EmptyExpansionError when require_questions is set and no block has
// an answer.
Expansion parse_expansion_output(std::string_view raw, bool require_questions = true);

// Canonical sample layout; parse_expansion_output(render_expansion(e)) == e.
std::string render_expansion(const Expansion& expansion);

} // namespace capval::synthesis
