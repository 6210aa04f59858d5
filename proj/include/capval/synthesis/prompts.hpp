#pragma once

#include <map>
#include <string>

namespace capval::synthesis {

class PromptTemplate {
public:
    PromptTemplate() = default;
    PromptTemplate(std::string name, std::string text);

    static PromptTemplate load(const std::string& path);

    // Substitutes every ${var}. Values are inserted verbatim and never
    // re-expanded. A placeholder without a value raises ConfigError.
    std::string render(const std::map<std::string, std::string>& vars) const;

    const std::string& name() const noexcept { return name_; }
    const std::string& text() const noexcept { return text_; }
    const std::string& sha256() const noexcept { return sha256_; }

private:
    std::string name_;
    std::string text_;
    std::string sha256_;
};

struct PromptSet {
    PromptTemplate extraction; // ${raw_exam}
    PromptTemplate filtering;  // ${knowledge_concept}, ${candidate_retrieved_content}
    PromptTemplate expansion;  // ${content}

    // Reads extraction.txt, filtering.txt and expansion.txt.
    static PromptSet load(const std::string& directory);
    // Hash over the three template hashes, recorded in sample provenance.
    std::string combined_hash() const;
};

// Directory of the templates shipped with the project.
std::string default_prompt_dir();

} // namespace capval::synthesis
