#include "capval/synthesis/prompts.hpp"

#include "capval/error.hpp"
#include "capval/hash.hpp"
#include "capval/text.hpp"

#include <filesystem>

#ifndef CAPVAL_PROMPT_DIR
#define CAPVAL_PROMPT_DIR "prompts"
#endif

namespace capval::synthesis {

PromptTemplate::PromptTemplate(std::string name, std::string text)
    : name_(std::move(name)), text_(std::move(text)), sha256_(sha256_hex(text_)) {}

PromptTemplate PromptTemplate::load(const std::string& path) {
    return PromptTemplate(std::filesystem::path(path).stem().string(), text::read_file(path));
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
    std::string out;
    out.reserve(text_.size());
    std::size_t pos = 0;
    while (pos < text_.size()) {
        const auto open = text_.find("${", pos);
        if (open == std::string::npos) {
            out.append(text_, pos, std::string::npos);
            break;
        }
        const auto close = text_.find('}', open + 2);
        if (close == std::string::npos) {
            out.append(text_, pos, std::string::npos);
            break;
        }
        out.append(text_, pos, open - pos);
        const std::string key = text_.substr(open + 2, close - open - 2);
        const auto it = vars.find(key);
        if (it == vars.end()) throw ConfigError("prompt '" + name_ + "' needs a value for ${" + key + "}");
        out += it->second;
        pos = close + 1;
    }
    return out;
}

PromptSet PromptSet::load(const std::string& directory) {
    const std::filesystem::path dir(directory);
    return {PromptTemplate::load((dir / "extraction.txt").string()),
            PromptTemplate::load((dir / "filtering.txt").string()),
            PromptTemplate::load((dir / "expansion.txt").string())};
}

std::string PromptSet::combined_hash() const {
    return sha256_hex(extraction.sha256() + "\n" + filtering.sha256() + "\n" + expansion.sha256());
}

std::string default_prompt_dir() { return CAPVAL_PROMPT_DIR; }

} // namespace capval::synthesis
