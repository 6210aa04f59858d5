#include "capval/synthesis/types.hpp"

#include "capval/error.hpp"
#include "capval/text.hpp"

namespace capval::synthesis {

using nlohmann::json;

void to_json(json& j, const ValidationSample& s) {
    j = json{{"id", s.id},
             {"domain_id", s.domain_id},
             {"text", s.text},
             {"factor_id", s.factor_id},
             {"evidence_ids", s.evidence_ids},
             {"difficulty", s.difficulty ? json(*s.difficulty) : json()},
             {"provenance",
              {{"mode", to_string(s.provenance.mode)},
               {"llm_model_id", s.provenance.llm_model_id},
               {"prompt_hash", s.provenance.prompt_hash},
               {"timestamp", s.provenance.timestamp}}}};
}

void from_json(const json& j, ValidationSample& s) {
    s.id = j.at("id").get<std::string>();
    s.domain_id = j.at("domain_id").get<std::string>();
    s.text = j.at("text").get<std::string>();
    s.factor_id = j.value("factor_id", std::string{});
    s.evidence_ids = j.value("evidence_ids", std::vector<std::string>{});
    if (j.contains("difficulty") && j.at("difficulty").is_string()) {
        s.difficulty = j.at("difficulty").get<std::string>();
    } else {
        s.difficulty.reset();
    }
    const auto& p = j.at("provenance");
    s.provenance.mode = parse_synthesis_mode(p.at("mode").get<std::string>());
    s.provenance.llm_model_id = p.value("llm_model_id", std::string{});
    s.provenance.prompt_hash = p.value("prompt_hash", std::string{});
    s.provenance.timestamp = p.value("timestamp", std::string{});
}

std::vector<ValidationSample> read_validation_set(const std::string& path) {
    const std::string contents = text::read_file(path);
    std::vector<ValidationSample> out;
    std::size_t line_no = 0;
    for (std::string_view line : text::split_lines(contents)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line).get<ValidationSample>());
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad validation sample: " + e.what(),
                             std::string(line), line_no);
        }
    }
    return out;
}

void write_validation_set(const std::string& path, const std::vector<ValidationSample>& samples) {
    std::string out;
    for (const auto& s : samples) out += json(s).dump() + "\n";
    text::write_file_atomic(path, out);
}

std::vector<ValidationSample> without_timestamps(std::vector<ValidationSample> samples) {
    for (auto& s : samples) s.provenance.timestamp.clear();
    return samples;
}

} // namespace capval::synthesis
