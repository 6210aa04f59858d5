#pragma once

#include "capval/core.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace capval::synthesis {

// A keyword, concept or reasoning pattern pulled out of a benchmark sample.
// Text is trimmed and never purely numeric.
struct KnowledgeFactor {
    std::string id;
    std::string text;
    std::string source_sample_id;
    std::string domain_id;
};

struct Provenance {
    SynthesisMode mode = SynthesisMode::full;
    std::string llm_model_id;
    std::string prompt_hash;
    std::string timestamp; // excluded from reproducibility checksums

    bool operator==(const Provenance&) const = default;
};

struct ValidationSample {
    std::string id;
    std::string domain_id;
    std::string text;
    std::string factor_id;
    std::vector<std::string> evidence_ids;
    std::optional<std::string> difficulty;
    Provenance provenance;

    bool operator==(const ValidationSample&) const = default;
};

void to_json(nlohmann::json& j, const ValidationSample& s);
void from_json(const nlohmann::json& j, ValidationSample& s);

// JSONL, one sample per line.
std::vector<ValidationSample> read_validation_set(const std::string& path);
void write_validation_set(const std::string& path, const std::vector<ValidationSample>& samples);

// Same samples with timestamps blanked, for reproducibility comparisons.
std::vector<ValidationSample> without_timestamps(std::vector<ValidationSample> samples);

} // namespace capval::synthesis
