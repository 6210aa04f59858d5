#pragma once

#include "capval/core.hpp"
#include "capval/retrieval.hpp"
#include "capval/synthesis/llm_client.hpp"
#include "capval/synthesis/parsers.hpp"
#include "capval/synthesis/prompts.hpp"
#include "capval/synthesis/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace capval::synthesis {

using Clock = std::function<std::string()>;

// UTC ISO-8601 wall clock.
std::string utc_timestamp();

std::string factor_id_for(const std::string& domain_id, const std::string& factor_text);

// Domain-wide knowledge set K_k with case-insensitive membership.
class KnowledgeSet {
public:
    bool insert(const KnowledgeFactor& factor);
    bool contains(const std::string& text) const;
    const std::vector<KnowledgeFactor>& factors() const noexcept { return factors_; }

private:
    std::vector<KnowledgeFactor> factors_;
    std::set<std::string> keys_;
};

// Factors from one benchmark sample that are new to `known`, which is updated.
std::vector<KnowledgeFactor> extract_knowledge(const BenchmarkSample& sample, const DomainSpec& domain,
                                               const LlmClient& extractor, const PromptSet& prompts,
                                               KnowledgeSet& known);

// Parsed factor texts for one sample without touching any knowledge set.
std::vector<std::string> extract_factor_texts(const BenchmarkSample& sample, const LlmClient& extractor,
                                              const PromptSet& prompts);

struct FilteredEvidence {
    std::string factor_id;
    std::vector<retrieval::CorpusPassage> kept; // original rank order
    std::map<std::string, Verdict> verdicts;    // passage_id -> verdict
    std::size_t reasks = 0;
};

// One judge call per passage; unparseable verdicts are asked once more and
// then count as "no". Endpoint errors propagate.
FilteredEvidence filter_relevance(const retrieval::EvidenceSet& evidence, const KnowledgeFactor& factor,
                                  const DomainSpec& domain, const LlmClient& judge, const PromptSet& prompts);

struct ExpansionOptions {
    bool split_per_question = false;
    Clock clock = utc_timestamp;
};

std::vector<ValidationSample> expand_scenarios(const FilteredEvidence& filtered, const KnowledgeFactor& factor,
                                               const DomainSpec& domain, const LlmClient& generator,
                                               const PromptSet& prompts, const ExpansionOptions& options = {});

// Benchmark text with the correct answer written into the blank or answer
// slot. A letter answer is replaced by its option text when the option exists.
std::string blank_fill(const BenchmarkSample& sample);

struct Endpoints {
    std::optional<LlmClient> extractor;
    std::optional<LlmClient> judge;
    std::optional<LlmClient> generator;
};

struct SynthesisConfig {
    std::size_t retrieval_k = 8;
    std::size_t retrieval_only_cap = 80000;
    std::uint64_t seed = 0;
    bool split_per_question = false;
    std::string journal_path; // empty disables journaling
    Clock clock = utc_timestamp;
};

struct FailureRecord {
    std::string stage;
    std::string unit;
    std::string message;
};

struct RunReport {
    std::size_t benchmark_samples = 0;
    std::size_t samples_without_factors = 0;
    std::size_t factors = 0;
    std::size_t factors_with_evidence = 0;
    std::size_t factors_filtered_empty = 0;
    std::size_t passages_judged = 0;
    std::size_t passages_kept = 0;
    std::size_t samples_emitted = 0;
    std::size_t resumed_units = 0;
    std::size_t processed_units = 0;
    std::vector<FailureRecord> failures;
    bool journal_complete = false;
};

struct SynthesisResult {
    std::vector<ValidationSample> samples;
    std::vector<KnowledgeFactor> factors;
    RunReport report;
};

// Runs the domain's synthesis mode. Per-item failures land in the report;
// only configuration problems throw.
SynthesisResult synthesize_domain(const DomainSpec& domain, const retrieval::Index* index, const Endpoints& endpoints,
                                  const PromptSet& prompts, const SynthesisConfig& config);

} // namespace capval::synthesis
