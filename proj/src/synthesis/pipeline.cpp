#include "capval/synthesis/pipeline.hpp"

#include "capval/error.hpp"
#include "capval/hash.hpp"
#include "capval/parallel.hpp"
#include "capval/text.hpp"
#include "journal.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <ctime>
#include <random>
#include <regex>

namespace capval::synthesis {

using nlohmann::json;

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string factor_id_for(const std::string& domain_id, const std::string& factor_text) {
    return domain_id + "-f-" + sha256_hex(text::normalize_whitespace_lower(factor_text)).substr(0, 12);
}

bool KnowledgeSet::insert(const KnowledgeFactor& factor) {
    if (!keys_.insert(text::normalize_whitespace_lower(factor.text)).second) return false;
    factors_.push_back(factor);
    return true;
}

bool KnowledgeSet::contains(const std::string& text) const {
    return keys_.contains(text::normalize_whitespace_lower(text));
}

std::vector<std::string> extract_factor_texts(const BenchmarkSample& sample, const LlmClient& extractor,
                                              const PromptSet& prompts) {
    const auto raw = extractor.complete(prompts.extraction.render({{"raw_exam", sample.text}}));
    return parse_extraction_output(raw);
}

std::vector<KnowledgeFactor> extract_knowledge(const BenchmarkSample& sample, const DomainSpec& domain,
                                               const LlmClient& extractor, const PromptSet& prompts,
                                               KnowledgeSet& known) {
    const auto texts = extract_factor_texts(sample, extractor, prompts);
    if (texts.empty()) spdlog::info("sample '{}' yielded no usable knowledge factors", sample.id);
    std::vector<KnowledgeFactor> added;
    for (const auto& t : texts) {
        KnowledgeFactor f{factor_id_for(domain.id, t), t, sample.id, domain.id};
        if (known.insert(f)) added.push_back(std::move(f));
    }
    return added;
}

FilteredEvidence filter_relevance(const retrieval::EvidenceSet& evidence, const KnowledgeFactor& factor,
                                  const DomainSpec& /*domain*/, const LlmClient& judge, const PromptSet& prompts) {
    FilteredEvidence out;
    out.factor_id = factor.id;
    for (const auto& hit : evidence.hits) {
        const auto prompt = prompts.filtering.render(
            {{"knowledge_concept", factor.text}, {"candidate_retrieved_content", hit.passage.text}});
        std::optional<Verdict> verdict;
        for (int attempt = 0; attempt < 2 && !verdict; ++attempt) {
            try {
                verdict = parse_filter_verdict(judge.complete(prompt));
            } catch (const ParseError& e) {
                if (attempt == 0) {
                    ++out.reasks;
                } else {
                    spdlog::warn("judge verdict for factor '{}' passage '{}' unparseable twice; counting as no",
                                 factor.id, hit.passage.passage_id);
                }
            }
        }
        const Verdict v = verdict.value_or(Verdict::no);
        out.verdicts[hit.passage.passage_id] = v;
        if (v == Verdict::yes) out.kept.push_back(hit.passage);
    }
    return out;
}

std::vector<ValidationSample> expand_scenarios(const FilteredEvidence& filtered, const KnowledgeFactor& factor,
                                               const DomainSpec& domain, const LlmClient& generator,
                                               const PromptSet& prompts, const ExpansionOptions& options) {
    if (filtered.kept.empty()) throw PreconditionError("factor '" + factor.id + "' has no kept evidence to expand");
    std::string content;
    std::vector<std::string> evidence_ids;
    for (const auto& p : filtered.kept) {
        if (!content.empty()) content += "\n\n";
        content += p.text;
        evidence_ids.push_back(p.passage_id);
    }
    const auto expansion = parse_expansion_output(generator.complete(prompts.expansion.render({{"content", content}})));

    Provenance prov{SynthesisMode::full, generator.config().model_id, prompts.combined_hash(),
                    options.clock ? options.clock() : utc_timestamp()};
    std::vector<ValidationSample> out;
    auto make = [&](std::string id, const Expansion& e) {
        ValidationSample s;
        s.id = std::move(id);
        s.domain_id = domain.id;
        s.text = render_expansion(e);
        s.factor_id = factor.id;
        s.evidence_ids = evidence_ids;
        s.provenance = prov;
        out.push_back(std::move(s));
    };
    if (!options.split_per_question) {
        make(factor.id + "-v", expansion);
    } else {
        for (std::size_t i = 0; i < expansion.questions.size(); ++i) {
            Expansion single{expansion.concepts, expansion.expansions, {expansion.questions[i]}, 0};
            make(factor.id + "-v" + std::to_string(i + 1), single);
        }
    }
    return out;
}

std::string blank_fill(const BenchmarkSample& sample) {
    static const std::regex option_re(R"(^\s*([A-Ga-g])\s*[.)]\s*(.+?)\s*$)");
    static const std::regex blank_re(R"(_{2,}|\(\s*\)|（\s*）)");
    static const std::regex answer_re(R"(^(\s*Answer\s*[:：]).*$)", std::regex::icase);

    std::map<char, std::string> options;
    std::string answer(text::trim(sample.answer));
    for (auto line : text::split_lines(sample.text)) {
        const std::string l(line);
        std::smatch m;
        if (std::regex_match(l, m, option_re)) {
            options.emplace(static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0]))), m[2].str());
        } else if (answer.empty() && std::regex_match(l, m, answer_re)) {
            answer = std::string(text::trim(l.substr(m[1].length())));
        }
    }
    if (answer.empty()) throw PreconditionError("sample '" + sample.id + "' has no answer to fill in");
    std::string fill = answer;
    if (answer.size() == 1) {
        const char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(answer[0])));
        if (auto it = options.find(letter); it != options.end()) fill = it->second;
    }

    std::smatch m;
    if (std::regex_search(sample.text, m, blank_re)) {
        return m.prefix().str() + fill + m.suffix().str();
    }
    std::string out;
    bool replaced = false;
    for (auto line : text::split_lines(sample.text)) {
        const std::string l(line);
        if (!out.empty()) out.push_back('\n');
        if (!replaced && std::regex_match(l, m, answer_re)) {
            out += m[1].str() + " " + fill;
            replaced = true;
        } else {
            out += l;
        }
    }
    if (!replaced) out += "\nAnswer: " + fill;
    return out;
}

namespace {

struct SourceSample {
    const BenchmarkSample* sample;
    std::string key; // benchmark_id/sample_id
};

std::string fingerprint(const DomainSpec& domain, const retrieval::Index* index, const Endpoints& endpoints,
                        const PromptSet& prompts, const SynthesisConfig& config) {
    json benchmarks = json::array();
    for (const auto& b : domain.benchmarks) benchmarks.push_back(b.id);
    auto model = [](const std::optional<LlmClient>& c) { return c ? c->config().model_id : std::string{}; };
    const json fp = {{"domain", domain.id},
                     {"mode", to_string(domain.synthesis_mode)},
                     {"benchmarks", benchmarks},
                     {"prompts", prompts.combined_hash()},
                     {"retrieval_k", config.retrieval_k},
                     {"index", index ? index->manifest_checksum() : std::string{}},
                     {"extractor", model(endpoints.extractor)},
                     {"judge", model(endpoints.judge)},
                     {"generator", model(endpoints.generator)},
                     {"split_per_question", config.split_per_question}};
    return sha256_hex(fp.dump());
}

json passage_to_json(const retrieval::CorpusPassage& p) {
    return {{"passage_id", p.passage_id}, {"shard", p.shard}, {"document_id", p.document_id},
            {"start", p.start},           {"end", p.end},     {"text", p.text}};
}

retrieval::CorpusPassage passage_from_json(const json& j) {
    return {j.at("passage_id").get<std::string>(), j.value("shard", std::string{}),
            j.value("document_id", std::string{}), j.at("text").get<std::string>(),
            j.value("start", std::size_t{0}), j.value("end", std::size_t{0})};
}

// Deterministic seeded selection of `cap` indices out of n, returned ascending.
std::vector<std::size_t> seeded_subset(std::size_t n, std::size_t cap, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (cap >= n) return idx;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    return idx;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

} // namespace

SynthesisResult synthesize_domain(const DomainSpec& domain, const retrieval::Index* index, const Endpoints& endpoints,
                                  const PromptSet& prompts, const SynthesisConfig& config) {
    validate(domain);
    const SynthesisMode mode = domain.synthesis_mode;
    if (mode != SynthesisMode::blank_filling) {
        require(index != nullptr, "domain '" + domain.id + "' needs a corpus index for mode " + to_string(mode));
        require(endpoints.extractor.has_value(), "domain '" + domain.id + "' needs an extraction endpoint");
        require(endpoints.judge.has_value(), "domain '" + domain.id + "' needs a judge endpoint");
        require(config.retrieval_k >= 1, "retrieval_k must be at least 1");
    }
    if (mode == SynthesisMode::full) {
        require(endpoints.generator.has_value(), "domain '" + domain.id + "' needs a generator endpoint");
    }
    const Clock clock = config.clock ? config.clock : Clock(utc_timestamp);

    Journal journal(config.journal_path, config.journal_path.empty()
                                             ? std::string{}
                                             : fingerprint(domain, index, endpoints, prompts, config));

    // S_k: union of benchmark samples in benchmark then file order.
    std::vector<std::vector<BenchmarkSample>> loaded;
    for (const auto& b : domain.benchmarks) loaded.push_back(load_benchmark_samples(b));
    std::vector<SourceSample> sources;
    std::set<std::string> benchmark_texts;
    for (std::size_t b = 0; b < loaded.size(); ++b) {
        for (const auto& s : loaded[b]) {
            sources.push_back({&s, domain.benchmarks[b].id + "/" + s.id});
            benchmark_texts.insert(s.text);
        }
    }

    SynthesisResult result;
    RunReport& report = result.report;
    report.benchmark_samples = sources.size();

    if (mode == SynthesisMode::blank_filling) {
        for (const auto& src : sources) {
            try {
                ValidationSample v;
                v.id = domain.id + "-b-" + src.sample->benchmark_id + "-" + src.sample->id;
                v.domain_id = domain.id;
                v.text = blank_fill(*src.sample);
                v.provenance = {SynthesisMode::blank_filling, "none", "none", clock()};
                result.samples.push_back(std::move(v));
            } catch (const Error& e) {
                report.failures.push_back({"blank_fill", src.key, e.what()});
            }
        }
        report.samples_emitted = result.samples.size();
        report.processed_units = sources.size();
        report.journal_complete = report.failures.empty();
        if (report.journal_complete) journal.append({{"type", "complete"}, {"samples", report.samples_emitted}});
        return result;
    }

    // Knowledge extraction.
    std::map<std::string, std::vector<std::string>> extracted;
    std::map<std::string, json> factor_records;
    for (const auto& r : journal.records()) {
        const auto type = r.value("type", std::string{});
        if (type == "extract") extracted[r.at("key").get<std::string>()] = r.at("factors").get<std::vector<std::string>>();
        if (type == "factor") factor_records[r.at("key").get<std::string>()] = r;
    }
    {
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < sources.size(); ++i) {
            if (extracted.contains(sources[i].key)) {
                ++report.resumed_units;
            } else {
                todo.push_back(i);
            }
        }
        std::vector<std::optional<std::vector<std::string>>> got(todo.size());
        std::vector<std::string> errors(todo.size());
        parallel_for(todo.size(), endpoints.extractor->config().max_in_flight, [&](std::size_t t) {
            const auto& src = sources[todo[t]];
            try {
                auto texts = extract_factor_texts(*src.sample, *endpoints.extractor, prompts);
                journal.append({{"type", "extract"}, {"key", src.key}, {"factors", texts}});
                got[t] = std::move(texts);
            } catch (const Error& e) {
                errors[t] = e.what();
            }
        });
        for (std::size_t t = 0; t < todo.size(); ++t) {
            ++report.processed_units;
            if (got[t]) {
                extracted[sources[todo[t]].key] = std::move(*got[t]);
            } else {
                report.failures.push_back({"extract", sources[todo[t]].key, errors[t]});
            }
        }
    }

    KnowledgeSet known;
    for (const auto& src : sources) {
        const auto it = extracted.find(src.key);
        if (it == extracted.end()) continue;
        if (it->second.empty()) {
            ++report.samples_without_factors;
            spdlog::info("sample '{}' yielded no usable knowledge factors", src.key);
        }
        for (const auto& t : it->second) known.insert({factor_id_for(domain.id, t), t, src.sample->id, domain.id});
    }
    result.factors = known.factors();
    report.factors = result.factors.size();

    // Retrieval, filtering and (in full mode) expansion per factor.
    const auto& factors = result.factors;
    {
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < factors.size(); ++i) {
            if (factor_records.contains(factors[i].id)) {
                ++report.resumed_units;
            } else {
                todo.push_back(i);
            }
        }
        std::size_t width = endpoints.judge->config().max_in_flight;
        if (mode == SynthesisMode::full) width = std::min(width, endpoints.generator->config().max_in_flight);
        const ExpansionOptions expand_opts{config.split_per_question, clock};
        std::vector<std::optional<json>> got(todo.size());
        std::vector<std::string> errors(todo.size());
        parallel_for(todo.size(), width, [&](std::size_t t) {
            const auto& factor = factors[todo[t]];
            try {
                const auto evidence = index->retrieve(factor.text, config.retrieval_k);
                const auto filtered = filter_relevance(evidence, factor, domain, *endpoints.judge, prompts);
                json kept_ids = json::array();
                for (const auto& p : filtered.kept) kept_ids.push_back(p.passage_id);
                json record = {{"type", "factor"},
                               {"key", factor.id},
                               {"judged", evidence.hits.size()},
                               {"kept", kept_ids},
                               {"reasks", filtered.reasks}};
                if (filtered.kept.empty()) {
                    record["status"] = "empty";
                } else if (mode == SynthesisMode::full) {
                    record["status"] = "sample";
                    record["samples"] = expand_scenarios(filtered, factor, domain, *endpoints.generator, prompts, expand_opts);
                } else {
                    record["status"] = "passages";
                    json passages = json::array();
                    for (const auto& p : filtered.kept) passages.push_back(passage_to_json(p));
                    record["passages"] = passages;
                }
                journal.append(record);
                got[t] = std::move(record);
            } catch (const Error& e) {
                errors[t] = e.what();
            }
        });
        for (std::size_t t = 0; t < todo.size(); ++t) {
            ++report.processed_units;
            if (got[t]) {
                factor_records[factors[todo[t]].id] = std::move(*got[t]);
            } else {
                report.failures.push_back({"factor", factors[todo[t]].id, errors[t]});
                spdlog::warn("factor '{}' failed: {}", factors[todo[t]].id, errors[t]);
            }
        }
    }

    // Deterministic merge in factor order.
    std::vector<retrieval::CorpusPassage> retrieved;
    std::vector<std::string> retrieved_factor;
    std::set<std::string> retrieved_ids;
    for (const auto& factor : factors) {
        const auto it = factor_records.find(factor.id);
        if (it == factor_records.end()) continue;
        const json& r = it->second;
        report.passages_judged += r.value("judged", std::size_t{0});
        report.passages_kept += r.at("kept").size();
        const auto status = r.value("status", std::string{});
        if (status == "empty") {
            ++report.factors_filtered_empty;
            continue;
        }
        ++report.factors_with_evidence;
        if (status == "sample") {
            for (const auto& js : r.at("samples")) {
                auto s = js.get<ValidationSample>();
                if (benchmark_texts.contains(s.text)) {
                    report.failures.push_back({"ood_check", s.id, "sample text equals a benchmark sample verbatim"});
                    continue;
                }
                result.samples.push_back(std::move(s));
            }
        } else if (status == "passages") {
            for (const auto& jp : r.at("passages")) {
                auto p = passage_from_json(jp);
                if (!retrieved_ids.insert(p.passage_id).second) continue;
                retrieved_factor.push_back(factor.id);
                retrieved.push_back(std::move(p));
            }
        }
    }

    if (mode == SynthesisMode::retrieval_only) {
        const std::string hash = sha256_hex(prompts.extraction.sha256() + "\n" + prompts.filtering.sha256());
        const std::string stamp = clock();
        for (std::size_t i : seeded_subset(retrieved.size(), config.retrieval_only_cap, config.seed)) {
            ValidationSample v;
            v.id = domain.id + "-r-" + retrieved[i].passage_id;
            v.domain_id = domain.id;
            v.text = retrieved[i].text;
            v.factor_id = retrieved_factor[i];
            v.evidence_ids = {retrieved[i].passage_id};
            v.provenance = {SynthesisMode::retrieval_only, endpoints.judge->config().model_id, hash, stamp};
            result.samples.push_back(std::move(v));
        }
    }

    report.samples_emitted = result.samples.size();
    report.journal_complete = report.failures.empty();
    if (report.journal_complete) {
        journal.append({{"type", "complete"}, {"samples", report.samples_emitted}, {"factors", report.factors}});
    }
    return result;
}

} // namespace capval::synthesis
