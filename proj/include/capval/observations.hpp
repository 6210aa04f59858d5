#pragma once

#include "capval/core.hpp"

#include <string>
#include <vector>

namespace capval {

// Observation table CSV, header:
//   model_id,domain_id,loss,capability,compute,tokens_seen,stage
// Optional columns are left empty when absent. Rows are kept in file order.
std::vector<ModelObservation> parse_observation_csv(const std::string& csv_text, const std::string& source = "<memory>");
std::vector<ModelObservation> read_observation_table(const std::string& path);
std::string format_observation_csv(const std::vector<ModelObservation>& rows);
void write_observation_table(const std::string& path, const std::vector<ModelObservation>& rows);

// Replaces the row with the same (model_id, domain_id, stage, tokens_seen) or appends.
void upsert_observation(std::vector<ModelObservation>& rows, const ModelObservation& row);

} // namespace capval
