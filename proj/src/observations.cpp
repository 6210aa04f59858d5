#include "capval/observations.hpp"

#include "capval/error.hpp"
#include "capval/text.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <filesystem>

namespace capval {

namespace {

constexpr std::array<const char*, 7> kColumns = {"model_id", "domain_id", "loss", "capability",
                                                 "compute", "tokens_seen", "stage"};

std::optional<double> parse_optional_number(const std::string& field, const std::string& where) {
    const auto t = text::trim(field);
    if (t.empty()) return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(std::string(t), &used);
        if (used != t.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": not a number: '" + std::string(t) + "'");
    }
}

std::string format_number(double v) { return fmt::format("{:.17g}", v); }

} // namespace

std::vector<ModelObservation> parse_observation_csv(const std::string& csv_text, const std::string& source) {
    std::vector<ModelObservation> rows;
    const auto lines = text::split_lines(csv_text);
    if (lines.empty()) return rows;
    const auto header = text::split_csv_record(lines.front());
    std::array<int, kColumns.size()> pos{};
    pos.fill(-1);
    for (std::size_t i = 0; i < header.size(); ++i) {
        const auto name = text::trim(header[i]);
        for (std::size_t c = 0; c < kColumns.size(); ++c) {
            if (name == kColumns[c]) pos[c] = static_cast<int>(i);
        }
    }
    if (pos[0] < 0 || pos[1] < 0 || pos[2] < 0) {
        throw ParseError(source + ": observation table needs model_id,domain_id,loss columns", std::string(lines.front()), 1);
    }
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (text::trim(lines[ln]).empty()) continue;
        const auto f = text::split_csv_record(lines[ln]);
        const std::string where = source + ":" + std::to_string(ln + 1);
        auto get = [&](std::size_t c) -> std::string {
            return pos[c] >= 0 && static_cast<std::size_t>(pos[c]) < f.size() ? f[pos[c]] : std::string{};
        };
        ModelObservation o;
        o.model_id = std::string(text::trim(get(0)));
        o.domain_id = std::string(text::trim(get(1)));
        const auto loss = parse_optional_number(get(2), where);
        if (!loss || !(*loss > 0.0) || !std::isfinite(*loss)) {
            throw ParseError(where + ": loss must be a positive number", std::string(lines[ln]), ln + 1);
        }
        o.loss = *loss;
        o.capability = parse_optional_number(get(3), where);
        o.compute = parse_optional_number(get(4), where);
        o.tokens_seen = parse_optional_number(get(5), where);
        if (auto st = std::string(text::trim(get(6))); !st.empty()) o.stage = st;
        rows.push_back(std::move(o));
    }
    return rows;
}

std::vector<ModelObservation> read_observation_table(const std::string& path) {
    return parse_observation_csv(text::read_file(path), path);
}

std::string format_observation_csv(const std::vector<ModelObservation>& rows) {
    std::string out = "model_id,domain_id,loss,capability,compute,tokens_seen,stage\n";
    for (const auto& r : rows) {
        out += text::csv_escape(r.model_id) + "," + text::csv_escape(r.domain_id) + "," + format_number(r.loss) + ",";
        out += (r.capability ? format_number(*r.capability) : "") + ",";
        out += (r.compute ? format_number(*r.compute) : "") + ",";
        out += (r.tokens_seen ? format_number(*r.tokens_seen) : "") + ",";
        out += (r.stage ? text::csv_escape(*r.stage) : "") + "\n";
    }
    return out;
}

void write_observation_table(const std::string& path, const std::vector<ModelObservation>& rows) {
    text::write_file_atomic(path, format_observation_csv(rows));
}

void upsert_observation(std::vector<ModelObservation>& rows, const ModelObservation& row) {
    for (auto& r : rows) {
        if (r.model_id == row.model_id && r.domain_id == row.domain_id && r.stage == row.stage &&
            r.tokens_seen == row.tokens_seen) {
            r = row;
            return;
        }
    }
    rows.push_back(row);
}

} // namespace capval
