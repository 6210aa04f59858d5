#include "journal.hpp"

#include "capval/error.hpp"
#include "capval/text.hpp"

#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>

namespace capval::synthesis {

using nlohmann::json;

Journal::Journal(std::string path, std::string fingerprint) : path_(std::move(path)) {
    namespace fs = std::filesystem;
    if (path_.empty()) return;
    std::error_code ec;
    if (fs::exists(path_, ec)) {
        const std::string contents = text::read_file(path_);
        const auto lines = text::split_lines(contents);
        bool header_seen = false;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (text::trim(lines[i]).empty()) continue;
            json record;
            try {
                record = json::parse(lines[i]);
            } catch (const json::parse_error&) {
                spdlog::warn("{}:{}: ignoring unreadable journal line", path_, i + 1);
                continue;
            }
            if (!header_seen) {
                if (record.value("type", std::string{}) != "header") {
                    throw ConfigError("journal '" + path_ + "' does not start with a header record");
                }
                if (record.value("fingerprint", std::string{}) != fingerprint) {
                    throw ConfigError("journal '" + path_ +
                                      "' belongs to a different configuration; remove it or rerun with --force");
                }
                header_seen = true;
                continue;
            }
            records_.push_back(std::move(record));
        }
        if (header_seen) {
            // Guarantee the next append starts on a fresh line after a torn write.
            if (!contents.empty() && contents.back() != '\n') {
                std::ofstream out(path_, std::ios::app | std::ios::binary);
                out << '\n';
            }
            return;
        }
    }
    if (auto parent = fs::path(path_).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path_, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot create journal '" + path_ + "'");
    out << json{{"type", "header"}, {"fingerprint", fingerprint}}.dump() << '\n';
}

void Journal::append(const json& record) {
    if (!enabled()) return;
    std::lock_guard lock(mutex_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw IoError("cannot append to journal '" + path_ + "'");
    out << record.dump() << '\n';
    out.flush();
    records_.push_back(record);
}

} // namespace capval::synthesis
