#pragma once

#include <json.hpp>

#include <mutex>
#include <string>
#include <vector>

namespace capval::synthesis {

// Append-only JSONL progress log. The first line is a header carrying the
// run fingerprint; resuming against a different fingerprint is refused. A torn
// final line (interrupted write) is ignored on load.
class Journal {
public:
    Journal() = default;
    Journal(std::string path, std::string fingerprint);

    bool enabled() const noexcept { return !path_.empty(); }
    const std::vector<nlohmann::json>& records() const noexcept { return records_; }
    void append(const nlohmann::json& record);

private:
    std::string path_;
    std::vector<nlohmann::json> records_;
    std::mutex mutex_;
};

} // namespace capval::synthesis
