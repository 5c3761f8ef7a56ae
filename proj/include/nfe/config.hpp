#pragma once

#include "nfe/anomaly.hpp"
#include "nfe/filter.hpp"
#include "nfe/malware.hpp"
#include "nfe/session.hpp"
#include "nfe/store.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nfe {

struct SourceSpec {
    std::string source_id;
    std::filesystem::path path;  // file or directory of captures
};

struct EngineConfig {
    std::filesystem::path store;
    std::filesystem::path rules;
    Action default_action = Action::store_metadata;
    std::vector<SourceSpec> sources;
    AssemblerConfig session;
    StoreConfig index;
    AnomalyConfig anomaly;
    MalwareConfig malware;
    std::filesystem::path geoip_csv;
    std::int64_t soc_slack_us = 30'000'000;
    std::string api_bind = "127.0.0.1:8080";
    std::filesystem::path alert_log;
    std::filesystem::path ui_dir;

    /// Throws ConfigInvalid.
    void validate() const;
};

/// Parses the TOML-style config text: `key = value` lines, `[section]`
/// headers, `#` comments; values are quoted strings, integers, decimals or
/// true/false. Relative paths resolve against `base_dir`. Unknown sections
/// and keys throw ConfigInvalid naming the line.
EngineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
EngineConfig load_config(const std::filesystem::path& path);

}  // namespace nfe
