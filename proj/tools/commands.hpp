#pragma once

#include <string>

#include <json.hpp>

namespace sfs::cli {

inline constexpr const char* kVersion = "0.1.0";

// Each command takes a fully-resolved config (defaults + config file + flags
// already merged) and writes a manifest next to its outputs so any run can be
// replayed byte-for-byte.
int run_render_dataset(const nlohmann::json& cfg);
int run_train(const nlohmann::json& cfg);
int run_sample(const nlohmann::json& cfg);
int run_eval(const nlohmann::json& cfg);
int run_replay(const std::string& manifest_path);

void write_manifest(const std::string& out_dir, const std::string& command,
                    const nlohmann::json& cfg);

}  // namespace sfs::cli
