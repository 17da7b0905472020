#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cspine/cli/config.hpp"
#include "cspine/data/dataset.hpp"

namespace cspine::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

inline const char* kDataDirEnv = "CSPINE_DATA_DIR";
inline const char* kManifestName = "manifest.json";
inline const char* kConfigEchoName = "config.resolved.toml";

/// Per-command inputs that are not part of the run config.
struct CommandArgs {
    std::string cnn_checkpoint;    // defaults to <out>/cnn.ckpt
    std::string blstm_checkpoint;  // defaults to <out>/blstm<H>.ckpt
    std::string case_id;
    std::optional<Index> slice;
};

struct Dataset {
    data::Manifest manifest;
    std::vector<data::HUVolume> volumes;  // manifest order
};

/// Generates cases and the manifest under `dir`.
data::Manifest generate_dataset(const RunConfig& cfg, const std::string& dir);
/// Reads the manifest and every case it lists; IoError if anything is missing.
Dataset load_dataset(const std::string& dir);

/// Writes <dir>/config.resolved.toml.
void echo_config(const RunConfig& cfg, const std::string& dir);

void cmd_gen_data(const RunConfig& cfg, const std::string& target_dir, std::ostream& log);
void cmd_preprocess(const RunConfig& cfg, const CommandArgs& args, std::ostream& log);
void cmd_train_cnn(const RunConfig& cfg, std::ostream& log);
void cmd_train_blstm(const RunConfig& cfg, const CommandArgs& args, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, const CommandArgs& args, std::ostream& log);
void cmd_run_cv(const RunConfig& cfg, std::ostream& log);
void cmd_gradcam(const RunConfig& cfg, const CommandArgs& args, std::ostream& log);

/// Full command line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cspine::cli
