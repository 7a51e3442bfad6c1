#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempologic/induction.hpp"

namespace tempologic {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Overrides the fields present in `j`; unknown keys are a ConfigError.
void apply_train_config(const nlohmann::json& j, TrainConfig& config);
nlohmann::json train_config_to_json(const TrainConfig& config);

// Parses `args` (without the program name) and runs the selected command.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace tempologic
