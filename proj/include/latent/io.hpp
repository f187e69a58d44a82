#ifndef LATENT_IO_HPP_
#define LATENT_IO_HPP_

#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "latent/oracle.hpp"
#include "latent/trainer.hpp"
#include "latent/waterfill.hpp"

namespace latent::io {

using nlohmann::json;

/// Reads a whole file; throws Error(kIo).
std::string read_file(const std::string& path);
/// Parses JSON text; throws Error(kParse).
json parse_json(const std::string& text, const std::string& origin = "input");

/// {pi_ref, pi_prop, eps, u_star?, beta?}. Field-level problems are reported as
/// Error(kParse / kNegativeEntry / ...) naming the field; a reference entry below
/// the floor surfaces as Error(kBelowFloor).
StateInstance state_instance_from_json(const json& doc);
json to_json(const WaterfillResult& result);
json to_json(const DeltaJDecomposition& d);

json to_json(const VerificationReport& report);

MazeSpec maze_spec_from_json(const json& doc);
json to_json(const MazeSpec& spec);

/// JSON object, or `key = value` lines when the text does not start with '{'.
TrainConfig train_config_from_text(const std::string& text);
TrainConfig train_config_from_json(const json& doc);
json to_json(const TrainConfig& config);

json to_json(const ComparisonReport& report);

json to_json(const TabularPolicy& policy);
TabularPolicy policy_from_json(const json& doc);

json to_json(const Trajectory& trajectory, const Maze& maze);

}  // namespace latent::io

#endif  // LATENT_IO_HPP_
