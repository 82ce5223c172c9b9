#pragma once

#include <filesystem>

#include "fedforge/config.hpp"
#include "fedforge/nn.hpp"

namespace fedforge::io {

inline constexpr const char* kDataFile = "data.csv";
inline constexpr const char* kDataConfigFile = "dataconfig.json";

/// Reads `dir/dataconfig.json`. Throws MissingDataConfig or MalformedDataConfig.
config::DataConfig load_data_config(const std::filesystem::path& dir);

/// Reads `dir/data.csv` (features..., label) checked against dataconfig.json.
nn::Dataset load_dataset(const std::filesystem::path& dir);

/// Writes data.csv and dataconfig.json into `dir`, creating it. Throws IoFailure.
void write_dataset(const std::filesystem::path& dir, const nn::Dataset& data);

}  // namespace fedforge::io
