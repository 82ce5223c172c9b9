#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "fedforge/nn.hpp"

namespace fedforge::synthetic {

enum class Kind { Blobs, Moons };

Kind parse_kind(std::string_view name);

/// Two Gaussian clusters (unit variance) centred at (-2,-2) and (2,2).
nn::Dataset make_blobs(std::size_t n, std::uint64_t seed);
/// Two interleaving half circles with Gaussian noise.
nn::Dataset make_moons(std::size_t n, std::uint64_t seed, double noise = 0.1);
nn::Dataset make(Kind kind, std::size_t n, std::uint64_t seed);

/// Train/test partition of a generated dataset.
struct Partition {
  std::vector<nn::Dataset> clients;
  nn::Dataset serverTest;
};

/// 80/20 train/test split (train = floor(0.8 n)), train rows dealt into
/// `clients` parts whose sizes differ by at most one.
Partition partition(const nn::Dataset& data, std::size_t clients, std::uint64_t seed);

/// Writes `outDir/client-<i>/` (i from 1) and `outDir/server-test/`.
/// Requires n >= clients. Throws IoFailure.
Partition generate(Kind kind, std::size_t n, std::size_t clients, const std::filesystem::path& outDir,
                   std::uint64_t seed);

}  // namespace fedforge::synthetic
