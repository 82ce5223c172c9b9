#include "fedforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "fedforge/dataset_io.hpp"
#include "fedforge/error.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::synthetic {

namespace {

nn::Dataset empty_2d(std::size_t n) {
  nn::Dataset d;
  d.cols = 2;
  d.features.reserve(2 * n);
  d.labels.reserve(n);
  d.config.shape = {1, 2};
  d.config.numDatapoints = static_cast<int>(n);
  d.config.task = config::Algo::Classification;
  d.config.numLabels = 2;
  return d;
}

}  // namespace

Kind parse_kind(std::string_view name) {
  if (name == "blobs") return Kind::Blobs;
  if (name == "moons") return Kind::Moons;
  throw Error(ErrorCode::BadEnumValue, "kind", "expected blobs or moons, got '" + std::string(name) + "'");
}

nn::Dataset make_blobs(std::size_t n, std::uint64_t seed) {
  nn::Dataset d = empty_2d(n);
  std::mt19937_64 rng(mix_seed(seed, 0xB10B5));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    const double centre = cls == 0 ? -2.0 : 2.0;
    d.features.push_back(static_cast<float>(centre + noise(rng)));
    d.features.push_back(static_cast<float>(centre + noise(rng)));
    d.labels.push_back(static_cast<float>(cls));
  }
  return d;
}

nn::Dataset make_moons(std::size_t n, std::uint64_t seed, double noise) {
  nn::Dataset d = empty_2d(n);
  std::mt19937_64 rng(mix_seed(seed, 0x300));
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, noise);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    const double t = angle(rng);
    double x = std::cos(t);
    double y = std::sin(t);
    if (cls == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    d.features.push_back(static_cast<float>(x + jitter(rng)));
    d.features.push_back(static_cast<float>(y + jitter(rng)));
    d.labels.push_back(static_cast<float>(cls));
  }
  return d;
}

nn::Dataset make(Kind kind, std::size_t n, std::uint64_t seed) {
  return kind == Kind::Blobs ? make_blobs(n, seed) : make_moons(n, seed);
}

Partition partition(const nn::Dataset& data, std::size_t clients, std::uint64_t seed) {
  const std::size_t n = data.rows();
  if (clients == 0 || n < clients) {
    throw Error(ErrorCode::ValueOutOfRange, "clients", "need 1 <= clients <= n");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, 0x5E1171));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t train = n * 4 / 5;
  if (train < clients) throw Error(ErrorCode::ValueOutOfRange, "n", "too few rows for the requested clients");
  Partition p;
  std::size_t start = 0;
  for (std::size_t c = 0; c < clients; ++c) {
    const std::size_t len = train / clients + (c < train % clients ? 1 : 0);
    p.clients.push_back(data.subset(std::span<const std::size_t>(order.data() + start, len)));
    start += len;
  }
  p.serverTest = data.subset(std::span<const std::size_t>(order.data() + train, n - train));
  return p;
}

Partition generate(Kind kind, std::size_t n, std::size_t clients, const std::filesystem::path& outDir,
                   std::uint64_t seed) {
  auto p = partition(make(kind, n, seed), clients, seed);
  for (std::size_t c = 0; c < p.clients.size(); ++c) {
    io::write_dataset(outDir / ("client-" + std::to_string(c + 1)), p.clients[c]);
  }
  io::write_dataset(outDir / "server-test", p.serverTest);
  return p;
}

}  // namespace fedforge::synthetic
