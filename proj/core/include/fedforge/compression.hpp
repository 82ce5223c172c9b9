#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fedforge/config.hpp"

namespace fedforge::compression {

inline constexpr int kQuantMin = -128;
inline constexpr int kQuantMax = 127;
/// Largest dimension decode() accepts (256 MiB of float32).
inline constexpr std::uint32_t kMaxDimension = 1U << 26;

struct Dense {
  std::vector<float> values;
  bool operator==(const Dense&) const = default;
};

/// Affine int8 quantization of a whole vector: x ~ scale * (q - zeroPoint).
struct Quantized {
  float scale = 1.0F;
  std::int32_t zeroPoint = 0;
  std::vector<std::int8_t> q;

  std::size_t size() const { return q.size(); }
  bool operator==(const Quantized&) const = default;
};

enum class SparseKind : std::uint8_t { TopK, RandK };

struct Sparse {
  std::vector<std::uint32_t> indices;  // strictly ascending
  std::vector<float> values;
  std::uint32_t d = 0;
  SparseKind kind = SparseKind::TopK;
  std::uint64_t seed = 0;  // selection seed for RandK, 0 for TopK

  bool operator==(const Sparse&) const = default;
};

using Payload = std::variant<Dense, Quantized, Sparse>;

/// Wire tags.
enum class Tag : std::uint8_t { Dense = 0, Quantized = 1, TopK = 2, RandK = 3 };

/// Throws EmptyInput or NonFiniteInput.
Quantized quantize(std::span<const float> x);
std::vector<float> dequantize(const Quantized& p);

/// Number of retained entries for fraction k of d: max(1, ceil(k*d)).
std::size_t retained_count(double k, std::size_t d);

/// Keeps the retained_count(k, d) entries of largest magnitude; ties go to
/// the lower index. Throws BadFraction unless 0 < k <= 1.
Sparse top_k(std::span<const float> x, double k);
/// Uniform selection without replacement, deterministic in seed.
Sparse rand_k(std::span<const float> x, double k, std::uint64_t seed);

/// Throws CorruptPayload on inconsistent payloads.
std::vector<float> decompress(const Payload& p);

/// Client-side Compress step for the configured scheme.
Payload compress(std::span<const float> x, config::Compress scheme, std::optional<double> k,
                 std::uint64_t seed);

/// Little-endian frame: tag u8 | d u32 | header | body.
///   dense:     d x f32
///   quantized: S f32, Z i32 | d x i8
///   sparse:    m u32, seed u64 | m x u32 indices, m x f32 values
std::vector<std::uint8_t> encode(const Payload& p);
/// Throws CorruptPayload for any malformed input or d > kMaxDimension; never
/// reads out of bounds.
Payload decode(std::span<const std::uint8_t> bytes);
std::size_t encoded_size(const Payload& p);

}  // namespace fedforge::compression
