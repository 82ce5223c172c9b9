#include "fedforge/compression.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "fedforge/error.hpp"

namespace fedforge::compression {

static_assert(std::endian::native == std::endian::little, "wire codec assumes a little-endian host");

namespace {

void check_fraction(double k) {
  if (!(k > 0.0 && k <= 1.0)) {
    throw Error(ErrorCode::BadFraction, "k", "must be in (0,1], got " + std::to_string(k));
  }
}

// Integral constants reproduce exactly with a unit scale; anything else is
// mapped to the end of the int8 range with a matching scale.
Quantized quantize_constant(float value, std::size_t d) {
  Quantized p;
  const double v = value;
  if (v == std::floor(v) && std::abs(v) <= static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
    p.scale = 1.0F;
    p.zeroPoint = static_cast<std::int32_t>(-v);
    p.q.assign(d, 0);
  } else {
    p.scale = static_cast<float>(std::abs(v) / kQuantMax);
    p.zeroPoint = 0;
    p.q.assign(d, static_cast<std::int8_t>(v > 0 ? kQuantMax : -kQuantMax));
  }
  return p;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
void put_array(std::vector<std::uint8_t>& out, const std::vector<T>& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  template <typename T>
  std::vector<T> get_array(std::size_t n) {
    if (n > remaining() / sizeof(T)) corrupt("truncated body");
    std::vector<T> v(n);
    if (n) std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] static void corrupt(const std::string& why) {
    throw Error(ErrorCode::CorruptPayload, "payload", why);
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) corrupt("truncated header");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Quantized quantize(std::span<const float> x) {
  if (x.empty()) throw Error(ErrorCode::EmptyInput, "x");
  for (float v : x) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "x");
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const float alpha = *mn;
  const float beta = *mx;
  if (alpha == beta) return quantize_constant(alpha, x.size());

  Quantized p;
  p.scale = static_cast<float>((static_cast<double>(beta) - alpha) / (kQuantMax - kQuantMin));
  const double s = p.scale;
  p.zeroPoint = static_cast<std::int32_t>(std::round(kQuantMin - alpha / s));
  p.q.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::round(x[i] / s + p.zeroPoint);
    p.q[i] = static_cast<std::int8_t>(std::clamp(v, static_cast<double>(kQuantMin), static_cast<double>(kQuantMax)));
  }
  return p;
}

std::vector<float> dequantize(const Quantized& p) {
  std::vector<float> out(p.q.size());
  const double s = p.scale;
  for (std::size_t i = 0; i < p.q.size(); ++i) {
    out[i] = static_cast<float>(s * (static_cast<double>(p.q[i]) - p.zeroPoint));
  }
  return out;
}

std::size_t retained_count(double k, std::size_t d) {
  check_fraction(k);
  // Tolerance absorbs representation error in k (0.3 * 10 is 3.0000000000000004).
  const double exact = k * static_cast<double>(d);
  const auto m = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(m, 1, std::max<std::size_t>(d, 1));
}

Sparse top_k(std::span<const float> x, double k) {
  const std::size_t m = retained_count(k, x.size());
  Sparse out;
  out.d = static_cast<std::uint32_t>(x.size());
  out.kind = SparseKind::TopK;
  if (x.empty()) return out;
  std::vector<std::uint32_t> order(x.size());
  std::iota(order.begin(), order.end(), 0U);
  auto larger = [&](std::uint32_t a, std::uint32_t b) {
    const float fa = std::abs(x[a]);
    const float fb = std::abs(x[b]);
    return fa != fb ? fa > fb : a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m - 1), order.end(), larger);
  order.resize(m);
  std::sort(order.begin(), order.end());
  out.indices = std::move(order);
  out.values.reserve(m);
  for (auto i : out.indices) out.values.push_back(x[i]);
  return out;
}

Sparse rand_k(std::span<const float> x, double k, std::uint64_t seed) {
  const std::size_t m = retained_count(k, x.size());
  Sparse out;
  out.d = static_cast<std::uint32_t>(x.size());
  out.kind = SparseKind::RandK;
  out.seed = seed;
  if (x.empty()) return out;
  std::vector<std::uint32_t> pool(x.size());
  std::iota(pool.begin(), pool.end(), 0U);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first m slots become a uniform m-subset.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  out.indices = std::move(pool);
  out.values.reserve(m);
  for (auto i : out.indices) out.values.push_back(x[i]);
  return out;
}

std::vector<float> decompress(const Payload& payload) {
  return std::visit(
      [](const auto& p) -> std::vector<float> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Dense>) {
          return p.values;
        } else if constexpr (std::is_same_v<T, Quantized>) {
          return dequantize(p);
        } else {
          if (p.indices.size() != p.values.size() || p.indices.size() > p.d) {
            throw Error(ErrorCode::CorruptPayload, "sparse", "index/value length mismatch");
          }
          std::vector<float> out(p.d, 0.0F);
          for (std::size_t i = 0; i < p.indices.size(); ++i) {
            if (p.indices[i] >= p.d) throw Error(ErrorCode::CorruptPayload, "sparse", "index out of range");
            if (i > 0 && p.indices[i] <= p.indices[i - 1]) {
              throw Error(ErrorCode::CorruptPayload, "sparse", "indices not strictly ascending");
            }
            out[p.indices[i]] = p.values[i];
          }
          return out;
        }
      },
      payload);
}

Payload compress(std::span<const float> x, config::Compress scheme, std::optional<double> k, std::uint64_t seed) {
  switch (scheme) {
    case config::Compress::No: return Dense{{x.begin(), x.end()}};
    case config::Compress::Quantize: return quantize(x);
    case config::Compress::TopK: return top_k(x, k.value_or(config::kDefaultCompressParam));
    case config::Compress::RandK: return rand_k(x, k.value_or(config::kDefaultCompressParam), seed);
  }
  return Dense{{x.begin(), x.end()}};
}

std::size_t encoded_size(const Payload& payload) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Dense>) {
          return 5 + 4 * p.values.size();
        } else if constexpr (std::is_same_v<T, Quantized>) {
          return 13 + p.q.size();
        } else {
          return 17 + 8 * p.indices.size();
        }
      },
      payload);
}

std::vector<std::uint8_t> encode(const Payload& payload) {
  std::vector<std::uint8_t> out;
  out.reserve(encoded_size(payload));
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Dense>) {
          put(out, Tag::Dense);
          put(out, static_cast<std::uint32_t>(p.values.size()));
          put_array(out, p.values);
        } else if constexpr (std::is_same_v<T, Quantized>) {
          put(out, Tag::Quantized);
          put(out, static_cast<std::uint32_t>(p.q.size()));
          put(out, p.scale);
          put(out, p.zeroPoint);
          put_array(out, p.q);
        } else {
          put(out, p.kind == SparseKind::TopK ? Tag::TopK : Tag::RandK);
          put(out, p.d);
          put(out, static_cast<std::uint32_t>(p.indices.size()));
          put(out, p.seed);
          put_array(out, p.indices);
          put_array(out, p.values);
        }
      },
      payload);
  return out;
}

Payload decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto tag = r.get<std::uint8_t>();
  const auto d = r.get<std::uint32_t>();
  if (d > kMaxDimension) Reader::corrupt("dimension too large");
  Payload out;
  switch (static_cast<Tag>(tag)) {
    case Tag::Dense: {
      Dense p;
      p.values = r.get_array<float>(d);
      out = std::move(p);
      break;
    }
    case Tag::Quantized: {
      Quantized p;
      p.scale = r.get<float>();
      p.zeroPoint = r.get<std::int32_t>();
      if (!std::isfinite(p.scale) || !(p.scale > 0.0F)) Reader::corrupt("non-positive scale");
      p.q = r.get_array<std::int8_t>(d);
      out = std::move(p);
      break;
    }
    case Tag::TopK:
    case Tag::RandK: {
      Sparse p;
      p.kind = static_cast<Tag>(tag) == Tag::TopK ? SparseKind::TopK : SparseKind::RandK;
      p.d = d;
      const auto m = r.get<std::uint32_t>();
      p.seed = r.get<std::uint64_t>();
      if (m > d) Reader::corrupt("more entries than dimension");
      if (static_cast<std::uint64_t>(m) * 8 != r.remaining()) Reader::corrupt("body length does not match m");
      p.indices = r.get_array<std::uint32_t>(m);
      p.values = r.get_array<float>(m);
      for (std::size_t i = 0; i < p.indices.size(); ++i) {
        if (p.indices[i] >= d) Reader::corrupt("index out of range");
        if (i > 0 && p.indices[i] <= p.indices[i - 1]) Reader::corrupt("indices not strictly ascending");
      }
      out = std::move(p);
      break;
    }
    default:
      Reader::corrupt("unknown tag " + std::to_string(tag));
  }
  if (r.remaining() != 0) Reader::corrupt("trailing bytes");
  return out;
}

}  // namespace fedforge::compression
