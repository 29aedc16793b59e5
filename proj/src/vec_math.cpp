#include "coupleface/vec_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "coupleface/error.hpp"

namespace coupleface {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorCode::kShapeMismatch, "matrix data length does not equal rows * cols");
  }
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols_) fail(ErrorCode::kShapeMismatch, "row width mismatch");
  std::copy(values.begin(), values.end(), row(r).begin());
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kShapeMismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

namespace {

double checked_norm(std::span<const double> v) {
  double n = l2_norm(v);
  if (!(n > kNormEpsilon)) fail(ErrorCode::kZeroVector, "vector norm is zero");
  return n;
}

}  // namespace

Vector l2_normalize(std::span<const double> v) {
  double n = checked_norm(v);
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kShapeMismatch, "cosine: length mismatch");
  double c = dot(a, b) / (checked_norm(a) * checked_norm(b));
  return std::clamp(c, -1.0, 1.0);
}

Vector cosine_grad_lhs(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kShapeMismatch, "cosine_grad_lhs: length mismatch");
  double na = checked_norm(a);
  double nb = checked_norm(b);
  double c = dot(a, b) / (na * nb);
  Vector g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) g[i] = b[i] / (na * nb) - c * a[i] / (na * na);
  return g;
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k,
                                      std::optional<std::size_t> exclude) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (exclude && *exclude == i) continue;
    idx.push_back(i);
  }
  if (k > idx.size()) {
    fail(ErrorCode::kInsufficientCandidates,
         "requested top-" + std::to_string(k) + " of " + std::to_string(idx.size()) +
             " candidates");
  }
  auto better = [&](std::size_t x, std::size_t y) {
    if (scores[x] != scores[y]) return scores[x] > scores[y];
    return x < y;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (spare_normal_) {
    double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_normal_ = r * std::sin(theta);
  return r * std::cos(theta);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace coupleface
