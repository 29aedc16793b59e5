#pragma once

// Informative mutual-relation mining: identity prototypes, top-K informative
// identity sets, and the per-identity teacher feature bank.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "coupleface/data_io.hpp"
#include "coupleface/vec_math.hpp"

namespace coupleface {

inline constexpr std::uint32_t kInformativeSetsFormatVersion = 1;

struct PrototypeTable {
  Matrix prototypes;                       // M x d; row m is r_m
  std::vector<std::size_t> sample_counts;  // l_m
};

// r_m = mean of identity m's L2-normalized features. Not renormalized.
// Throws EmptyIdentity if an identity in [0, M) has no samples.
PrototypeTable compute_prototypes(const EmbeddingMatrix& features);

// M rows of K identity indices. Row m never contains m; entries are unique.
class InformativeSets {
 public:
  InformativeSets() = default;
  InformativeSets(std::size_t num_identities, std::size_t k, std::vector<Label> table);

  std::size_t num_identities() const noexcept { return num_identities_; }
  std::size_t k() const noexcept { return k_; }
  std::span<const Label> row(std::size_t m) const { return {table_.data() + m * k_, k_}; }
  const std::vector<Label>& table() const noexcept { return table_; }

  friend bool operator==(const InformativeSets&, const InformativeSets&) = default;

 private:
  std::size_t num_identities_ = 0;
  std::size_t k_ = 0;
  std::vector<Label> table_;
};

// H_m = the k identities n != m with the largest cos(r_m, r_n), descending,
// lower index first on ties. Throws InsufficientIdentities when k > M - 1.
InformativeSets build_informative_sets(const PrototypeTable& protos, std::size_t k);

// k distinct identities != m drawn uniformly per row (no similarity ranking).
InformativeSets build_random_sets(std::size_t num_identities, std::size_t k, std::uint64_t seed);

void write_informative_sets(const std::filesystem::path& path, const InformativeSets& sets);
InformativeSets read_informative_sets(const std::filesystem::path& path);

// M x d bank holding one teacher feature per identity.
class FeatureBank {
 public:
  FeatureBank() = default;

  // Row m is a seeded uniform pick among identity m's features.
  static FeatureBank init(const EmbeddingMatrix& features, std::uint64_t seed);

  bool initialized() const noexcept { return initialized_; }
  const Matrix& rows() const noexcept { return bank_; }
  std::span<const double> row(Label m) const { return bank_.row(m); }

  // E[labels[i]] <- features row i, in batch order (later duplicates win).
  void update(const Matrix& batch_features, std::span<const Label> labels);

  // K x d matrix whose row k is E[sets.row(label)[k]].
  Matrix gather(const InformativeSets& sets, Label label) const;

 private:
  Matrix bank_;
  bool initialized_ = false;
};

}  // namespace coupleface
