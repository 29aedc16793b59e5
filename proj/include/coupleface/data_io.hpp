#pragma once

// Synthetic identity datasets, the CFDS/CFEM binary formats, and seeded
// epoch batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "coupleface/vec_math.hpp"

namespace coupleface {

using Label = std::uint32_t;

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

// L x D_in inputs with one identity label per row.
struct LabeledDataset {
  Matrix inputs;
  std::vector<Label> labels;
  std::size_t num_identities = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

// L x d features with one identity label per row.
struct EmbeddingMatrix {
  Matrix features;
  std::vector<Label> labels;
  std::size_t num_identities = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

struct SyntheticParams {
  std::size_t num_identities = 200;
  std::size_t per_identity = 50;
  std::size_t input_dim = 64;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
};

// Per identity: a center drawn uniformly on the unit sphere, then
// `per_identity` samples center + N(0, sigma^2 I). Rows are identity-major.
LabeledDataset gen_synthetic(const SyntheticParams& params);

// Moves the last `holdout_per_identity` samples of every identity into the
// second dataset. Sample order within each part is preserved.
std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& ds,
                                                        std::size_t holdout_per_identity);

// Checks labels < num_identities and that every identity has a sample.
void validate_labels(std::span<const Label> labels, std::size_t num_identities);

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& e);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset read_dataset(const std::filesystem::path& path);

// One epoch of batches over [0, size): a seeded uniform shuffle cut into
// consecutive chunks, the last one possibly short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t size, std::size_t batch_size,
                                                    std::uint64_t epoch_seed);

// Infinite batch stream; epoch e is shuffled with mix_seed(seed, e).
class BatchIterator {
 public:
  BatchIterator(std::size_t size, std::size_t batch_size, std::uint64_t seed);

  const std::vector<std::size_t>& next();
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
};

// Rows `indices` of `m`, in order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

}  // namespace coupleface
