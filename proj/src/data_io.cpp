#include "coupleface/data_io.hpp"

#include <cmath>

#include "coupleface/binary_io.hpp"
#include "coupleface/error.hpp"

namespace coupleface {

LabeledDataset gen_synthetic(const SyntheticParams& p) {
  if (p.num_identities < 2 || p.per_identity < 1 || p.input_dim < 1 ||
      !(p.noise_sigma >= 0.0) || !std::isfinite(p.noise_sigma)) {
    fail(ErrorCode::kInvalidParams,
         "gen_synthetic needs m >= 2, per_id >= 1, input_dim >= 1, noise_sigma >= 0");
  }
  Rng rng(p.seed);
  const std::size_t total = p.num_identities * p.per_identity;
  LabeledDataset ds{Matrix(total, p.input_dim), std::vector<Label>(total), p.num_identities};

  Vector center(p.input_dim);
  std::size_t row = 0;
  for (std::size_t m = 0; m < p.num_identities; ++m) {
    double norm = 0.0;
    do {
      for (auto& x : center) x = rng.normal();
      norm = l2_norm(center);
    } while (!(norm > kNormEpsilon));
    for (auto& x : center) x /= norm;

    for (std::size_t s = 0; s < p.per_identity; ++s, ++row) {
      auto out = ds.inputs.row(row);
      for (std::size_t j = 0; j < p.input_dim; ++j) {
        out[j] = center[j] + p.noise_sigma * rng.normal();
      }
      ds.labels[row] = static_cast<Label>(m);
    }
  }
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split_holdout(const LabeledDataset& ds,
                                                        std::size_t holdout_per_identity) {
  std::vector<std::size_t> count(ds.num_identities, 0);
  for (Label y : ds.labels) ++count[y];
  std::vector<std::size_t> seen(ds.num_identities, 0);
  std::vector<std::size_t> keep_idx, hold_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Label y = ds.labels[i];
    if (count[y] <= holdout_per_identity) {
      fail(ErrorCode::kInvalidParams, "holdout would leave identity " + std::to_string(y) +
                                          " without training samples");
    }
    if (seen[y]++ < count[y] - holdout_per_identity) {
      keep_idx.push_back(i);
    } else {
      hold_idx.push_back(i);
    }
  }
  auto subset = [&](const std::vector<std::size_t>& idx) {
    LabeledDataset out{gather_rows(ds.inputs, idx), {}, ds.num_identities};
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
    return out;
  };
  return {subset(keep_idx), subset(hold_idx)};
}

void validate_labels(std::span<const Label> labels, std::size_t num_identities) {
  std::vector<bool> present(num_identities, false);
  for (Label y : labels) {
    if (y >= num_identities) {
      fail(ErrorCode::kLabelOutOfRange,
           "label " + std::to_string(y) + " >= M=" + std::to_string(num_identities));
    }
    present[y] = true;
  }
  for (std::size_t m = 0; m < num_identities; ++m) {
    if (!present[m]) fail(ErrorCode::kEmptyIdentity, "identity " + std::to_string(m) + " has no samples");
  }
}

namespace {

// CFEM and CFDS share one layout: magic, version, L u64, width u32, M u32,
// labels u32[L], values f32[L * width].
void write_labeled_matrix(const std::filesystem::path& path, std::string_view magic,
                          std::uint32_t version, const Matrix& values,
                          std::span<const Label> labels, std::size_t num_identities) {
  if (values.rows() != labels.size()) {
    fail(ErrorCode::kShapeMismatch, "row count differs from label count");
  }
  binary::Writer w;
  w.magic(magic);
  w.u32(version);
  w.u64(values.rows());
  w.u32(static_cast<std::uint32_t>(values.cols()));
  w.u32(static_cast<std::uint32_t>(num_identities));
  for (Label y : labels) w.u32(y);
  for (double x : values.flat()) w.f32(static_cast<float>(x));
  binary::write_file_atomic(path, w.bytes());
}

struct LabeledMatrix {
  Matrix values;
  std::vector<Label> labels;
  std::size_t num_identities;
};

LabeledMatrix read_labeled_matrix(const std::filesystem::path& path, std::string_view magic,
                                  std::uint32_t version) {
  binary::Reader r(binary::read_file(path));
  r.expect_magic(magic);
  r.expect_version(version);
  std::uint64_t rows = r.u64();
  std::uint32_t cols = r.u32();
  std::uint32_t m = r.u32();
  // Payload size check up front, before allocating.
  if (rows > r.remaining() / (4ULL * (static_cast<std::uint64_t>(cols) + 1ULL))) {
    fail(ErrorCode::kTruncatedFile, path.string() + " is shorter than its header declares");
  }
  LabeledMatrix out{Matrix(rows, cols), std::vector<Label>(rows), m};
  for (auto& y : out.labels) {
    y = r.u32();
    if (y >= m) fail(ErrorCode::kLabelOutOfRange, "label " + std::to_string(y) + " in " + path.string());
  }
  for (auto& x : out.values.flat()) x = static_cast<double>(r.f32());
  return out;
}

}  // namespace

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& e) {
  write_labeled_matrix(path, "CFEM", kEmbeddingFormatVersion, e.features, e.labels,
                       e.num_identities);
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  auto lm = read_labeled_matrix(path, "CFEM", kEmbeddingFormatVersion);
  return {std::move(lm.values), std::move(lm.labels), lm.num_identities};
}

void write_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  write_labeled_matrix(path, "CFDS", kDatasetFormatVersion, ds.inputs, ds.labels,
                       ds.num_identities);
}

LabeledDataset read_dataset(const std::filesystem::path& path) {
  auto lm = read_labeled_matrix(path, "CFDS", kDatasetFormatVersion);
  return {std::move(lm.values), std::move(lm.labels), lm.num_identities};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t size, std::size_t batch_size,
                                                    std::uint64_t epoch_seed) {
  if (batch_size == 0) fail(ErrorCode::kInvalidParams, "batch_size must be >= 1");
  std::vector<std::size_t> order(size);
  for (std::size_t i = 0; i < size; ++i) order[i] = i;
  Rng rng(epoch_seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < size; start += batch_size) {
    std::size_t end = std::min(size, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

BatchIterator::BatchIterator(std::size_t size, std::size_t batch_size, std::uint64_t seed)
    : size_(size), batch_size_(batch_size), seed_(seed) {
  if (size == 0) fail(ErrorCode::kInvalidParams, "cannot batch an empty dataset");
  batches_ = epoch_batches(size_, batch_size_, mix_seed(seed_, epoch_));
}

const std::vector<std::size_t>& BatchIterator::next() {
  if (cursor_ == batches_.size()) {
    ++epoch_;
    cursor_ = 0;
    batches_ = epoch_batches(size_, batch_size_, mix_seed(seed_, epoch_));
  }
  return batches_[cursor_++];
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) fail(ErrorCode::kIndexOutOfRange, "row index out of range");
    out.set_row(i, m.row(indices[i]));
  }
  return out;
}

}  // namespace coupleface
