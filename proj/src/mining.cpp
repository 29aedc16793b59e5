#include "coupleface/mining.hpp"

#include <algorithm>
#include <numeric>

#include "coupleface/binary_io.hpp"
#include "coupleface/error.hpp"

namespace coupleface {

PrototypeTable compute_prototypes(const EmbeddingMatrix& e) {
  const std::size_t m = e.num_identities;
  const std::size_t d = e.features.cols();
  if (e.features.rows() != e.labels.size()) fail(ErrorCode::kShapeMismatch, "features vs labels");
  validate_labels(e.labels, m);

  PrototypeTable table{Matrix(m, d), std::vector<std::size_t>(m, 0)};
  for (std::size_t i = 0; i < e.size(); ++i) {
    const Label y = e.labels[i];
    Vector f = l2_normalize(e.features.row(i));
    auto r = table.prototypes.row(y);
    for (std::size_t k = 0; k < d; ++k) r[k] += f[k];
    ++table.sample_counts[y];
  }
  for (std::size_t id = 0; id < m; ++id) {
    const double inv = 1.0 / static_cast<double>(table.sample_counts[id]);
    for (double& x : table.prototypes.row(id)) x *= inv;
  }
  return table;
}

InformativeSets::InformativeSets(std::size_t num_identities, std::size_t k,
                                 std::vector<Label> table)
    : num_identities_(num_identities), k_(k), table_(std::move(table)) {
  if (table_.size() != num_identities_ * k_) {
    fail(ErrorCode::kShapeMismatch, "informative set table must hold M * K entries");
  }
  std::vector<char> seen(num_identities_, 0);
  for (std::size_t m = 0; m < num_identities_; ++m) {
    auto r = row(m);
    for (Label n : r) {
      if (n >= num_identities_) fail(ErrorCode::kLabelOutOfRange, "informative set entry out of range");
      if (n == m) fail(ErrorCode::kInvalidParams, "H_m must not contain m");
      if (seen[n]) fail(ErrorCode::kInvalidParams, "duplicate entry in H_" + std::to_string(m));
      seen[n] = 1;
    }
    for (Label n : r) seen[n] = 0;
  }
}

InformativeSets build_informative_sets(const PrototypeTable& protos, std::size_t k) {
  const std::size_t m = protos.prototypes.rows();
  if (m == 0 || k > m - 1) {
    fail(ErrorCode::kInsufficientIdentities,
         "k=" + std::to_string(k) + " needs at least " + std::to_string(k + 1) + " identities");
  }
  std::vector<Label> table;
  table.reserve(m * k);
  Vector scores(m);
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = 0; b < m; ++b) {
      scores[b] = b == a ? 0.0 : cosine(protos.prototypes.row(a), protos.prototypes.row(b));
    }
    for (std::size_t idx : topk_indices(scores, k, a)) table.push_back(static_cast<Label>(idx));
  }
  return InformativeSets(m, k, std::move(table));
}

InformativeSets build_random_sets(std::size_t num_identities, std::size_t k, std::uint64_t seed) {
  if (num_identities == 0 || k > num_identities - 1) {
    fail(ErrorCode::kInsufficientIdentities, "random sets need k <= M - 1");
  }
  Rng rng(seed);
  std::vector<Label> table;
  table.reserve(num_identities * k);
  std::vector<Label> others(num_identities - 1);
  for (std::size_t m = 0; m < num_identities; ++m) {
    std::size_t pos = 0;
    for (std::size_t n = 0; n < num_identities; ++n) {
      if (n != m) others[pos++] = static_cast<Label>(n);
    }
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(others.size() - i));
      std::swap(others[i], others[j]);
      table.push_back(others[i]);
    }
  }
  return InformativeSets(num_identities, k, std::move(table));
}

void write_informative_sets(const std::filesystem::path& path, const InformativeSets& sets) {
  binary::Writer w;
  w.magic("CFHS");
  w.u32(kInformativeSetsFormatVersion);
  w.u32(static_cast<std::uint32_t>(sets.num_identities()));
  w.u32(static_cast<std::uint32_t>(sets.k()));
  for (Label n : sets.table()) w.u32(n);
  binary::write_file_atomic(path, w.bytes());
}

InformativeSets read_informative_sets(const std::filesystem::path& path) {
  binary::Reader r(binary::read_file(path));
  r.expect_magic("CFHS");
  r.expect_version(kInformativeSetsFormatVersion);
  const std::uint64_t m = r.u32();
  const std::uint64_t k = r.u32();
  r.require(4 * m * k);
  std::vector<Label> table(m * k);
  for (auto& n : table) n = r.u32();
  return InformativeSets(m, k, std::move(table));
}

FeatureBank FeatureBank::init(const EmbeddingMatrix& e, std::uint64_t seed) {
  validate_labels(e.labels, e.num_identities);
  std::vector<std::vector<std::size_t>> members(e.num_identities);
  for (std::size_t i = 0; i < e.size(); ++i) members[e.labels[i]].push_back(i);

  Rng rng(seed);
  FeatureBank bank;
  bank.bank_ = Matrix(e.num_identities, e.features.cols());
  for (std::size_t m = 0; m < e.num_identities; ++m) {
    const auto& idx = members[m];
    const std::size_t pick = idx[rng.uniform_index(idx.size())];
    bank.bank_.set_row(m, e.features.row(pick));
  }
  bank.initialized_ = true;
  return bank;
}

void FeatureBank::update(const Matrix& batch_features, std::span<const Label> labels) {
  if (!initialized_) fail(ErrorCode::kUninitializedBank, "feature bank used before init");
  if (batch_features.rows() != labels.size() || batch_features.cols() != bank_.cols()) {
    fail(ErrorCode::kShapeMismatch, "bank update batch shape");
  }
  for (Label y : labels) {
    if (y >= bank_.rows()) fail(ErrorCode::kLabelOutOfRange, "bank update label out of range");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) bank_.set_row(labels[i], batch_features.row(i));
}

Matrix FeatureBank::gather(const InformativeSets& sets, Label label) const {
  if (!initialized_) fail(ErrorCode::kUninitializedBank, "feature bank used before init");
  if (label >= sets.num_identities() || label >= bank_.rows()) {
    fail(ErrorCode::kLabelOutOfRange, "gather label out of range");
  }
  auto h = sets.row(label);
  Matrix out(h.size(), bank_.cols());
  for (std::size_t k = 0; k < h.size(); ++k) out.set_row(k, bank_.row(h[k]));
  return out;
}

}  // namespace coupleface
