#pragma once

// Verification and identification metrics plus the SMR-TMR and similarity
// distribution diagnostics.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coupleface/data_io.hpp"
#include "coupleface/mining.hpp"
#include "coupleface/model.hpp"

namespace coupleface {

struct IndexPair {
  std::uint32_t a = 0;
  std::uint32_t b = 0;  // a < b

  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

struct PairSet {
  std::vector<IndexPair> positives;
  std::vector<IndexPair> negatives;
};

// Samples distinct unordered pairs without replacement. Throws
// InsufficientPairs when fewer candidates exist than requested.
PairSet make_pairs(std::span<const Label> labels, std::size_t n_pos, std::size_t n_neg,
                   std::uint64_t seed);

struct TarResult {
  double tar = 0.0;
  double threshold = 0.0;
};

// Accept iff score >= threshold. The threshold is the smallest value whose
// negative accept fraction does not exceed `far`.
TarResult tar_at_far(std::span<const double> pos_scores, std::span<const double> neg_scores,
                     double far);

// Fraction of probes whose best cosine match over gallery then distractors is
// their own gallery entry. Ties go to the lower index, gallery first.
double rank1_id(const EmbeddingMatrix& probes, const EmbeddingMatrix& gallery,
                const Matrix& distractors);

struct Histogram {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;

  std::size_t total() const;
};

// Equal-width bins over [lo, hi]; values outside land in the end bins.
Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

// Fixed set of training samples used for relation diagnostics.
struct ProbeBatch {
  Matrix inputs;
  Matrix teacher_features;
  std::vector<Label> labels;
};

ProbeBatch make_probe_batch(const LabeledDataset& ds, const EmbeddingMatrix& teacher_features,
                            std::size_t size, std::uint64_t seed);

// SMR - TMR for every (probe, informative negative) couple, probe-major.
std::vector<double> smr_tmr_differences(const MlpModel& student, const ProbeBatch& probe,
                                        const FeatureBank& bank, const InformativeSets& sets);

Histogram smr_tmr_histogram(const MlpModel& student, const ProbeBatch& probe,
                            const FeatureBank& bank, const InformativeSets& sets,
                            std::size_t bins = 20, double lo = -0.5, double hi = 0.5);

struct SimilarityScores {
  std::vector<double> positive;
  std::vector<double> negative;
};

SimilarityScores similarity_distributions(const EmbeddingMatrix& e, const PairSet& pairs);

// One row of the metrics CSV.
struct MetricRow {
  std::string metric;
  std::string operating_point;
  double value = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Shortest round-trip decimal text for a double.
std::string format_number(double value);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);
void write_similarity_csv(const std::filesystem::path& path, const SimilarityScores& scores);

struct EvalProtocol {
  std::size_t n_pos = 5000;
  std::size_t n_neg = 50000;
  std::vector<double> fars{1e-2, 1e-3};
  std::vector<std::size_t> distractor_counts{100, 1000};
  std::uint64_t seed = 0;
};

struct EvalReport {
  std::vector<MetricRow> metrics;
  PairSet pairs;
  SimilarityScores scores;
};

// Verification on sampled pairs of `features` and rank-1 identification with
// the first half of the identities as probe/gallery and samples of the second
// half as distractors.
EvalReport evaluate_embeddings(const EmbeddingMatrix& features, const EvalProtocol& protocol);

}  // namespace coupleface
