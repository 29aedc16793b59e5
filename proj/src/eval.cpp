#include "coupleface/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_set>

#include "coupleface/binary_io.hpp"
#include "coupleface/error.hpp"

namespace coupleface {

namespace {

std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

// Uniform k-subset of `items` (order of selection), via partial Fisher-Yates.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> items, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

}  // namespace

PairSet make_pairs(std::span<const Label> labels, std::size_t n_pos, std::size_t n_neg,
                   std::uint64_t seed) {
  const std::size_t n = labels.size();
  std::vector<IndexPair> all_pos;
  for (std::uint32_t a = 0; a < n; ++a) {
    for (std::uint32_t b = a + 1; b < n; ++b) {
      if (labels[a] == labels[b]) all_pos.push_back({a, b});
    }
  }
  const std::uint64_t total_pairs = static_cast<std::uint64_t>(n) * (n > 0 ? n - 1 : 0) / 2;
  const std::uint64_t total_neg = total_pairs - all_pos.size();
  if (n_pos > all_pos.size() || n_neg > total_neg) {
    fail(ErrorCode::kInsufficientPairs,
         "requested " + std::to_string(n_pos) + "/" + std::to_string(n_neg) +
             " pairs, available " + std::to_string(all_pos.size()) + "/" +
             std::to_string(total_neg));
  }

  Rng rng(seed);
  PairSet out;
  out.positives = sample_without_replacement(std::move(all_pos), n_pos, rng);

  if (4 * static_cast<std::uint64_t>(n_neg) >= total_neg) {
    std::vector<IndexPair> all_neg;
    all_neg.reserve(total_neg);
    for (std::uint32_t a = 0; a < n; ++a) {
      for (std::uint32_t b = a + 1; b < n; ++b) {
        if (labels[a] != labels[b]) all_neg.push_back({a, b});
      }
    }
    out.negatives = sample_without_replacement(std::move(all_neg), n_neg, rng);
  } else {
    // Sparse request: rejection-sample uniform unordered cross-label pairs.
    std::unordered_set<std::uint64_t> taken;
    out.negatives.reserve(n_neg);
    while (out.negatives.size() < n_neg) {
      auto a = static_cast<std::uint32_t>(rng.uniform_index(n));
      auto b = static_cast<std::uint32_t>(rng.uniform_index(n));
      if (a == b || labels[a] == labels[b]) continue;
      if (a > b) std::swap(a, b);
      if (!taken.insert(pair_key(a, b)).second) continue;
      out.negatives.push_back({a, b});
    }
  }
  return out;
}

TarResult tar_at_far(std::span<const double> pos_scores, std::span<const double> neg_scores,
                     double far) {
  if (pos_scores.empty() || neg_scores.empty()) {
    fail(ErrorCode::kEmptyScores, "tar_at_far needs positive and negative scores");
  }
  if (!(far > 0.0 && far <= 1.0)) fail(ErrorCode::kInvalidParams, "far must lie in (0, 1]");

  std::vector<double> neg(neg_scores.begin(), neg_scores.end());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  // Number of negatives allowed at or above the threshold.
  const auto allowed = static_cast<std::size_t>(
      std::floor(far * static_cast<double>(neg.size()) * (1.0 + 1e-12)));

  TarResult r;
  if (allowed >= neg.size()) {
    r.threshold = -std::numeric_limits<double>::infinity();
  } else {
    // Anything strictly above the (allowed+1)-th largest negative admits at
    // most `allowed` negatives; the next double up is the smallest such value.
    r.threshold = std::nextafter(neg[allowed], std::numeric_limits<double>::infinity());
  }
  std::size_t accepted = 0;
  for (double s : pos_scores) {
    if (s >= r.threshold) ++accepted;
  }
  r.tar = static_cast<double>(accepted) / static_cast<double>(pos_scores.size());
  return r;
}

double rank1_id(const EmbeddingMatrix& probes, const EmbeddingMatrix& gallery,
                const Matrix& distractors) {
  if (probes.size() == 0) fail(ErrorCode::kEmptyScores, "no probes");
  std::map<Label, std::size_t> gallery_index;
  for (std::size_t g = 0; g < gallery.size(); ++g) gallery_index.emplace(gallery.labels[g], g);

  std::size_t correct = 0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    auto it = gallery_index.find(probes.labels[p]);
    if (it == gallery_index.end()) {
      fail(ErrorCode::kMissingGalleryEntry,
           "probe identity " + std::to_string(probes.labels[p]) + " has no gallery entry");
    }
    auto q = probes.features.row(p);
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_idx = 0;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      double s = cosine(q, gallery.features.row(g));
      if (s > best) {
        best = s;
        best_idx = g;
      }
    }
    for (std::size_t k = 0; k < distractors.rows(); ++k) {
      double s = cosine(q, distractors.row(k));
      if (s > best) {
        best = s;
        best_idx = gallery.size() + k;
      }
    }
    if (best_idx == it->second) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probes.size());
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (std::size_t c : counts) t += c;
  return t;
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  if (bins == 0 || !(hi > lo)) fail(ErrorCode::kInvalidParams, "histogram needs bins >= 1 and hi > lo");
  Histogram h;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i < bins; ++i) h.bin_edges.push_back(lo + width * static_cast<double>(i));
  h.bin_edges.push_back(hi);
  h.counts.assign(bins, 0);
  for (double v : values) {
    double pos = std::floor((v - lo) / width);
    std::size_t idx = 0;
    if (pos >= static_cast<double>(bins)) {
      idx = bins - 1;
    } else if (pos > 0.0) {
      idx = static_cast<std::size_t>(pos);
    }
    ++h.counts[idx];
  }
  return h;
}

ProbeBatch make_probe_batch(const LabeledDataset& ds, const EmbeddingMatrix& teacher_features,
                            std::size_t size, std::uint64_t seed) {
  if (teacher_features.size() != ds.size()) {
    fail(ErrorCode::kShapeMismatch, "teacher features must cover the dataset");
  }
  if (size > ds.size()) fail(ErrorCode::kInvalidParams, "probe batch larger than dataset");
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(seed);
  auto idx = sample_without_replacement(std::move(all), size, rng);
  std::sort(idx.begin(), idx.end());
  ProbeBatch probe{gather_rows(ds.inputs, idx), gather_rows(teacher_features.features, idx), {}};
  for (std::size_t i : idx) probe.labels.push_back(ds.labels[i]);
  return probe;
}

std::vector<double> smr_tmr_differences(const MlpModel& student, const ProbeBatch& probe,
                                        const FeatureBank& bank, const InformativeSets& sets) {
  Matrix s = mlp_embed(student, probe.inputs);
  if (s.cols() != probe.teacher_features.cols()) {
    fail(ErrorCode::kDimMismatch, "student and teacher embedding widths differ");
  }
  std::vector<double> out;
  out.reserve(probe.labels.size() * sets.k());
  for (std::size_t i = 0; i < probe.labels.size(); ++i) {
    Matrix g = bank.gather(sets, probe.labels[i]);
    for (std::size_t k = 0; k < g.rows(); ++k) {
      out.push_back(cosine(s.row(i), g.row(k)) - cosine(probe.teacher_features.row(i), g.row(k)));
    }
  }
  return out;
}

Histogram smr_tmr_histogram(const MlpModel& student, const ProbeBatch& probe,
                            const FeatureBank& bank, const InformativeSets& sets,
                            std::size_t bins, double lo, double hi) {
  return make_histogram(smr_tmr_differences(student, probe, bank, sets), lo, hi, bins);
}

SimilarityScores similarity_distributions(const EmbeddingMatrix& e, const PairSet& pairs) {
  auto score = [&](const IndexPair& p) {
    if (p.a >= e.size() || p.b >= e.size()) fail(ErrorCode::kIndexOutOfRange, "pair index out of range");
    return cosine(e.features.row(p.a), e.features.row(p.b));
  };
  SimilarityScores out;
  out.positive.reserve(pairs.positives.size());
  out.negative.reserve(pairs.negatives.size());
  for (const auto& p : pairs.positives) out.positive.push_back(score(p));
  for (const auto& p : pairs.negatives) out.negative.push_back(score(p));
  return out;
}

std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, end);
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ostringstream out;
  out << "metric,operating_point,value,n_pos,n_neg\n";
  for (const auto& r : rows) {
    out << r.metric << ',' << r.operating_point << ',' << format_number(r.value) << ','
        << r.n_pos << ',' << r.n_neg << '\n';
  }
  binary::write_file_atomic(path, out.str());
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  std::ostringstream out;
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    out << format_number(h.bin_edges[i]) << ',' << format_number(h.bin_edges[i + 1]) << ','
        << h.counts[i] << '\n';
  }
  binary::write_file_atomic(path, out.str());
}

void write_similarity_csv(const std::filesystem::path& path, const SimilarityScores& scores) {
  std::ostringstream out;
  out << "kind,score\n";
  for (double s : scores.positive) out << "pos," << format_number(s) << '\n';
  for (double s : scores.negative) out << "neg," << format_number(s) << '\n';
  binary::write_file_atomic(path, out.str());
}

EvalReport evaluate_embeddings(const EmbeddingMatrix& e, const EvalProtocol& protocol) {
  EvalReport report;
  std::size_t pos_available = 0;
  {
    std::vector<std::size_t> per_id(e.num_identities, 0);
    for (Label y : e.labels) ++per_id[y];
    for (std::size_t c : per_id) pos_available += c * (c > 0 ? c - 1 : 0) / 2;
  }
  const std::uint64_t n = e.size();
  const std::uint64_t neg_available = n * (n > 0 ? n - 1 : 0) / 2 - pos_available;
  const std::size_t n_pos = std::min<std::uint64_t>(protocol.n_pos, pos_available);
  const std::size_t n_neg = std::min<std::uint64_t>(protocol.n_neg, neg_available);

  report.pairs = make_pairs(e.labels, n_pos, n_neg, mix_seed(protocol.seed, 1));
  report.scores = similarity_distributions(e, report.pairs);
  for (double far : protocol.fars) {
    TarResult t = tar_at_far(report.scores.positive, report.scores.negative, far);
    report.metrics.push_back({"tar_at_far", format_number(far), t.tar, n_pos, n_neg});
  }

  // Rank-1: identities [0, M/2) provide gallery (first sample) and probe
  // (second sample); samples of identities [M/2, M) are distractors.
  const std::size_t half = e.num_identities / 2;
  std::vector<std::vector<std::size_t>> members(e.num_identities);
  for (std::size_t i = 0; i < e.size(); ++i) members[e.labels[i]].push_back(i);
  EmbeddingMatrix gallery, probes;
  std::vector<std::size_t> g_idx, p_idx, d_idx;
  for (std::size_t m = 0; m < half; ++m) {
    if (members[m].size() < 2) continue;
    g_idx.push_back(members[m][0]);
    p_idx.push_back(members[m][1]);
  }
  for (std::size_t m = half; m < e.num_identities; ++m) {
    d_idx.insert(d_idx.end(), members[m].begin(), members[m].end());
  }
  if (g_idx.empty()) return report;
  gallery.features = gather_rows(e.features, g_idx);
  probes.features = gather_rows(e.features, p_idx);
  for (std::size_t i : g_idx) gallery.labels.push_back(e.labels[i]);
  for (std::size_t i : p_idx) probes.labels.push_back(e.labels[i]);
  gallery.num_identities = probes.num_identities = e.num_identities;

  Rng rng(mix_seed(protocol.seed, 2));
  for (std::size_t count : protocol.distractor_counts) {
    const std::size_t used = std::min(count, d_idx.size());
    Rng local = rng;
    auto chosen = sample_without_replacement(d_idx, used, local);
    Matrix distractors = gather_rows(e.features, chosen);
    double acc = rank1_id(probes, gallery, distractors);
    report.metrics.push_back({"rank1", std::to_string(used), acc, probes.size(), used});
  }
  return report;
}

}  // namespace coupleface
