#pragma once

// Teacher training, feature extraction and the distillation loop.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "coupleface/config.hpp"
#include "coupleface/data_io.hpp"
#include "coupleface/eval.hpp"
#include "coupleface/mining.hpp"
#include "coupleface/model.hpp"

namespace coupleface {

// initial_lr divided by the divisor of every milestone with iter >= its start.
double lr_at(std::size_t iter, double initial_lr, std::span<const LrMilestone> milestones);

// Beta of the last step whose start_iter <= iter (0 before the first step).
double beta_at(std::size_t iter, std::span<const BetaStep> schedule);

struct TrainRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_fcd = 0.0;
  double loss_rad = 0.0;
  double loss_ce = 0.0;
  std::size_t n_valid = 0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;
};

struct TeacherResult {
  MlpModel model;
  TrainLog log;
};

// ArcFace + momentum SGD on `ds` for cfg.teacher_iters iterations.
TeacherResult train_teacher(const RunConfig& cfg, const LabeledDataset& ds);

// Row i is the model's embedding of sample i. Rows are split across
// `workers` threads; the result does not depend on the split.
EmbeddingMatrix extract_features(const MlpModel& model, const LabeledDataset& ds,
                                 std::size_t workers = 1);

// Mean of max(SMR - TMR - q, 0) and fraction of couples with SMR - TMR > q.
struct ProbeStats {
  double mean_excess = 0.0;
  double fraction_above_margin = 0.0;
  std::size_t couples = 0;
};

ProbeStats probe_stats(std::span<const double> differences, double q);

struct DistillResult {
  MlpModel student;
  TrainLog log;
  InformativeSets sets;
  FeatureBank bank;
  ProbeBatch probe;
  ProbeStats probe_initial;
  ProbeStats probe_final;
  Histogram histogram;
  // Iteration at which the LR schedule restarts (coupleface_plus only).
  std::optional<std::size_t> lr_restart_iter;
};

// Runs the preamble (teacher features, prototypes, informative sets, bank)
// and the per-iteration loop for cfg.mode. `mining_features`, when given,
// replaces the teacher features for building the informative sets.
DistillResult distill(const RunConfig& cfg, const MlpModel& teacher, const LabeledDataset& ds,
                      const EmbeddingMatrix* mining_features = nullptr);

// Number of worker threads from COUPLEFACE_THREADS (default 1).
std::size_t worker_count();

}  // namespace coupleface
