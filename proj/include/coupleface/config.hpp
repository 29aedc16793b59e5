#pragma once

// Run configuration: a flat `key = value` text format shared by every CLI
// subcommand. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coupleface/distill_losses.hpp"
#include "coupleface/model.hpp"

namespace coupleface {

enum class RunMode {
  kArcfaceOnly,
  kFcdOnly,
  kCoupleface,
  kCouplefacePlus,
  kAblationA,  // RAD with |SMR - TMR| over all relations
  kAblationB,  // RAD over valid relations, no margin
  kAblationC,  // in-batch student-student relations, no mining
  kAblationD,  // random informative sets
  kAblationE,  // in-batch teacher negatives, no mining
};

std::string_view run_mode_name(RunMode mode);
RunMode parse_run_mode(std::string_view name);

struct LrMilestone {
  std::size_t iter = 0;
  double divisor = 10.0;
};

struct BetaStep {
  std::size_t start_iter = 0;
  double beta = 0.0;
};

struct RunConfig {
  // Files.
  std::string dataset;
  std::string eval_dataset;
  std::string teacher_checkpoint;
  std::string checkpoint;
  std::string mining_embeddings;

  // Synthetic data.
  std::size_t num_identities = 200;
  std::size_t per_identity = 50;
  std::size_t input_dim = 64;
  double noise_sigma = 0.2;
  std::size_t eval_per_identity = 10;  // held out from every identity for evaluation

  // Networks.
  std::vector<std::size_t> teacher_hidden{256, 128};
  std::size_t teacher_embed_dim = 32;
  std::vector<std::size_t> student_hidden{64};
  std::size_t student_embed_dim = 32;
  double arc_scale = 16.0;
  double arc_margin = 0.3;

  // Optimization.
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double teacher_weight_decay = 0.0;
  std::size_t batch_size = 128;
  std::size_t teacher_iters = 2000;
  std::vector<LrMilestone> teacher_lr_milestones{{1000, 10}, {1600, 10}, {1800, 10}};
  std::size_t total_iters = 4000;
  std::vector<LrMilestone> lr_milestones{{1800, 10}, {2800, 10}, {3600, 10}};

  // Distillation.
  RunMode mode = RunMode::kCoupleface;
  std::size_t k = 20;
  RadVariant rad{RadKind::kMargin, 0.03};
  double alpha = 1.0;
  std::vector<BetaStep> beta_schedule{{0, 0.0}};
  std::size_t plus_iters = 4000;
  double plus_beta = 0.01;

  // Diagnostics and evaluation.
  std::size_t probe_size = 512;
  std::size_t hist_bins = 20;
  std::size_t eval_n_pos = 5000;
  std::size_t eval_n_neg = 50000;
  std::vector<double> eval_fars{1e-2, 1e-3};
  std::vector<std::size_t> eval_distractors{100, 1000};

  std::uint64_t seed = 0;

  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  // Every key with its current value, in documentation order.
  std::vector<std::pair<std::string, std::string>> entries() const;

  // Cross-field checks: milestones strictly increasing, alpha/beta >= 0,
  // matching teacher/student embedding dims (DimMismatch).
  void validate() const;

  MlpSpec teacher_spec() const;
  MlpSpec student_spec() const;

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  static const std::vector<std::string>& keys();
};

}  // namespace coupleface
