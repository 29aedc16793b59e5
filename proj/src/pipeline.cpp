#include "coupleface/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "coupleface/binary_io.hpp"
#include "coupleface/distill_losses.hpp"
#include "coupleface/error.hpp"

namespace coupleface {

namespace {

// Stream salts so that every random consumer draws from its own sequence.
enum Salt : std::uint64_t {
  kTeacherInit = 101,
  kTeacherHead = 102,
  kTeacherBatches = 103,
  kStudentInit = 201,
  kStudentHead = 202,
  kStudentBatches = 203,
  kBankInit = 301,
  kRandomSets = 302,
  kProbe = 303,
};

void require_finite(double value, std::size_t iter, const char* what) {
  if (!std::isfinite(value)) {
    fail(ErrorCode::kNumericalFailure,
         std::string(what) + " loss is not finite at iteration " + std::to_string(iter));
  }
}

void add_scaled(Matrix& dst, const Matrix& src, double w) {
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t k = 0; k < d.size(); ++k) d[k] += w * s[k];
}

}  // namespace

double lr_at(std::size_t iter, double initial_lr, std::span<const LrMilestone> milestones) {
  double divisor = 1.0;
  for (const auto& m : milestones) {
    if (iter >= m.iter) divisor *= m.divisor;
  }
  return initial_lr / divisor;
}

double beta_at(std::size_t iter, std::span<const BetaStep> schedule) {
  double beta = 0.0;
  for (const auto& s : schedule) {
    if (iter >= s.start_iter) beta = s.beta;
  }
  return beta;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "iter,lr,loss_total,loss_fcd,loss_rad,loss_ce,n_valid\n";
  for (const auto& r : records) {
    out << r.iter << ',' << format_number(r.lr) << ',' << format_number(r.loss_total) << ','
        << format_number(r.loss_fcd) << ',' << format_number(r.loss_rad) << ','
        << format_number(r.loss_ce) << ',' << r.n_valid << '\n';
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  binary::write_file_atomic(path, to_csv());
}

std::size_t worker_count() {
  const char* env = std::getenv("COUPLEFACE_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  long n = std::strtol(env, &end, 10);
  if (end == env || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

TeacherResult train_teacher(const RunConfig& cfg, const LabeledDataset& ds) {
  cfg.validate();
  MlpSpec spec = cfg.teacher_spec();
  spec.input_dim = ds.inputs.cols();
  validate_labels(ds.labels, ds.num_identities);

  TeacherResult out{mlp_init(spec, mix_seed(cfg.seed, kTeacherInit)), {}};
  ArcHead head = arc_head_init(ds.num_identities, spec.embed_dim, cfg.arc_scale, cfg.arc_margin,
                               mix_seed(cfg.seed, kTeacherHead));
  SgdOptimizer opt(cfg.momentum, cfg.teacher_weight_decay);
  BatchIterator batches(ds.size(), cfg.batch_size, mix_seed(cfg.seed, kTeacherBatches));

  out.log.records.reserve(cfg.teacher_iters);
  for (std::size_t it = 0; it < cfg.teacher_iters; ++it) {
    const double lr = lr_at(it, cfg.lr, cfg.teacher_lr_milestones);
    const auto& idx = batches.next();
    Matrix x = gather_rows(ds.inputs, idx);
    std::vector<Label> labels;
    labels.reserve(idx.size());
    for (std::size_t i : idx) labels.push_back(ds.labels[i]);

    ForwardResult fwd = mlp_forward(out.model, x);
    ArcFaceResult ce = arcface_loss(fwd.embeddings, labels, head);
    require_finite(ce.loss, it, "teacher ArcFace");
    GradientSet grads = mlp_backward(out.model, fwd.cache, ce.grad_embeddings);
    opt.step(out.model, grads, lr);
    opt.step(head, ce.grad_class_weights, lr);
    out.log.records.push_back({it, lr, ce.loss, 0.0, 0.0, ce.loss, 0});
  }
  if (!out.model.all_finite()) fail(ErrorCode::kNumericalFailure, "teacher parameters diverged");
  return out;
}

EmbeddingMatrix extract_features(const MlpModel& model, const LabeledDataset& ds,
                                 std::size_t workers) {
  if (ds.inputs.cols() != model.spec().input_dim) {
    fail(ErrorCode::kShapeMismatch, "dataset input width does not match the model");
  }
  const std::size_t n = ds.size();
  EmbeddingMatrix out{Matrix(n, model.spec().embed_dim), ds.labels, ds.num_identities};
  workers = std::max<std::size_t>(1, std::min(workers, n));

  auto run_chunk = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    Matrix emb = mlp_embed(model, gather_rows(ds.inputs, idx));
    for (std::size_t i = begin; i < end; ++i) out.features.set_row(i, emb.row(i - begin));
  };

  if (workers == 1) {
    if (n > 0) run_chunk(0, n);
    return out;
  }
  std::vector<std::thread> threads;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back(run_chunk, begin, end);
  }
  for (auto& t : threads) t.join();
  return out;
}

ProbeStats probe_stats(std::span<const double> differences, double q) {
  ProbeStats s;
  s.couples = differences.size();
  if (differences.empty()) return s;
  std::size_t above = 0;
  for (double d : differences) {
    s.mean_excess += std::max(d - q, 0.0);
    if (d > q) ++above;
  }
  s.mean_excess /= static_cast<double>(differences.size());
  s.fraction_above_margin = static_cast<double>(above) / static_cast<double>(differences.size());
  return s;
}

DistillResult distill(const RunConfig& cfg, const MlpModel& teacher, const LabeledDataset& ds,
                      const EmbeddingMatrix* mining_features) {
  cfg.validate();
  MlpSpec student_spec = cfg.student_spec();
  student_spec.input_dim = ds.inputs.cols();
  if (teacher.spec().embed_dim != student_spec.embed_dim) {
    fail(ErrorCode::kDimMismatch, "teacher embed_dim " + std::to_string(teacher.spec().embed_dim) +
                                      " != student embed_dim " +
                                      std::to_string(student_spec.embed_dim));
  }
  if (teacher.spec().input_dim != ds.inputs.cols()) {
    fail(ErrorCode::kShapeMismatch, "teacher input_dim does not match the dataset");
  }
  validate_labels(ds.labels, ds.num_identities);
  const RunMode mode = cfg.mode;

  // Preamble: teacher features, prototypes, informative sets, bank.
  EmbeddingMatrix teacher_features = extract_features(teacher, ds, worker_count());
  DistillResult res;
  if (mode == RunMode::kAblationD) {
    res.sets = build_random_sets(ds.num_identities, cfg.k, mix_seed(cfg.seed, kRandomSets));
  } else {
    const EmbeddingMatrix& mining = mining_features ? *mining_features : teacher_features;
    if (mining.num_identities != ds.num_identities) {
      fail(ErrorCode::kDimMismatch, "mining embeddings cover a different identity count");
    }
    res.sets = build_informative_sets(compute_prototypes(mining), cfg.k);
  }
  res.bank = FeatureBank::init(teacher_features, mix_seed(cfg.seed, kBankInit));
  res.probe = make_probe_batch(ds, teacher_features, std::min(cfg.probe_size, ds.size()),
                               mix_seed(cfg.seed, kProbe));

  res.student = mlp_init(student_spec, mix_seed(cfg.seed, kStudentInit));
  ArcHead head = arc_head_init(ds.num_identities, student_spec.embed_dim, cfg.arc_scale,
                               cfg.arc_margin, mix_seed(cfg.seed, kStudentHead));
  SgdOptimizer opt(cfg.momentum, cfg.weight_decay);
  BatchIterator batches(ds.size(), cfg.batch_size, mix_seed(cfg.seed, kStudentBatches));

  res.probe_initial = probe_stats(smr_tmr_differences(res.student, res.probe, res.bank, res.sets),
                                  cfg.rad.q);

  RadVariant variant = cfg.rad;
  if (mode == RunMode::kAblationA) variant.kind = RadKind::kAbsolute;
  if (mode == RunMode::kAblationB) variant.kind = RadKind::kValidOnly;

  const bool use_fcd = mode != RunMode::kArcfaceOnly;
  const double alpha =
      (mode == RunMode::kArcfaceOnly || mode == RunMode::kFcdOnly) ? 0.0 : cfg.alpha;
  std::vector<BetaStep> beta_schedule = cfg.beta_schedule;
  std::size_t total_iters = cfg.total_iters;
  if (mode == RunMode::kCouplefacePlus) {
    beta_schedule.push_back({cfg.total_iters, cfg.plus_beta});
    std::sort(beta_schedule.begin(), beta_schedule.end(),
              [](const BetaStep& a, const BetaStep& b) { return a.start_iter < b.start_iter; });
    total_iters += cfg.plus_iters;
    res.lr_restart_iter = cfg.total_iters;
  }

  res.log.records.reserve(total_iters);
  for (std::size_t it = 0; it < total_iters; ++it) {
    const std::size_t schedule_iter =
        (res.lr_restart_iter && it >= *res.lr_restart_iter) ? it - *res.lr_restart_iter : it;
    const double lr = lr_at(schedule_iter, cfg.lr, cfg.lr_milestones);
    const double beta = mode == RunMode::kArcfaceOnly ? 1.0 : beta_at(it, beta_schedule);

    const auto& idx = batches.next();
    Matrix x = gather_rows(ds.inputs, idx);
    Matrix t = gather_rows(teacher_features.features, idx);
    std::vector<Label> labels;
    labels.reserve(idx.size());
    for (std::size_t i : idx) labels.push_back(ds.labels[i]);

    ForwardResult fwd = mlp_forward(res.student, x);
    const Matrix& s = fwd.embeddings;

    // Bank update precedes negative gathering within an iteration.
    res.bank.update(t, labels);

    TrainRecord rec{it, lr, 0.0, 0.0, 0.0, 0.0, 0};
    Matrix grad(s.rows(), s.cols());
    Matrix grad_head;
    const bool mined = mode == RunMode::kFcdOnly || mode == RunMode::kCoupleface ||
                       mode == RunMode::kCouplefacePlus || mode == RunMode::kAblationA ||
                       mode == RunMode::kAblationB || mode == RunMode::kAblationD;
    if (mined) {
      std::vector<Matrix> negatives;
      if (alpha > 0.0) {
        negatives.reserve(labels.size());
        for (Label y : labels) negatives.push_back(res.bank.gather(res.sets, y));
      }
      CombinedReport c = combined_loss(s, t, negatives, labels, head, alpha, beta, variant);
      rec.loss_fcd = c.fcd;
      rec.loss_rad = c.rad;
      rec.loss_ce = c.ce;
      rec.loss_total = c.total.value;
      rec.n_valid = c.total.valid_count;
      grad = std::move(c.total.grad_student);
      grad_head = std::move(c.grad_head);
    } else {
      if (use_fcd) {
        LossReport f = fcd_loss(s, t);
        rec.loss_fcd = f.value;
        add_scaled(grad, f.grad_student, 1.0);
      }
      if (alpha > 0.0) {
        LossReport r = mode == RunMode::kAblationC ? rad_loss_student_pairs(variant, s, t, labels)
                                                   : rad_loss_batch_negatives(variant, s, t, labels);
        rec.loss_rad = r.value;
        rec.n_valid = r.valid_count;
        add_scaled(grad, r.grad_student, alpha);
      }
      if (beta > 0.0) {
        ArcFaceResult ce = arcface_loss(s, labels, head);
        rec.loss_ce = ce.loss;
        add_scaled(grad, ce.grad_embeddings, beta);
        grad_head = std::move(ce.grad_class_weights);
        for (double& g : grad_head.flat()) g *= beta;
      }
      rec.loss_total = rec.loss_fcd + alpha * rec.loss_rad + beta * rec.loss_ce;
    }
    require_finite(rec.loss_total, it, "distillation");

    GradientSet grads = mlp_backward(res.student, fwd.cache, grad);
    opt.step(res.student, grads, lr);
    if (!grad_head.empty()) opt.step(head, grad_head, lr);
    res.log.records.push_back(rec);
  }
  if (!res.student.all_finite()) fail(ErrorCode::kNumericalFailure, "student parameters diverged");

  auto diffs = smr_tmr_differences(res.student, res.probe, res.bank, res.sets);
  res.probe_final = probe_stats(diffs, cfg.rad.q);
  res.histogram = make_histogram(diffs, -0.5, 0.5, cfg.hist_bins);
  return res;
}

}  // namespace coupleface
