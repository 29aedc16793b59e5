#include "coupleface/distill_losses.hpp"

#include <cmath>
#include <string>

#include "coupleface/error.hpp"

namespace coupleface {

std::string_view rad_kind_name(RadKind kind) {
  switch (kind) {
    case RadKind::kAbsolute: return "absolute";
    case RadKind::kValidOnly: return "valid_only";
    case RadKind::kMargin: return "margin";
  }
  return "margin";
}

RadKind parse_rad_kind(std::string_view name) {
  if (name == "absolute") return RadKind::kAbsolute;
  if (name == "valid_only") return RadKind::kValidOnly;
  if (name == "margin") return RadKind::kMargin;
  fail(ErrorCode::kConfigError, "unknown rad variant '" + std::string(name) + "'");
}

RadTerm rad_term(const RadVariant& variant, double delta) {
  switch (variant.kind) {
    case RadKind::kAbsolute:
      return {std::abs(delta), delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0), false};
    case RadKind::kValidOnly:
      if (delta > 0.0) return {delta, 1.0, true};
      return {0.0, 0.0, false};
    case RadKind::kMargin: {
      const double shifted = delta - variant.q;
      if (shifted > 0.0) return {shifted, 1.0, true};
      return {0.0, 0.0, false};
    }
  }
  return {0.0, 0.0, false};
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kShapeMismatch, std::string(what) + ": student and teacher shapes differ");
  }
}

void check_variant(const RadVariant& v) {
  if (!(v.q >= 0.0)) fail(ErrorCode::kInvalidParams, "RAD margin q must be >= 0");
}

// Accumulates hinge terms and scales the gradient at the end, since the
// normalizer N' is only known after every relation has been seen.
class RadAccumulator {
 public:
  RadAccumulator(const RadVariant& variant, std::size_t rows, std::size_t cols)
      : variant_(variant), grad_(rows, cols) {}

  // One relation: SMR = cos(student_row, anchor), TMR given. Returns the
  // slope so callers can propagate into other rows too.
  double add(double smr, double tmr) {
    RadTerm t = rad_term(variant_, smr - tmr);
    sum_ += t.value;
    ++terms_;
    if (t.valid) ++valid_;
    return t.slope;
  }

  void add_grad(std::size_t row, double slope, std::span<const double> student,
                std::span<const double> anchor) {
    if (slope == 0.0) return;
    Vector g = cosine_grad_lhs(student, anchor);
    auto out = grad_.row(row);
    for (std::size_t k = 0; k < g.size(); ++k) out[k] += slope * g[k];
  }

  LossReport finish() {
    LossReport r;
    r.grad_student = std::move(grad_);
    double denom = 0.0;
    if (variant_.kind == RadKind::kAbsolute) {
      denom = static_cast<double>(terms_);
    } else {
      denom = static_cast<double>(valid_);
      r.valid_count = valid_;
    }
    if (denom == 0.0) {
      for (double& x : r.grad_student.flat()) x = 0.0;
      return r;
    }
    r.value = sum_ / denom;
    for (double& x : r.grad_student.flat()) x /= denom;
    return r;
  }

 private:
  RadVariant variant_;
  Matrix grad_;
  double sum_ = 0.0;
  std::size_t terms_ = 0;
  std::size_t valid_ = 0;
};

}  // namespace

LossReport fcd_loss(const Matrix& student, const Matrix& teacher) {
  check_same_shape(student, teacher, "fcd_loss");
  const std::size_t n = student.rows();
  const std::size_t d = student.cols();
  LossReport r{0.0, Matrix(n, d), 0};
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector t_hat = l2_normalize(teacher.row(i));
    auto s = student.row(i);
    const double s_norm = l2_norm(s);
    if (!(s_norm > kNormEpsilon)) fail(ErrorCode::kZeroVector, "zero student row");
    Vector diff(d);  // s_hat - t_hat
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      diff[k] = s[k] / s_norm - t_hat[k];
      sq += diff[k] * diff[k];
    }
    r.value += 0.5 * inv_n * sq;
    // d/ds of (1/2N)|s_hat - t_hat|^2 = (1/N) (I - s_hat s_hat^T) diff / |s|
    double proj = 0.0;
    for (std::size_t k = 0; k < d; ++k) proj += (s[k] / s_norm) * diff[k];
    auto g = r.grad_student.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      g[k] = inv_n * (diff[k] - proj * s[k] / s_norm) / s_norm;
    }
  }
  return r;
}

LossReport rad_loss(const RadVariant& variant, const Matrix& student, const Matrix& teacher,
                    std::span<const Matrix> negatives) {
  check_variant(variant);
  check_same_shape(student, teacher, "rad_loss");
  if (negatives.size() != student.rows()) {
    fail(ErrorCode::kShapeMismatch, "rad_loss: need one negative group per row");
  }
  RadAccumulator acc(variant, student.rows(), student.cols());
  for (std::size_t i = 0; i < student.rows(); ++i) {
    const Matrix& g = negatives[i];
    if (g.rows() > 0 && g.cols() != student.cols()) {
      fail(ErrorCode::kShapeMismatch, "rad_loss: negative width differs from embedding width");
    }
    auto s = student.row(i);
    auto t = teacher.row(i);
    for (std::size_t k = 0; k < g.rows(); ++k) {
      const double slope = acc.add(cosine(s, g.row(k)), cosine(t, g.row(k)));
      acc.add_grad(i, slope, s, g.row(k));
    }
  }
  return acc.finish();
}

LossReport rad_loss_student_pairs(const RadVariant& variant, const Matrix& student,
                                  const Matrix& teacher, std::span<const Label> labels) {
  check_variant(variant);
  check_same_shape(student, teacher, "rad_loss_student_pairs");
  if (labels.size() != student.rows()) fail(ErrorCode::kShapeMismatch, "label count");
  RadAccumulator acc(variant, student.rows(), student.cols());
  for (std::size_t i = 0; i < student.rows(); ++i) {
    for (std::size_t j = i + 1; j < student.rows(); ++j) {
      if (labels[i] == labels[j]) continue;
      auto si = student.row(i);
      auto sj = student.row(j);
      const double slope = acc.add(cosine(si, sj), cosine(teacher.row(i), teacher.row(j)));
      acc.add_grad(i, slope, si, sj);
      acc.add_grad(j, slope, sj, si);
    }
  }
  return acc.finish();
}

LossReport rad_loss_batch_negatives(const RadVariant& variant, const Matrix& student,
                                    const Matrix& teacher, std::span<const Label> labels) {
  check_same_shape(student, teacher, "rad_loss_batch_negatives");
  if (labels.size() != student.rows()) fail(ErrorCode::kShapeMismatch, "label count");
  std::vector<Matrix> negatives;
  negatives.reserve(student.rows());
  for (std::size_t i = 0; i < student.rows(); ++i) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < student.rows(); ++j) {
      if (j != i && labels[j] != labels[i]) idx.push_back(j);
    }
    negatives.push_back(gather_rows(teacher, idx));
  }
  return rad_loss(variant, student, teacher, negatives);
}

CombinedReport combined_loss(const Matrix& student, const Matrix& teacher,
                             std::span<const Matrix> negatives, std::span<const Label> labels,
                             const ArcHead& head, double alpha, double beta,
                             const RadVariant& variant) {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    fail(ErrorCode::kInvalidParams, "loss weights must be >= 0");
  }
  CombinedReport out;
  LossReport fcd = fcd_loss(student, teacher);
  out.fcd = fcd.value;
  out.total = std::move(fcd);
  out.total.valid_count = 0;

  if (alpha > 0.0) {
    LossReport rad = rad_loss(variant, student, teacher, negatives);
    out.rad = rad.value;
    out.total.valid_count = rad.valid_count;
    auto g = out.total.grad_student.flat();
    auto gr = rad.grad_student.flat();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += alpha * gr[k];
  }
  if (beta > 0.0) {
    ArcFaceResult ce = arcface_loss(student, labels, head);
    out.ce = ce.loss;
    auto g = out.total.grad_student.flat();
    auto gc = ce.grad_embeddings.flat();
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += beta * gc[k];
    out.grad_head = std::move(ce.grad_class_weights);
    for (double& x : out.grad_head.flat()) x *= beta;
  }
  out.total.value = out.fcd + alpha * out.rad + beta * out.ce;
  return out;
}

}  // namespace coupleface
