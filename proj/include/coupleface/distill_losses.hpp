#pragma once

// Distillation objectives. Every loss returns its value and the gradient with
// respect to the student embeddings; teacher embeddings and negatives are
// treated as constants.

#include <span>
#include <string_view>
#include <vector>

#include "coupleface/data_io.hpp"
#include "coupleface/model.hpp"
#include "coupleface/vec_math.hpp"

namespace coupleface {

enum class RadKind {
  kAbsolute,   // mean |SMR - TMR| over all N*K relations
  kValidOnly,  // sum max(SMR - TMR, 0) / N'
  kMargin,     // sum max(SMR - TMR - q, 0) / N'
};

struct RadVariant {
  RadKind kind = RadKind::kMargin;
  double q = 0.03;  // only read for kMargin
};

std::string_view rad_kind_name(RadKind kind);
RadKind parse_rad_kind(std::string_view name);

struct LossReport {
  double value = 0.0;
  Matrix grad_student;
  // Relations that contributed a gradient (N'); zero for kAbsolute.
  std::size_t valid_count = 0;
};

// Per-relation term and its derivative with respect to delta = SMR - TMR.
// Exactly at a kink the derivative is 0 and the term is not counted valid.
struct RadTerm {
  double value;
  double slope;
  bool valid;
};
RadTerm rad_term(const RadVariant& variant, double delta);

// (1/2N) sum_i || t_i/|t_i| - s_i/|s_i| ||^2
LossReport fcd_loss(const Matrix& student, const Matrix& teacher);

// Relations of student row i and teacher row i against every row of
// negatives[i]. Rows of `negatives` may hold different counts; the
// kAbsolute normalizer is the total relation count.
LossReport rad_loss(const RadVariant& variant, const Matrix& student, const Matrix& teacher,
                    std::span<const Matrix> negatives);

// In-batch relations between students: SMR = cos(s_i, s_j), TMR = cos(t_i, t_j)
// over unordered pairs i < j with different labels. Gradient reaches both rows.
LossReport rad_loss_student_pairs(const RadVariant& variant, const Matrix& student,
                                  const Matrix& teacher, std::span<const Label> labels);

// In-batch negatives: row i is related to teacher rows t_j (j != i, different
// label) of the same batch.
LossReport rad_loss_batch_negatives(const RadVariant& variant, const Matrix& student,
                                    const Matrix& teacher, std::span<const Label> labels);

struct CombinedReport {
  LossReport total;  // value and gradient of the weighted sum
  double fcd = 0.0;
  double rad = 0.0;
  double ce = 0.0;
  Matrix grad_head;  // zero-sized when beta == 0
};

// L_fcd + alpha * L_rad + beta * L_ce. The recognition term is evaluated only
// when beta > 0.
CombinedReport combined_loss(const Matrix& student, const Matrix& teacher,
                             std::span<const Matrix> negatives, std::span<const Label> labels,
                             const ArcHead& head, double alpha, double beta,
                             const RadVariant& variant);

}  // namespace coupleface
